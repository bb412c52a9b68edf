#pragma once

// Splittable counter-based PRNG. Every stochastic operation in the library
// takes an explicit stream; streams are derived by name so runs are
// reproducible bit-for-bit from a single seed regardless of call order
// elsewhere in the program.

#include "dynamarl/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace dynamarl {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  RngStream() : base_(0), state_(0) {}
  explicit RngStream(std::uint64_t seed) : base_(seed), state_(seed) {}

  // Child stream whose sequence depends only on (base, name), not on how much
  // of this stream has been consumed.
  RngStream split(std::string_view name) const {
    std::uint64_t h = fnv1a_bytes(name.data(), name.size(), base_ ^ 0xa5a5a5a5deadbeefull);
    return RngStream(h);
  }

  RngStream split(std::string_view name, std::uint64_t index) const {
    RngStream s = split(name);
    std::uint64_t mixed = s.base_ ^ (index * 0x9e3779b97f4a7c15ull + 0x7f4a7c15u);
    std::uint64_t tmp = mixed;
    return RngStream(splitmix64(tmp));
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller without caching so the stream state is a single word.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
    return -std::log(-std::log(u));
  }

  Tensor uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  Tensor gaussian_tensor(std::vector<int> shape, double sigma) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = sigma * gaussian();
    return t;
  }

  Tensor gumbel_tensor(std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = gumbel();
    return t;
  }

  std::uint64_t base() const { return base_; }
  std::uint64_t state() const { return state_; }
  void restore(std::uint64_t base, std::uint64_t state) {
    base_ = base;
    state_ = state;
  }

 private:
  std::uint64_t base_;
  std::uint64_t state_;
};

}  // namespace dynamarl
