#pragma once

// Named parameter storage. Every tensor in a model lives here under a stable
// string name; the map ordering gives deterministic iteration for checkpoints,
// polyak updates, and optimizer sweeps. Adam state is carried per parameter so
// a checkpoint can capture optimizer momenta exactly.

#include "dynamarl/adam.hpp"
#include "dynamarl/tensor.hpp"

#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace dynamarl {

struct Param {
  Tensor value;
  bool trainable = true;
  AdamState adam;
};

class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor init, bool trainable = true) {
    auto [it, inserted] = params_.emplace(name, Param{std::move(init), trainable, {}});
    if (!inserted) throw std::invalid_argument("ParameterStore: duplicate name " + name);
    return it->second.value;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second;
  }

  std::size_t size() const { return params_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& [k, v] : params_) n += v.value.numel();
    return n;
  }

  std::uint64_t checksum_all() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& [k, v] : params_) {
      h = fnv1a_bytes(k.data(), k.size(), h);
      h = fnv1a_bytes(v.value.data(), static_cast<std::size_t>(v.value.numel()) * sizeof(double), h);
    }
    return h;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

// target <- (1-tau)*target + tau*online for every matched name. Restricting to
// `only` (when non-null) supports phases where most of the model is frozen.
inline void polyak_update(ParameterStore& target, const ParameterStore& online, double tau,
                          const std::set<std::string>* only = nullptr) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("polyak_update: tau out of [0,1]");
  for (auto& [name, tp] : target) {
    if (only && !only->count(name)) continue;
    const Param& op = online.at(name);
    if (!tp.value.same_shape(op.value))
      throw std::invalid_argument("polyak_update: shape mismatch for " + name);
    if (tau == 0.0) continue;
    if (tau == 1.0) {
      tp.value = op.value;
      continue;
    }
    for (std::int64_t i = 0; i < tp.value.numel(); ++i)
      tp.value[i] = (1.0 - tau) * tp.value[i] + tau * op.value[i];
  }
}

}  // namespace dynamarl
