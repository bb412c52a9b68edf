#pragma once

// Dense row-major tensor of 64-bit floats. The single numeric carrier for the
// whole library; matrix kernels are delegated to Eigen maps over the flat
// storage.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynamarl {

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel_of(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw std::invalid_argument("Tensor: shape " + shape_string(shape_) +
                                  " does not match data length " +
                                  std::to_string(data_.size()));
    }
  }

  static Tensor zeros(std::vector<int> shape) {
    std::vector<double> d(static_cast<std::size_t>(numel_of(shape)), 0.0);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor full(std::vector<int> shape, double v) {
    std::vector<double> d(static_cast<std::size_t>(numel_of(shape)), v);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }

  static Tensor vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }

  // Row/column view of the trailing two axes; rank-1 tensors count as one row.
  std::int64_t rows() const {
    if (rank() <= 1) return rank() == 0 ? 0 : 1;
    return numel() / shape_.back();
  }
  std::int64_t cols() const {
    if (rank() == 0) return 0;
    return shape_.back();
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at2(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double at2(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim in shape " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline ConstMatMap mat_view(const Tensor& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return ConstMatMap(t.data() + offset, rows, cols);
}

inline MatMap mat_view(Tensor& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return MatMap(t.data() + offset, rows, cols);
}

// C (+)= op(A) * op(B) for one 2-D block.
inline void gemm_block(const double* a, std::int64_t am, std::int64_t an, bool ta,
                       const double* b, std::int64_t bm, std::int64_t bn, bool tb,
                       double* c, bool accumulate) {
  ConstMatMap A(a, am, an);
  ConstMatMap B(b, bm, bn);
  const std::int64_t m = ta ? an : am;
  const std::int64_t n = tb ? bm : bn;
  MatMap C(c, m, n);
  if (!ta && !tb) {
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (ta && !tb) {
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else if (!ta && tb) {
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else {
    if (accumulate) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
  }
}

inline std::uint64_t fnv1a_bytes(const void* p, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t checksum(const Tensor& t) {
  return fnv1a_bytes(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
}

}  // namespace dynamarl
