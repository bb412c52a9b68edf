#pragma once

// Adam with bias correction. State is kept per parameter tensor and is part
// of the checkpoint payload, so fields are plain and serializable.

#include "dynamarl/tensor.hpp"

#include <stdexcept>

namespace dynamarl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;  // first moment
  Tensor v;  // second moment
  std::int64_t t = 0;

  void reset(const std::vector<int>& shape) {
    m = Tensor::zeros(shape);
    v = Tensor::zeros(shape);
    t = 0;
  }
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& st, const AdamConfig& cfg) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam_step: param shape " + Tensor::shape_string(param.shape()) +
                                " vs grad shape " + Tensor::shape_string(grad.shape()));
  if (!grad.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
  if (st.m.empty()) st.reset(param.shape());
  st.t += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / b1t;
    const double vhat = st.v[i] / b2t;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace dynamarl
