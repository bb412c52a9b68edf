#pragma once

// Central finite-difference verification of reverse-mode gradients. `build`
// receives a fresh graph plus leaf ids for each parameter tensor and must
// return a scalar loss node. Returns the worst relative error across every
// parameter element.

#include "dynamarl/graph.hpp"

#include <functional>

namespace dynamarl {

using GraphBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

inline double eval_loss(const GraphBuilder& build, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(g.leaf(p, false));
  const NodeId loss = build(g, ids);
  if (g.value(loss).numel() != 1) throw std::invalid_argument("grad_check: builder must return a scalar loss");
  return g.value(loss)[0];
}

// `floor` bounds the relative-error denominator away from zero. It must sit
// above the cancellation noise of the central difference, which is about
// machine-eps * |loss| / eps: deep composite losses with |loss| ~ 1 need a
// higher floor than single primitives, else near-zero gradients are compared
// against pure roundoff.
inline double grad_check(const GraphBuilder& build, std::vector<Tensor> params, double eps = 1e-6,
                         double floor = 1e-8) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(params.size());
  for (const Tensor& p : params) ids.push_back(g.leaf(p, true));
  const NodeId loss = build(g, ids);
  auto grads = g.backward(loss);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& analytic = grads[static_cast<std::size_t>(ids[pi])];
    for (std::int64_t i = 0; i < params[pi].numel(); ++i) {
      const double saved = params[pi][i];
      params[pi][i] = saved + eps;
      const double up = eval_loss(build, params);
      params[pi][i] = saved - eps;
      const double dn = eval_loss(build, params);
      params[pi][i] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace dynamarl
