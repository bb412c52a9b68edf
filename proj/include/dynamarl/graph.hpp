#pragma once

// Define-by-run reverse-mode differentiation. A Graph is the tape: every
// primitive appends one record (op id, input node ids, output node id, and the
// closure holding whatever forward values its backward rule needs). The tape
// is rebuilt per forward pass, so rosters of any size produce valid graphs.
//
// matmul accepts an optional group count: with groups=G the operands are read
// as G stacked [m x k] / [k x n] blocks and multiplied blockwise, which is how
// per-agent attention scores are batched without adding a rank-3 layout.

#include "dynamarl/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dynamarl {

using NodeId = std::int32_t;

enum class OpKind {
  MatMul,
  Add,
  Sub,
  Mul,
  ScalarMul,
  Concat,
  Slice,
  Relu,
  Tanh,
  Softmax,
  Mean,
  Sum,
  SquaredError,
  GatherRows,
  MinElem,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softmax: return "softmax";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::SquaredError: return "squared_error";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::MinElem: return "min_elem";
  }
  return "?";
}

class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = true) {
    return push_node(std::move(value), requires_grad);
  }

  NodeId constant(Tensor value) { return push_node(std::move(value), false); }

  const Tensor& value(NodeId id) const { return values_[static_cast<std::size_t>(id)]; }
  bool requires_grad(NodeId id) const { return grad_flags_[static_cast<std::size_t>(id)] != 0; }
  std::size_t num_nodes() const { return values_.size(); }
  std::size_t num_records() const { return records_.size(); }

  // ---- primitives ---------------------------------------------------------

  NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false, int groups = 1) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || groups < 1)
      fail(OpKind::MatMul, {a, b}, "expects two rank-2 tensors");
    const std::int64_t ar = A.dim(0), ac = A.dim(1);
    const std::int64_t br = B.dim(0), bc = B.dim(1);
    if (ar % groups != 0 || br % groups != 0)
      fail(OpKind::MatMul, {a, b}, "rows not divisible by group count " + std::to_string(groups));
    const std::int64_t agr = ar / groups, bgr = br / groups;
    const std::int64_t m = ta ? ac : agr;
    const std::int64_t ka = ta ? agr : ac;
    const std::int64_t kb = tb ? bc : bgr;
    const std::int64_t n = tb ? bgr : bc;
    if (ka != kb) fail(OpKind::MatMul, {a, b}, "inner dimensions disagree");
    Tensor out = Tensor::zeros({static_cast<int>(groups * m), static_cast<int>(n)});
    for (int g = 0; g < groups; ++g) {
      gemm_block(A.data() + g * agr * ac, agr, ac, ta,
                 B.data() + g * bgr * bc, bgr, bc, tb,
                 out.data() + g * m * n, false);
    }
    return record(OpKind::MatMul, {a, b}, std::move(out),
                  [a, b, ta, tb, groups, agr, ac, bgr, bc, m, n](Graph& g, std::vector<Tensor>& grads) {
                    const Tensor& A = g.value(a);
                    const Tensor& B = g.value(b);
                    const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
                    for (int gi = 0; gi < groups; ++gi) {
                      const double* ap = A.data() + gi * agr * ac;
                      const double* bp = B.data() + gi * bgr * bc;
                      const double* dcp = dC.data() + gi * m * n;
                      if (g.requires_grad(a)) {
                        double* dap = g.grad_ref(grads, a).data() + gi * agr * ac;
                        // dA per transpose flag combination
                        if (!ta && !tb) gemm_block(dcp, m, n, false, bp, bgr, bc, true, dap, true);
                        else if (ta && !tb) gemm_block(bp, bgr, bc, false, dcp, m, n, true, dap, true);
                        else if (!ta && tb) gemm_block(dcp, m, n, false, bp, bgr, bc, false, dap, true);
                        else gemm_block(bp, bgr, bc, true, dcp, m, n, true, dap, true);
                      }
                      if (g.requires_grad(b)) {
                        double* dbp = g.grad_ref(grads, b).data() + gi * bgr * bc;
                        if (!ta && !tb) gemm_block(ap, agr, ac, true, dcp, m, n, false, dbp, true);
                        else if (ta && !tb) gemm_block(ap, agr, ac, false, dcp, m, n, false, dbp, true);
                        else if (!ta && tb) gemm_block(dcp, m, n, true, ap, agr, ac, false, dbp, true);
                        else gemm_block(dcp, m, n, true, ap, agr, ac, true, dbp, true);
                      }
                    }
                  });
  }

  // Same shape, or bias form: rank-1 b of length matching a's last axis.
  NodeId add(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.same_shape(B)) {
      Tensor out = A;
      for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += B[i];
      return record(OpKind::Add, {a, b}, std::move(out), [a, b](Graph& g, std::vector<Tensor>& grads) {
        const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
        if (g.requires_grad(a)) accumulate(g.grad_ref(grads, a), dC);
        if (g.requires_grad(b)) accumulate(g.grad_ref(grads, b), dC);
      });
    }
    if (B.rank() == 1 && A.rank() >= 1 && A.shape().back() == B.dim(0)) {
      Tensor out = A;
      const std::int64_t rows = A.rows(), cols = A.cols();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] += B[c];
      return record(OpKind::Add, {a, b}, std::move(out), [a, b, rows, cols](Graph& g, std::vector<Tensor>& grads) {
        const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
        if (g.requires_grad(a)) accumulate(g.grad_ref(grads, a), dC);
        if (g.requires_grad(b)) {
          Tensor& dB = g.grad_ref(grads, b);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c) dB[c] += dC[r * cols + c];
        }
      });
    }
    fail(OpKind::Add, {a, b}, "shapes neither equal nor bias-broadcastable");
    return -1;
  }

  NodeId sub(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) fail(OpKind::Sub, {a, b}, "shape mismatch");
    Tensor out = A;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= B[i];
    return record(OpKind::Sub, {a, b}, std::move(out), [a, b](Graph& g, std::vector<Tensor>& grads) {
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      if (g.requires_grad(a)) accumulate(g.grad_ref(grads, a), dC);
      if (g.requires_grad(b)) {
        Tensor& dB = g.grad_ref(grads, b);
        for (std::int64_t i = 0; i < dC.numel(); ++i) dB[i] -= dC[i];
      }
    });
  }

  // Elementwise product; also accepts b of shape [R,1] against a of shape
  // [R,C] (per-row scaling, used for selector mixing weights).
  NodeId mul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.same_shape(B)) {
      Tensor out = A;
      for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
      return record(OpKind::Mul, {a, b}, std::move(out), [a, b](Graph& g, std::vector<Tensor>& grads) {
        const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
        const Tensor& A = g.value(a);
        const Tensor& B = g.value(b);
        if (g.requires_grad(a)) {
          Tensor& dA = g.grad_ref(grads, a);
          for (std::int64_t i = 0; i < dC.numel(); ++i) dA[i] += dC[i] * B[i];
        }
        if (g.requires_grad(b)) {
          Tensor& dB = g.grad_ref(grads, b);
          for (std::int64_t i = 0; i < dC.numel(); ++i) dB[i] += dC[i] * A[i];
        }
      });
    }
    if (A.rank() == 2 && B.rank() == 2 && B.dim(1) == 1 && A.dim(0) == B.dim(0)) {
      const std::int64_t rows = A.dim(0), cols = A.dim(1);
      Tensor out = A;
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] *= B[r];
      return record(OpKind::Mul, {a, b}, std::move(out), [a, b, rows, cols](Graph& g, std::vector<Tensor>& grads) {
        const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
        const Tensor& A = g.value(a);
        const Tensor& B = g.value(b);
        if (g.requires_grad(a)) {
          Tensor& dA = g.grad_ref(grads, a);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t c = 0; c < cols; ++c) dA[r * cols + c] += dC[r * cols + c] * B[r];
        }
        if (g.requires_grad(b)) {
          Tensor& dB = g.grad_ref(grads, b);
          for (std::int64_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::int64_t c = 0; c < cols; ++c) s += dC[r * cols + c] * A[r * cols + c];
            dB[r] += s;
          }
        }
      });
    }
    fail(OpKind::Mul, {a, b}, "shapes neither equal nor [R,1]-broadcastable");
    return -1;
  }

  NodeId scalar_mul(NodeId a, double c) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return record(OpKind::ScalarMul, {a}, std::move(out), [a, c](Graph& g, std::vector<Tensor>& grads) {
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      if (g.requires_grad(a)) {
        Tensor& dA = g.grad_ref(grads, a);
        for (std::int64_t i = 0; i < dC.numel(); ++i) dA[i] += c * dC[i];
      }
    });
  }

  NodeId concat(const std::vector<NodeId>& ids, int axis) {
    if (ids.empty()) fail(OpKind::Concat, ids, "no inputs");
    const Tensor& first = value(ids[0]);
    const int rank = first.rank();
    if (axis < 0 || axis >= rank) fail(OpKind::Concat, ids, "axis out of range");
    std::vector<int> out_shape = first.shape();
    int axis_total = 0;
    for (NodeId id : ids) {
      const Tensor& t = value(id);
      if (t.rank() != rank) fail(OpKind::Concat, ids, "rank mismatch");
      for (int d = 0; d < rank; ++d)
        if (d != axis && t.dim(d) != first.dim(d)) fail(OpKind::Concat, ids, "dims disagree off-axis");
      axis_total += t.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    Tensor out = Tensor::zeros(out_shape);

    std::int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= first.dim(d);
    // bytes per outer-slab for each input and for the output
    std::vector<std::int64_t> in_slab(ids.size());
    std::int64_t out_slab = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Tensor& t = value(ids[i]);
      std::int64_t s = 1;
      for (int d = axis; d < rank; ++d) s *= t.dim(d);
      in_slab[i] = s;
      out_slab += s;
    }
    std::int64_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Tensor& t = value(ids[i]);
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(t.data() + o * in_slab[i], in_slab[i], out.data() + o * out_slab + off);
      off += in_slab[i];
    }
    return record(OpKind::Concat, ids, std::move(out),
                  [ids, in_slab, out_slab, outer](Graph& g, std::vector<Tensor>& grads) {
                    const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
                    std::int64_t off = 0;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (g.requires_grad(ids[i])) {
                        Tensor& dA = g.grad_ref(grads, ids[i]);
                        for (std::int64_t o = 0; o < outer; ++o) {
                          const double* src = dC.data() + o * out_slab + off;
                          double* dst = dA.data() + o * in_slab[i];
                          for (std::int64_t k = 0; k < in_slab[i]; ++k) dst[k] += src[k];
                        }
                      }
                      off += in_slab[i];
                    }
                  });
  }

  NodeId slice(NodeId a, int axis, int start, int len) {
    const Tensor& A = value(a);
    const int rank = A.rank();
    if (axis < 0 || axis >= rank || start < 0 || len <= 0 || start + len > A.dim(axis))
      fail(OpKind::Slice, {a}, "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                   ") invalid for axis " + std::to_string(axis));
    std::vector<int> out_shape = A.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= A.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= A.dim(d);
    const std::int64_t in_axis = A.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(A.data() + (o * in_axis + start) * inner, static_cast<std::size_t>(len) * inner,
                  out.data() + o * len * inner);
    return record(OpKind::Slice, {a}, std::move(out),
                  [a, start, len, outer, inner, in_axis](Graph& g, std::vector<Tensor>& grads) {
                    if (!g.requires_grad(a)) return;
                    const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
                    Tensor& dA = g.grad_ref(grads, a);
                    for (std::int64_t o = 0; o < outer; ++o) {
                      const double* src = dC.data() + o * len * inner;
                      double* dst = dA.data() + (o * in_axis + start) * inner;
                      for (std::int64_t k = 0; k < static_cast<std::int64_t>(len) * inner; ++k) dst[k] += src[k];
                    }
                  });
  }

  NodeId relu(NodeId a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return record(OpKind::Relu, {a}, std::move(out), [a](Graph& g, std::vector<Tensor>& grads) {
      if (!g.requires_grad(a)) return;
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      const Tensor& A = g.value(a);
      Tensor& dA = g.grad_ref(grads, a);
      for (std::int64_t i = 0; i < dC.numel(); ++i)
        if (A[i] > 0.0) dA[i] += dC[i];
    });
  }

  NodeId tanh(NodeId a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return record(OpKind::Tanh, {a}, std::move(out), [a](Graph& g, std::vector<Tensor>& grads) {
      if (!g.requires_grad(a)) return;
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      const Tensor& Y = g.value(g.backward_out_);
      Tensor& dA = g.grad_ref(grads, a);
      for (std::int64_t i = 0; i < dC.numel(); ++i) dA[i] += dC[i] * (1.0 - Y[i] * Y[i]);
    });
  }

  // Row-wise softmax over the last axis.
  NodeId softmax(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() < 1) fail(OpKind::Softmax, {a}, "needs rank >= 1");
    Tensor out = A;
    const std::int64_t rows = A.rows(), cols = A.cols();
    for (std::int64_t r = 0; r < rows; ++r) {
      double* row = out.data() + r * cols;
      double mx = row[0];
      for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) {
        row[c] = std::exp(row[c] - mx);
        sum += row[c];
      }
      for (std::int64_t c = 0; c < cols; ++c) row[c] /= sum;
    }
    return record(OpKind::Softmax, {a}, std::move(out), [a, rows, cols](Graph& g, std::vector<Tensor>& grads) {
      if (!g.requires_grad(a)) return;
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      const Tensor& Y = g.value(g.backward_out_);
      Tensor& dA = g.grad_ref(grads, a);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = Y.data() + r * cols;
        const double* dy = dC.data() + r * cols;
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
        double* da = dA.data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c) da[c] += y[c] * (dy[c] - dot);
      }
    });
  }

  NodeId mean(NodeId a, int axis) {
    const Tensor& A = value(a);
    const int rank = A.rank();
    if (axis < 0 || axis >= rank) fail(OpKind::Mean, {a}, "axis out of range");
    std::vector<int> out_shape;
    for (int d = 0; d < rank; ++d)
      if (d != axis) out_shape.push_back(A.dim(d));
    if (out_shape.empty()) out_shape.push_back(1);
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= A.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= A.dim(d);
    const std::int64_t n = A.dim(axis);
    Tensor out = Tensor::zeros(out_shape);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] += A[(o * n + k) * inner + i] / static_cast<double>(n);
    return record(OpKind::Mean, {a}, std::move(out), [a, outer, inner, n](Graph& g, std::vector<Tensor>& grads) {
      if (!g.requires_grad(a)) return;
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      Tensor& dA = g.grad_ref(grads, a);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t k = 0; k < n; ++k)
          for (std::int64_t i = 0; i < inner; ++i)
            dA[(o * n + k) * inner + i] += dC[o * inner + i] / static_cast<double>(n);
    });
  }

  NodeId sum(NodeId a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < A.numel(); ++i) s += A[i];
    return record(OpKind::Sum, {a}, Tensor::scalar(s), [a](Graph& g, std::vector<Tensor>& grads) {
      if (!g.requires_grad(a)) return;
      const double dc = grads[static_cast<std::size_t>(g.backward_out_)][0];
      Tensor& dA = g.grad_ref(grads, a);
      for (std::int64_t i = 0; i < dA.numel(); ++i) dA[i] += dc;
    });
  }

  // Scalar sum of squared differences.
  NodeId squared_error(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) fail(OpKind::SquaredError, {a, b}, "shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < A.numel(); ++i) {
      const double d = A[i] - B[i];
      s += d * d;
    }
    return record(OpKind::SquaredError, {a, b}, Tensor::scalar(s), [a, b](Graph& g, std::vector<Tensor>& grads) {
      const double dc = grads[static_cast<std::size_t>(g.backward_out_)][0];
      const Tensor& A = g.value(a);
      const Tensor& B = g.value(b);
      if (g.requires_grad(a)) {
        Tensor& dA = g.grad_ref(grads, a);
        for (std::int64_t i = 0; i < A.numel(); ++i) dA[i] += 2.0 * (A[i] - B[i]) * dc;
      }
      if (g.requires_grad(b)) {
        Tensor& dB = g.grad_ref(grads, b);
        for (std::int64_t i = 0; i < A.numel(); ++i) dB[i] -= 2.0 * (A[i] - B[i]) * dc;
      }
    });
  }

  NodeId gather_rows(NodeId a, std::vector<std::int32_t> idx) {
    const Tensor& A = value(a);
    if (A.rank() != 2) fail(OpKind::GatherRows, {a}, "expects rank-2 input");
    const std::int64_t rows = A.dim(0), cols = A.dim(1);
    for (std::int32_t i : idx)
      if (i < 0 || i >= rows) fail(OpKind::GatherRows, {a}, "row index " + std::to_string(i) + " out of range");
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), static_cast<int>(cols)});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(A.data() + static_cast<std::int64_t>(idx[r]) * cols, cols, out.data() + static_cast<std::int64_t>(r) * cols);
    return record(OpKind::GatherRows, {a}, std::move(out),
                  [a, idx = std::move(idx), cols](Graph& g, std::vector<Tensor>& grads) {
                    if (!g.requires_grad(a)) return;
                    const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
                    Tensor& dA = g.grad_ref(grads, a);
                    for (std::size_t r = 0; r < idx.size(); ++r) {
                      const double* src = dC.data() + static_cast<std::int64_t>(r) * cols;
                      double* dst = dA.data() + static_cast<std::int64_t>(idx[r]) * cols;
                      for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
                    }
                  });
  }

  // Elementwise minimum; ties route gradient to the first argument.
  NodeId min_elem(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) fail(OpKind::MinElem, {a, b}, "shape mismatch");
    Tensor out = A;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(A[i], B[i]);
    return record(OpKind::MinElem, {a, b}, std::move(out), [a, b](Graph& g, std::vector<Tensor>& grads) {
      const Tensor& dC = grads[static_cast<std::size_t>(g.backward_out_)];
      const Tensor& A = g.value(a);
      const Tensor& B = g.value(b);
      if (g.requires_grad(a)) {
        Tensor& dA = g.grad_ref(grads, a);
        for (std::int64_t i = 0; i < dC.numel(); ++i)
          if (A[i] <= B[i]) dA[i] += dC[i];
      }
      if (g.requires_grad(b)) {
        Tensor& dB = g.grad_ref(grads, b);
        for (std::int64_t i = 0; i < dC.numel(); ++i)
          if (A[i] > B[i]) dB[i] += dC[i];
      }
    });
  }

  // Relaxed categorical sample: softmax((logits + noise) / temperature).
  // Differentiable in the logits; the noise tensor is a constant.
  NodeId gumbel_softmax(NodeId logits, const Tensor& noise, double temperature) {
    if (temperature <= 0.0)
      throw std::invalid_argument("gumbel_softmax: temperature must be positive, got " + std::to_string(temperature));
    NodeId n = constant(noise);
    return softmax(scalar_mul(add(logits, n), 1.0 / temperature));
  }

  // ---- backward ------------------------------------------------------------

  // Gradient of a scalar loss with respect to every node. Nodes with
  // requires_grad receive a dense tensor (zeros when unreachable from the
  // loss); constant nodes receive an empty tensor.
  std::vector<Tensor> backward(NodeId loss) {
    if (loss < 0 || static_cast<std::size_t>(loss) >= values_.size())
      throw std::invalid_argument("backward: unknown node id");
    if (value(loss).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  Tensor::shape_string(value(loss).shape()));
    std::vector<Tensor> grads(values_.size());
    grads[static_cast<std::size_t>(loss)] = Tensor::full(value(loss).shape(), 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->out > loss) continue;  // created after the loss node, cannot feed it
      Tensor& og = grads[static_cast<std::size_t>(it->out)];
      if (og.empty()) continue;  // output never received gradient
      if (!grad_flags_[static_cast<std::size_t>(it->out)]) continue;
      backward_out_ = it->out;
      it->back(*this, grads);
    }
    // Materialize zeros for requires-grad nodes the loss never reached.
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (grad_flags_[i] && grads[i].empty()) grads[i] = Tensor::zeros(values_[i].shape());
    }
    return grads;
  }

  Tensor& grad_ref(std::vector<Tensor>& grads, NodeId id) {
    Tensor& t = grads[static_cast<std::size_t>(id)];
    if (t.empty()) t = Tensor::zeros(value(id).shape());
    return t;
  }

  NodeId backward_out_ = -1;  // record output id during a backward rule call

 private:
  struct Record {
    OpKind kind;
    NodeId out;
    std::function<void(Graph&, std::vector<Tensor>&)> back;
  };

  NodeId push_node(Tensor value, bool requires_grad) {
    if (!value.all_finite())
      throw std::invalid_argument("Graph: non-finite values in new node");
    values_.push_back(std::move(value));
    grad_flags_.push_back(requires_grad ? 1 : 0);
    return static_cast<NodeId>(values_.size() - 1);
  }

  template <typename F>
  NodeId record(OpKind kind, const std::vector<NodeId>& inputs, Tensor out, F&& back) {
    if (!out.all_finite())
      throw std::runtime_error(std::string(op_name(kind)) + ": produced non-finite values");
    bool rg = false;
    for (NodeId i : inputs) rg = rg || requires_grad(i);
    values_.push_back(std::move(out));
    grad_flags_.push_back(rg ? 1 : 0);
    const NodeId id = static_cast<NodeId>(values_.size() - 1);
    if (rg) records_.push_back(Record{kind, id, std::forward<F>(back)});
    return id;
  }

  [[noreturn]] void fail(OpKind kind, const std::vector<NodeId>& ids, const std::string& msg) const {
    std::string s = std::string(op_name(kind)) + ": " + msg + "; shapes:";
    for (NodeId id : ids)
      if (id >= 0 && static_cast<std::size_t>(id) < values_.size())
        s += " " + Tensor::shape_string(values_[static_cast<std::size_t>(id)].shape());
    throw std::invalid_argument(s);
  }

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }

  std::vector<Tensor> values_;
  std::vector<std::uint8_t> grad_flags_;
  std::vector<Record> records_;
};

}  // namespace dynamarl
