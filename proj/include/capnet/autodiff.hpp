// Copyright 2026 The CapNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every primitive as it is evaluated; nodes are appended in
// evaluation order, so the node vector is already topologically sorted and
// the backward pass is a single reverse sweep. The tape is rebuilt for every
// forward pass, which lets the graph follow the bag size of each example.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "capnet/error.hpp"
#include "capnet/params.hpp"
#include "capnet/tensor.hpp"

namespace capnet::ad {

enum class Activation { kTanh, kSigmoid, kRelu, kAbs };

inline Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "relu") return Activation::kRelu;
  if (name == "abs") return Activation::kAbs;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

namespace detail {

enum class Op {
  kLeaf,
  kLinear,
  kActivation,
  kAdd,
  kSub,
  kMul,
  kAffine,
  kSquare,
  kConcat,
  kSliceRows,
  kSliceCols,
  kReduceSum,
  kSumAll,
  kSoftmaxRows,
  kScaleRows,
  kMseLoss,
};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline MapC as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}
inline Map as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return Map(t.data().data(), static_cast<Eigen::Index>(rows),
             static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

inline void require_rank2(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": " + what + " must be rank 2, got " +
                     shape_string(t.shape()));
  }
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that does not receive a gradient (inputs, targets).
  Var constant(Tensor value) { return push_leaf(std::move(value), false, nullptr); }

  // Leaf whose gradient is kept on the tape and readable through grad().
  Var variable(Tensor value) { return push_leaf(std::move(value), true, nullptr); }

  // Binds a parameter. Binding the same parameter twice returns the same node,
  // so repeated applications of a layer share one gradient accumulator.
  Var parameter(const Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var{this, it->second};
    Var v = push_leaf(p.value, true, &p);
    bound_.emplace(&p, v.id);
    return v;
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

  // Gradient of the last backward() target with respect to v. Zero-filled when
  // v did not influence the target.
  Tensor grad(Var v) const {
    if (v.id < grads_.size() && has_grad_[v.id]) return grads_[v.id];
    return Tensor(nodes_.at(v.id).value.shape());
  }

  // Propagates d(loss)/d(node) to every node and accumulates parameter
  // gradients into their Parameter::grad. The tape is consumed: a second call
  // without rebuilding the forward pass is rejected.
  void backward(Var loss);

  // Operation recording; see the free functions below for documentation.
  Var linear(Var x, Var w, Var b);
  Var activation(Activation kind, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var x, double scale, double shift);
  Var square(Var x);
  Var concat(Var a, Var b);
  Var slice_rows(Var x, std::size_t start, std::size_t count);
  Var slice_cols(Var x, std::size_t start, std::size_t count);
  Var reduce_sum(Var x, std::size_t axis);
  Var sum_all(Var x);
  Var softmax_rows(Var x);
  Var scale_rows(Var x, Var w);
  Var mse_loss(Var pred, Var target);

 private:
  struct Node {
    detail::Op op = detail::Op::kLeaf;
    Tensor value;
    std::array<std::size_t, 3> in{};
    bool requires_grad = false;
    const Parameter* param = nullptr;
    Activation act = Activation::kTanh;
    double s0 = 0.0, s1 = 0.0;
    std::size_t a0 = 0, a1 = 0;
  };

  Var push_leaf(Tensor value, bool requires_grad, const Parameter* p) {
    check_open();
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param = p;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var push(detail::Op op, Tensor value, std::initializer_list<Var> inputs) {
    return push(op, std::move(value), inputs, Node());
  }

  Var push(detail::Op op, Tensor value, std::initializer_list<Var> inputs, Node extra) {
    check_open();
    Node n = std::move(extra);
    n.op = op;
    n.value = std::move(value);
    std::size_t k = 0;
    for (Var v : inputs) {
      if (v.tape != this) throw Error("variable belongs to a different tape");
      n.in[k++] = v.id;
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_open() const {
    if (consumed_) throw Error("tape already consumed by backward(); rebuild the forward pass");
  }

  Tensor& grad_buf(std::size_t id) {
    if (!has_grad_[id]) {
      grads_[id] = Tensor(nodes_[id].value.shape());
      has_grad_[id] = true;
    }
    return grads_[id];
  }

  bool wants(std::size_t id) const { return nodes_[id].requires_grad; }

  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Forward definitions.

inline Var Tape::linear(Var x, Var w, Var b) {
  using namespace detail;
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  const Tensor& B = value(b);
  require_rank2(X, "linear", "input");
  require_rank2(W, "linear", "weight");
  if (X.dim(1) != W.dim(0)) {
    throw ShapeError("linear: input " + shape_string(X.shape()) + " incompatible with weight " +
                     shape_string(W.shape()) + " (inner dimensions " + std::to_string(X.dim(1)) +
                     " vs " + std::to_string(W.dim(0)) + ")");
  }
  if (B.size() != W.dim(1)) {
    throw ShapeError("linear: bias " + shape_string(B.shape()) + " does not match " +
                     std::to_string(W.dim(1)) + " outputs");
  }
  const std::size_t n = X.dim(0), in = X.dim(1), out = W.dim(1);
  Tensor Y(Shape{n, out});
  auto y = as_matrix(Y, n, out);
  y.noalias() = as_matrix(X, n, in) * as_matrix(W, in, out);
  y.rowwise() += as_matrix(B, 1, out).row(0);
  return push(Op::kLinear, std::move(Y), {x, w, b});
}

inline Var Tape::activation(Activation kind, Var x) {
  Tensor y = value(x);
  for (double& v : y.data()) {
    switch (kind) {
      case Activation::kTanh: v = std::tanh(v); break;
      case Activation::kSigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
      case Activation::kRelu: v = v > 0.0 ? v : 0.0; break;
      case Activation::kAbs: v = std::fabs(v); break;
    }
  }
  Node extra;
  extra.act = kind;
  return push(detail::Op::kActivation, std::move(y), {x}, std::move(extra));
}

inline Var Tape::add(Var a, Var b) {
  detail::require_same_shape(value(a), value(b), "add");
  Tensor y = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += B[i];
  return push(detail::Op::kAdd, std::move(y), {a, b});
}

inline Var Tape::sub(Var a, Var b) {
  detail::require_same_shape(value(a), value(b), "sub");
  Tensor y = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= B[i];
  return push(detail::Op::kSub, std::move(y), {a, b});
}

inline Var Tape::mul(Var a, Var b) {
  detail::require_same_shape(value(a), value(b), "mul");
  Tensor y = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
  return push(detail::Op::kMul, std::move(y), {a, b});
}

inline Var Tape::affine(Var x, double scale, double shift) {
  Tensor y = value(x);
  for (double& v : y.data()) v = scale * v + shift;
  Node extra;
  extra.s0 = scale;
  extra.s1 = shift;
  return push(detail::Op::kAffine, std::move(y), {x}, std::move(extra));
}

inline Var Tape::square(Var x) {
  Tensor y = value(x);
  for (double& v : y.data()) v = v * v;
  return push(detail::Op::kSquare, std::move(y), {x});
}

inline Var Tape::concat(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  detail::require_rank2(A, "concat", "left operand");
  detail::require_rank2(B, "concat", "right operand");
  if (A.dim(0) != B.dim(0)) {
    throw ShapeError("concat: batch mismatch " + shape_string(A.shape()) + " vs " +
                     shape_string(B.shape()));
  }
  const std::size_t rows = A.dim(0), n = A.dim(1), m = B.dim(1);
  Tensor Y(Shape{rows, n + m});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data().begin() + r * n, n, Y.data().begin() + r * (n + m));
    std::copy_n(B.data().begin() + r * m, m, Y.data().begin() + r * (n + m) + n);
  }
  return push(detail::Op::kConcat, std::move(Y), {a, b});
}

inline Var Tape::slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& X = value(x);
  detail::require_rank2(X, "slice_rows", "input");
  if (start + count > X.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " +
                     shape_string(X.shape()));
  }
  const std::size_t c = X.dim(1);
  Tensor Y(Shape{count, c});
  std::copy_n(X.data().begin() + start * c, count * c, Y.data().begin());
  Node extra;
  extra.a0 = start;
  extra.a1 = count;
  return push(detail::Op::kSliceRows, std::move(Y), {x}, std::move(extra));
}

inline Var Tape::slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& X = value(x);
  detail::require_rank2(X, "slice_cols", "input");
  if (start + count > X.dim(1)) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " +
                     shape_string(X.shape()));
  }
  const std::size_t rows = X.dim(0), c = X.dim(1);
  Tensor Y(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(X.data().begin() + r * c + start, count, Y.data().begin() + r * count);
  }
  Node extra;
  extra.a0 = start;
  extra.a1 = count;
  return push(detail::Op::kSliceCols, std::move(Y), {x}, std::move(extra));
}

inline Var Tape::reduce_sum(Var x, std::size_t axis) {
  const Tensor& X = value(x);
  if (axis >= X.rank()) {
    throw ShapeError("reduce_sum: axis " + std::to_string(axis) + " invalid for " +
                     shape_string(X.shape()));
  }
  const Shape& s = X.shape();
  const std::size_t outer = shape_size(Shape(s.begin(), s.begin() + axis));
  const std::size_t len = s[axis];
  const std::size_t inner = shape_size(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor Y(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t i = 0; i < inner; ++i) {
        Y[o * inner + i] += X[(o * len + k) * inner + i];
      }
    }
  }
  Node extra;
  extra.a0 = axis;
  return push(detail::Op::kReduceSum, std::move(Y), {x}, std::move(extra));
}

inline Var Tape::sum_all(Var x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  return push(detail::Op::kSumAll, Tensor::scalar(s), {x});
}

inline Var Tape::softmax_rows(Var x) {
  const Tensor& X = value(x);
  if (X.size() == 0) throw ShapeError("softmax: empty input");
  Tensor Y = X;
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = Y.data().data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  return push(detail::Op::kSoftmaxRows, std::move(Y), {x});
}

inline Var Tape::scale_rows(Var x, Var w) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  detail::require_rank2(X, "scale_rows", "input");
  if (W.size() != X.dim(0)) {
    throw ShapeError("scale_rows: weights " + shape_string(W.shape()) + " do not match " +
                     std::to_string(X.dim(0)) + " rows");
  }
  Tensor Y = X;
  const std::size_t c = X.dim(1);
  for (std::size_t r = 0; r < X.dim(0); ++r) {
    for (std::size_t k = 0; k < c; ++k) Y[r * c + k] *= W[r];
  }
  return push(detail::Op::kScaleRows, std::move(Y), {x, w});
}

inline Var Tape::mse_loss(Var pred, Var target) {
  const Tensor& P = value(pred);
  const Tensor& T = value(target);
  if (P.size() != T.size()) {
    throw ShapeError("mse_loss: length mismatch " + shape_string(P.shape()) + " vs " +
                     shape_string(T.shape()));
  }
  if (P.size() == 0) throw ShapeError("mse_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double d = P[i] - T[i];
    s += d * d;
  }
  return push(detail::Op::kMseLoss, Tensor::scalar(s / static_cast<double>(P.size())),
              {pred, target});
}

// ---------------------------------------------------------------------------
// Backward.

inline void Tape::backward(Var loss) {
  if (consumed_) throw Error("backward() called twice without re-running the forward pass");
  if (loss.tape != this) throw Error("loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss).shape()));
  }
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), false);
  grad_buf(loss.id).fill(1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (!has_grad_[id] || !nodes_[id].requires_grad) continue;
    backprop_node(id);
  }
  for (const auto& [p, id] : bound_) {
    if (has_grad_[id]) {
      const Tensor& g = grads_[id];
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
    p->has_grad = true;
  }
}

inline void Tape::backprop_node(std::size_t id) {
  using namespace detail;
  Node& n = nodes_[id];
  const Tensor& gy = grads_[id];
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kLinear: {
      const Tensor& X = nodes_[n.in[0]].value;
      const Tensor& W = nodes_[n.in[1]].value;
      const std::size_t rows = X.dim(0), in = X.dim(1), out = W.dim(1);
      auto g = as_matrix(gy, rows, out);
      if (wants(n.in[0])) {
        auto gx = as_matrix(grad_buf(n.in[0]), rows, in);
        gx.noalias() += g * as_matrix(W, in, out).transpose();
      }
      if (wants(n.in[1])) {
        auto gw = as_matrix(grad_buf(n.in[1]), in, out);
        gw.noalias() += as_matrix(X, rows, in).transpose() * g;
      }
      if (wants(n.in[2])) {
        auto gb = as_matrix(grad_buf(n.in[2]), 1, out);
        gb += g.colwise().sum();
      }
      break;
    }
    case Op::kActivation: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const Tensor& X = nodes_[n.in[0]].value;
      const Tensor& Y = n.value;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        double d = 0.0;
        switch (n.act) {
          case Activation::kTanh: d = 1.0 - Y[i] * Y[i]; break;
          case Activation::kSigmoid: d = Y[i] * (1.0 - Y[i]); break;
          case Activation::kRelu: d = X[i] > 0.0 ? 1.0 : 0.0; break;
          case Activation::kAbs: d = X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0); break;
        }
        gx[i] += d * gy[i];
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(n.in[0])) {
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (wants(n.in[1])) {
        Tensor& gb = grad_buf(n.in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += sign * gy[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& A = nodes_[n.in[0]].value;
      const Tensor& B = nodes_[n.in[1]].value;
      if (wants(n.in[0])) {
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += B[i] * gy[i];
      }
      if (wants(n.in[1])) {
        Tensor& gb = grad_buf(n.in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += A[i] * gy[i];
      }
      break;
    }
    case Op::kAffine: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += n.s0 * gy[i];
      break;
    }
    case Op::kSquare: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const Tensor& X = nodes_[n.in[0]].value;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += 2.0 * X[i] * gy[i];
      break;
    }
    case Op::kConcat: {
      const std::size_t rows = n.value.dim(0), total = n.value.dim(1);
      const std::size_t left = nodes_[n.in[0]].value.dim(1);
      const std::size_t right = total - left;
      if (wants(n.in[0])) {
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < left; ++c) ga[r * left + c] += gy[r * total + c];
      }
      if (wants(n.in[1])) {
        Tensor& gb = grad_buf(n.in[1]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < right; ++c) gb[r * right + c] += gy[r * total + left + c];
      }
      break;
    }
    case Op::kSliceRows: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const std::size_t off = n.a0 * n.value.dim(1);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
      break;
    }
    case Op::kSliceCols: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const std::size_t rows = n.value.dim(0), c = gx.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < n.a1; ++k) gx[r * c + n.a0 + k] += gy[r * n.a1 + k];
      break;
    }
    case Op::kReduceSum: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const Shape& s = gx.shape();
      const std::size_t axis = n.a0;
      const std::size_t outer = shape_size(Shape(s.begin(), s.begin() + axis));
      const std::size_t len = s[axis];
      const std::size_t inner = shape_size(Shape(s.begin() + axis + 1, s.end()));
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i)
            gx[(o * len + k) * inner + i] += gy[o * inner + i];
      break;
    }
    case Op::kSumAll: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const double g = gy[0];
      for (double& v : gx.data()) v += g;
      break;
    }
    case Op::kSoftmaxRows: {
      if (!wants(n.in[0])) break;
      Tensor& gx = grad_buf(n.in[0]);
      const Tensor& Y = n.value;
      const std::size_t rows = Y.rows(), cols = Y.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gy[r * cols + c] * Y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += Y[r * cols + c] * (gy[r * cols + c] - dot);
      }
      break;
    }
    case Op::kScaleRows: {
      const Tensor& X = nodes_[n.in[0]].value;
      const Tensor& W = nodes_[n.in[1]].value;
      const std::size_t rows = X.dim(0), c = X.dim(1);
      if (wants(n.in[0])) {
        Tensor& gx = grad_buf(n.in[0]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t k = 0; k < c; ++k) gx[r * c + k] += W[r] * gy[r * c + k];
      }
      if (wants(n.in[1])) {
        Tensor& gw = grad_buf(n.in[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (std::size_t k = 0; k < c; ++k) s += X[r * c + k] * gy[r * c + k];
          gw[r] += s;
        }
      }
      break;
    }
    case Op::kMseLoss: {
      const Tensor& P = nodes_[n.in[0]].value;
      const Tensor& T = nodes_[n.in[1]].value;
      const double scale = 2.0 * gy[0] / static_cast<double>(P.size());
      if (wants(n.in[0])) {
        Tensor& gp = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < P.size(); ++i) gp[i] += scale * (P[i] - T[i]);
      }
      if (wants(n.in[1])) {
        Tensor& gt = grad_buf(n.in[1]);
        for (std::size_t i = 0; i < P.size(); ++i) gt[i] -= scale * (P[i] - T[i]);
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Free-function spelling of the operation set.

// y = xW + b, row-wise. x: [batch, in], W: [in, out], b: [out].
inline Var linear(Var x, Var w, Var b) { return x.tape->linear(x, w, b); }

// Elementwise nonlinearity; abs uses subgradient 0 at 0.
inline Var activation(Activation kind, Var x) { return x.tape->activation(kind, x); }
inline Var tanh(Var x) { return activation(Activation::kTanh, x); }
inline Var sigmoid(Var x) { return activation(Activation::kSigmoid, x); }
inline Var relu(Var x) { return activation(Activation::kRelu, x); }
inline Var abs(Var x) { return activation(Activation::kAbs, x); }

inline Var add(Var a, Var b) { return a.tape->add(a, b); }
inline Var sub(Var a, Var b) { return a.tape->sub(a, b); }
inline Var mul(Var a, Var b) { return a.tape->mul(a, b); }
inline Var affine(Var x, double scale, double shift) { return x.tape->affine(x, scale, shift); }
inline Var square(Var x) { return x.tape->square(x); }

// Columns of a followed by columns of b; both [batch, *].
inline Var concat(Var a, Var b) { return a.tape->concat(a, b); }

inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  return x.tape->slice_rows(x, start, count);
}
inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  return x.tape->slice_cols(x, start, count);
}

// Sum along one axis; the axis is removed from the shape.
inline Var reduce_sum(Var x, std::size_t axis) { return x.tape->reduce_sum(x, axis); }
inline Var sum_all(Var x) { return x.tape->sum_all(x); }

// Max-shifted softmax over the last axis. A rank-1 score vector yields the
// attention weights of a single bag; a [bags, n] matrix normalizes each row.
inline Var softmax_weights(Var scores) { return scores.tape->softmax_rows(scores); }

// Multiplies row r of x by w[r].
inline Var scale_rows(Var x, Var w) { return x.tape->scale_rows(x, w); }

// Mean of squared differences; pred and target must have equal length.
inline Var mse_loss(Var pred, Var target) { return pred.tape->mse_loss(pred, target); }

}  // namespace capnet::ad
