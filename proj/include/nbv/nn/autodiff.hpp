#pragma once

// Minimal dynamic reverse-mode automatic differentiation over dense Eigen
// matrices. A Var owns a node holding its value; when gradients are enabled and
// an input requires them, the node also records its parents and a backward
// closure. Dropping the last Var of a graph frees it, so inference under a
// NoGradGuard keeps no intermediate state alive.
//
// Batched tensors are laid out feature-major: one column per sample.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nbv/core.hpp"

namespace nbv::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Expr>
  void accumulate(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename T>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

template <typename T>
Var<T> constant(Matrix<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Matrix<T> value) {
  return Var<T>(std::move(value), true);
}

/// Creates the output of an op. The backward closure receives the output node
/// (whose grad is populated) and must accumulate into inputs that require grad.
template <typename T>
Var<T> make_op(Matrix<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs)
        if (in.requires_grad()) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_op(Matrix<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs)
        if (in.requires_grad()) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

/// Back-propagates from a 1x1 output (seeded with d(root)/d(root) = 1).
template <typename T>
void backward(const Var<T>& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.size() != 0) {
      node->backward(*node);
      // Interior gradients are no longer needed once propagated.
      if (!node->parents.empty()) node->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a (m x k) times b (k x n).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value() * b.value(), {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) an->accumulate(out.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * out.grad);
  });
}

/// w x + b with the bias column broadcast over samples.
template <typename T>
Var<T> linear(const Var<T>& w, const Var<T>& b, const Var<T>& x) {
  require(w.cols() == x.rows() && b.rows() == w.rows() && b.cols() == 1, "linear: shape mismatch");
  Matrix<T> y = w.value() * x.value();
  y.colwise() += b.value().col(0);
  auto wn = w.node(), bn = b.node(), xn = x.node();
  return make_op<T>(std::move(y), {w, b, x}, [wn, bn, xn](Node<T>& out) {
    if (wn->requires_grad) wn->accumulate(out.grad * xn->value.transpose());
    if (bn->requires_grad) bn->accumulate(out.grad.rowwise().sum());
    if (xn->requires_grad) xn->accumulate(wn->value.transpose() * out.grad);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value() + b.value(), {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) an->accumulate(out.grad);
    if (bn->requires_grad) bn->accumulate(out.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value() - b.value(), {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) an->accumulate(out.grad);
    if (bn->requires_grad) bn->accumulate(-out.grad);
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto an = a.node(), bn = b.node();
  return make_op<T>(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node<T>& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(out.grad.cwiseProduct(an->value));
  });
}

/// Elementwise product with a constant of the same shape.
template <typename T>
Var<T> mul_const(const Var<T>& a, Matrix<T> c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const: shape mismatch");
  auto an = a.node();
  Matrix<T> y = a.value().cwiseProduct(c);
  return make_op<T>(std::move(y), {a}, [an, c = std::move(c)](Node<T>& out) {
    an->accumulate(out.grad.cwiseProduct(c));
  });
}

/// Each row of x multiplied elementwise by the constant row vector r (1 x n).
template <typename T>
Var<T> mul_row_const(const Var<T>& x, Matrix<T> r) {
  require(r.rows() == 1 && r.cols() == x.cols(), "mul_row_const: shape mismatch");
  auto xn = x.node();
  Matrix<T> y = x.value().array().rowwise() * r.row(0).array();
  return make_op<T>(std::move(y), {x}, [xn, r = std::move(r)](Node<T>& out) {
    xn->accumulate((out.grad.array().rowwise() * r.row(0).array()).matrix());
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto an = a.node();
  return make_op<T>(a.value() * s, {a}, [an, s](Node<T>& out) { an->accumulate(out.grad * s); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto an = a.node();
  return make_op<T>((a.value().array() + s).matrix(), {a}, [an](Node<T>& out) { an->accumulate(out.grad); });
}

/// min(a, bound) elementwise against a constant; gradient passes where a < bound.
template <typename T>
Var<T> clamp_max(const Var<T>& a, Matrix<T> bound) {
  require(a.rows() == bound.rows() && a.cols() == bound.cols(), "clamp_max: shape mismatch");
  auto an = a.node();
  Matrix<T> y = a.value().cwiseMin(bound);
  return make_op<T>(std::move(y), {a}, [an, bound = std::move(bound)](Node<T>& out) {
    an->accumulate((an->value.array() < bound.array()).select(out.grad, T(0)));
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename T>
Var<T> relu(const Var<T>& a) {
  auto an = a.node();
  return make_op<T>(a.value().cwiseMax(T(0)), {a}, [an](Node<T>& out) {
    an->accumulate((an->value.array() > T(0)).select(out.grad, T(0)));
  });
}

template <typename T>
Matrix<T> sigmoid_value(const Matrix<T>& x) {
  return (T(1) / (T(1) + (-x.array()).exp())).matrix();
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  auto an = a.node();
  Matrix<T> y = sigmoid_value<T>(a.value());
  return make_op<T>(y, {a}, [an, y](Node<T>& out) {
    an->accumulate((out.grad.array() * y.array() * (T(1) - y.array())).matrix());
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  auto an = a.node();
  Matrix<T> y = a.value().array().tanh().matrix();
  return make_op<T>(y, {a}, [an, y](Node<T>& out) {
    an->accumulate((out.grad.array() * (T(1) - y.array().square())).matrix());
  });
}

/// log(1 + exp(x)), evaluated stably.
template <typename T>
Matrix<T> softplus_value(const Matrix<T>& x) {
  return (x.array().max(T(0)) + (-x.array().abs()).exp().log1p()).matrix();
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  auto an = a.node();
  return make_op<T>(softplus_value<T>(a.value()), {a}, [an](Node<T>& out) {
    an->accumulate((out.grad.array() * sigmoid_value<T>(an->value).array()).matrix());
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  auto an = a.node();
  Matrix<T> y = a.value().array().exp().matrix();
  return make_op<T>(y, {a}, [an, y](Node<T>& out) { an->accumulate(out.grad.cwiseProduct(y)); });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  auto an = a.node();
  return make_op<T>(a.value().array().log().matrix(), {a}, [an](Node<T>& out) {
    an->accumulate((out.grad.array() / an->value.array()).matrix());
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  auto an = a.node();
  return make_op<T>(a.value().array().square().matrix(), {a}, [an](Node<T>& out) {
    an->accumulate((T(2) * out.grad.array() * an->value.array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<T> y(rows, cols);
  std::vector<std::pair<std::shared_ptr<Node<T>>, Eigen::Index>> spans;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    y.middleRows(offset, p.rows()) = p.value();
    spans.emplace_back(p.node(), offset);
    offset += p.rows();
  }
  return make_op<T>(std::move(y), parts, [spans](Node<T>& out) {
    for (const auto& [n, off] : spans)
      if (n->requires_grad) n->accumulate(out.grad.middleRows(off, n->value.rows()));
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  auto an = a.node();
  return make_op<T>(a.value().middleRows(start, count), {a}, [an, start, count](Node<T>& out) {
    if (an->grad.size() == 0) an->grad = Matrix<T>::Zero(an->value.rows(), an->value.cols());
    an->grad.middleRows(start, count) += out.grad;
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<T> y(rows, cols);
  std::vector<std::pair<std::shared_ptr<Node<T>>, Eigen::Index>> spans;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    spans.emplace_back(p.node(), offset);
    offset += p.cols();
  }
  return make_op<T>(std::move(y), parts, [spans](Node<T>& out) {
    for (const auto& [n, off] : spans)
      if (n->requires_grad) n->accumulate(out.grad.middleCols(off, n->value.cols()));
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  auto an = a.node();
  return make_op<T>(a.value().middleCols(start, count), {a}, [an, start, count](Node<T>& out) {
    if (an->grad.size() == 0) an->grad = Matrix<T>::Zero(an->value.rows(), an->value.cols());
    an->grad.middleCols(start, count) += out.grad;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  auto an = a.node();
  Matrix<T> y(1, 1);
  y(0, 0) = a.value().sum();
  return make_op<T>(std::move(y), {a}, [an](Node<T>& out) {
    an->accumulate(Matrix<T>::Constant(an->value.rows(), an->value.cols(), out.grad(0, 0)));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

}  // namespace nbv::nn
