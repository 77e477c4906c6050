// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "iene/util/errors.hpp"

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Every differentiable objective in the toolkit (encoder forwards, HSIC,
// variance penalties, relaxed structural interventions) is expressed as a
// composition of the operators below. A Var is a shared handle to a graph
// node; calling backward() on a 1x1 result accumulates gradients into every
// reachable leaf. Graphs are rebuilt per training step, so node lifetime is
// simply the lifetime of the Vars holding them.

namespace iene::ad {

using Matrix = Eigen::MatrixXd;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // allocated by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Distributes this node's grad into parents' grads.
  std::function<void(Node&)> pull;
};

}  // namespace detail

class Var {
 public:
  Var() = default;

  static Var constant(Matrix value) {
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->value = std::move(value);
    return v;
  }

  static Var constant(double scalar) {
    Matrix m(1, 1);
    m(0, 0) = scalar;
    return constant(std::move(m));
  }

  static Var leaf(Matrix value) {
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool valid() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  double scalar() const { return node_->value(0, 0); }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }

  /// Runs reverse-mode accumulation from this node; it must be 1x1.
  void backward() const;

  std::shared_ptr<detail::Node>& node() { return node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> pull) {
  Var out = Var::constant(std::move(value));
  Node& node = *out.node();
  bool needs = false;
  for (const Var& in : inputs) {
    needs = needs || in.requires_grad();
    node.parents.push_back(in.node());
  }
  node.requires_grad = needs;
  if (needs) node.pull = std::move(pull);
  return out;
}

inline Matrix& grad_of(Node& node, std::size_t parent_index) {
  return node.parents[parent_index]->grad;
}

inline bool parent_needs(const Node& node, std::size_t parent_index) {
  return node.parents[parent_index]->requires_grad;
}

}  // namespace detail

inline void Var::backward() const {
  if (rows() != 1 || cols() != 1) throw InputError("backward() requires a 1x1 output");
  // Iterative post-order topological sort.
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  std::vector<detail::Node*> seen;
  auto visited = [&](detail::Node* n) {
    // Nodes tag themselves via grad.size() sentinel; use a side list instead
    // to avoid touching grads. Linear scan is fine (graphs are small), but a
    // sorted vector keeps it O(log n).
    auto it = std::lower_bound(seen.begin(), seen.end(), n);
    if (it != seen.end() && *it == n) return true;
    seen.insert(it, n);
    return false;
  };
  if (!node_->requires_grad) return;
  stack.emplace_back(node_.get(), 0);
  visited(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* parent = n->parents[idx++].get();
      if (parent->requires_grad && !visited(parent)) stack.emplace_back(parent, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  node_->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->pull) n->pull(*n);
  }
}

// ---------------------------------------------------------------------------
// Arithmetic

inline Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("add: shape mismatch");
  return detail::make_op(a.value() + b.value(), {a, b}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad;
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) += n.grad;
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("sub: shape mismatch");
  return detail::make_op(a.value() - b.value(), {a, b}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad;
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) -= n.grad;
  });
}

inline Var neg(const Var& a) {
  return detail::make_op(-a.value(), {a}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) -= n.grad;
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make_op(a.value() * s, {a}, [s](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += s * n.grad;
  });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::make_op(a.value().array() + s, {a}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad;
  });
}

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InputError("matmul: inner dimension mismatch");
  return detail::make_op(a.value() * b.value(), {a, b}, [](detail::Node& n) {
    const Matrix& av = n.parents[0]->value;
    const Matrix& bv = n.parents[1]->value;
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad * bv.transpose();
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) += av.transpose() * n.grad;
  });
}

inline Var transpose(const Var& a) {
  return detail::make_op(a.value().transpose(), {a}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad.transpose();
  });
}

inline Var cwise_mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("cwise_mul: shape mismatch");
  return detail::make_op(a.value().cwiseProduct(b.value()), {a, b}, [](detail::Node& n) {
    const Matrix& av = n.parents[0]->value;
    const Matrix& bv = n.parents[1]->value;
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad.cwiseProduct(bv);
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) += n.grad.cwiseProduct(av);
  });
}

inline Var square(const Var& a) { return cwise_mul(a, a); }

/// Broadcast-adds a 1xH row vector to every row of X.
inline Var add_row_broadcast(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw InputError("add_row_broadcast: bad row shape");
  Matrix v = x.value();
  v.rowwise() += row.value().row(0);
  return detail::make_op(std::move(v), {x, row}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad;
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) += n.grad.colwise().sum();
  });
}

/// Multiplies a matrix by a 1x1 scalar Var.
inline Var scale_var(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw InputError("scale_var: scalar must be 1x1");
  return detail::make_op(a.value() * s.scalar(), {a, s}, [](detail::Node& n) {
    const Matrix& av = n.parents[0]->value;
    double sv = n.parents[1]->value(0, 0);
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += sv * n.grad;
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1)(0, 0) += n.grad.cwiseProduct(av).sum();
  });
}

inline Var div_scalar(const Var& a, const Var& b) {
  if (a.rows() != 1 || a.cols() != 1 || b.rows() != 1 || b.cols() != 1)
    throw InputError("div_scalar expects 1x1 operands");
  double bv = b.scalar();
  Matrix out(1, 1);
  out(0, 0) = a.scalar() / bv;
  return detail::make_op(std::move(out), {a, b}, [](detail::Node& n) {
    double av = n.parents[0]->value(0, 0);
    double bv = n.parents[1]->value(0, 0);
    double g = n.grad(0, 0);
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0)(0, 0) += g / bv;
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1)(0, 0) -= g * av / (bv * bv);
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Var tanh(const Var& a) {
  return detail::make_op(a.value().array().tanh(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0).array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

inline Var relu(const Var& a) {
  return detail::make_op(a.value().cwiseMax(0.0), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    const Matrix& x = n.parents[0]->value;
    detail::grad_of(n, 0).array() += n.grad.array() * (x.array() > 0.0).cast<double>();
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Matrix v = a.value().array().max(a.value().array() * slope);
  return detail::make_op(std::move(v), {a}, [slope](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    const Matrix& x = n.parents[0]->value;
    detail::grad_of(n, 0).array() +=
        n.grad.array() * (x.array() > 0.0).select(Eigen::ArrayXXd::Constant(x.rows(), x.cols(), 1.0),
                                                  Eigen::ArrayXXd::Constant(x.rows(), x.cols(), slope));
  });
}

inline Var exp(const Var& a) {
  return detail::make_op(a.value().array().exp(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0).array() += n.grad.array() * n.value.array();
  });
}

inline Var sqrt(const Var& a) {
  return detail::make_op(a.value().array().sqrt(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0).array() += n.grad.array() * 0.5 / n.value.array();
  });
}

/// x^{-1/2}, entries must be positive.
inline Var rsqrt(const Var& a) {
  return detail::make_op(a.value().array().rsqrt(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    const Matrix& x = n.parents[0]->value;
    detail::grad_of(n, 0).array() += n.grad.array() * (-0.5) * n.value.array() / x.array();
  });
}

/// 1/(x + eps); eps keeps empty relaxed neighborhoods finite.
inline Var reciprocal(const Var& a, double eps = 0.0) {
  return detail::make_op((a.value().array() + eps).inverse(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0).array() -= n.grad.array() * n.value.array().square();
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_op(std::move(out), {a}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0).array() += n.grad(0, 0);
  });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

inline Var row_sum(const Var& a) {
  return detail::make_op(a.value().rowwise().sum(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0) += n.grad * Matrix::Ones(1, n.parents[0]->value.cols());
  });
}

inline Var col_sum(const Var& a) {
  return detail::make_op(a.value().colwise().sum(), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    detail::grad_of(n, 0) += Matrix::Ones(n.parents[0]->value.rows(), 1) * n.grad;
  });
}

inline Var row_mean(const Var& a) { return scale(row_sum(a), 1.0 / static_cast<double>(a.cols())); }
inline Var col_mean(const Var& a) { return scale(col_sum(a), 1.0 / static_cast<double>(a.rows())); }

// ---------------------------------------------------------------------------
// Structured operators

/// diag(v) * M with v an Nx1 column.
inline Var scale_rows(const Var& m, const Var& v) {
  if (v.cols() != 1 || v.rows() != m.rows()) throw InputError("scale_rows: bad scaler shape");
  Matrix out = m.value().array().colwise() * v.value().col(0).array();
  return detail::make_op(std::move(out), {m, v}, [](detail::Node& n) {
    const Matrix& mv = n.parents[0]->value;
    const Matrix& vv = n.parents[1]->value;
    if (detail::parent_needs(n, 0))
      detail::grad_of(n, 0).array() += n.grad.array().colwise() * vv.col(0).array();
    if (detail::parent_needs(n, 1))
      detail::grad_of(n, 1).col(0) += n.grad.cwiseProduct(mv).rowwise().sum();
  });
}

/// M * diag(v) with v an Nx1 column matching M's columns.
inline Var scale_cols(const Var& m, const Var& v) {
  if (v.cols() != 1 || v.rows() != m.cols()) throw InputError("scale_cols: bad scaler shape");
  Matrix out = m.value().array().rowwise() * v.value().col(0).transpose().array();
  return detail::make_op(std::move(out), {m, v}, [](detail::Node& n) {
    const Matrix& mv = n.parents[0]->value;
    const Matrix& vv = n.parents[1]->value;
    if (detail::parent_needs(n, 0))
      detail::grad_of(n, 0).array() += n.grad.array().rowwise() * vv.col(0).transpose().array();
    if (detail::parent_needs(n, 1))
      detail::grad_of(n, 1).col(0) += n.grad.cwiseProduct(mv).colwise().sum().transpose();
  });
}

/// out(i, j) = s(i) + t(j) for Nx1 columns s, t.
inline Var outer_add(const Var& s, const Var& t) {
  if (s.cols() != 1 || t.cols() != 1) throw InputError("outer_add expects column vectors");
  Matrix out = s.value() * Matrix::Ones(1, t.rows()) + Matrix::Ones(s.rows(), 1) * t.value().transpose();
  return detail::make_op(std::move(out), {s, t}, [](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0).col(0) += n.grad.rowwise().sum();
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1).col(0) += n.grad.colwise().sum().transpose();
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw InputError("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return detail::make_op(std::move(out), {a, b}, [](detail::Node& n) {
    Eigen::Index ca = n.parents[0]->value.cols();
    Eigen::Index cb = n.parents[1]->value.cols();
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0) += n.grad.leftCols(ca);
    if (detail::parent_needs(n, 1)) detail::grad_of(n, 1) += n.grad.rightCols(cb);
  });
}

inline Var col(const Var& a, Eigen::Index k) {
  if (k < 0 || k >= a.cols()) throw InputError("col: index out of range");
  return detail::make_op(a.value().col(k), {a}, [k](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0).col(k) += n.grad.col(0);
  });
}

inline Var element(const Var& a, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || i >= a.rows() || j < 0 || j >= a.cols()) throw InputError("element: index out of range");
  Matrix out(1, 1);
  out(0, 0) = a.value()(i, j);
  return detail::make_op(std::move(out), {a}, [i, j](detail::Node& n) {
    if (detail::parent_needs(n, 0)) detail::grad_of(n, 0)(i, j) += n.grad(0, 0);
  });
}

/// Subtracts per-column means (centering used by the linear-kernel HSIC).
inline Var center_columns(const Var& a) {
  Matrix mean = a.value().colwise().mean();
  Matrix out = a.value().rowwise() - mean.row(0);
  return detail::make_op(std::move(out), {a}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    Matrix gmean = n.grad.colwise().mean();
    detail::grad_of(n, 0) += n.grad.rowwise() - gmean.row(0);
  });
}

/// Numerically stable per-row softmax.
inline Var row_softmax(const Var& scores) {
  Matrix v = scores.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return detail::make_op(std::move(v), {scores}, [](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    Matrix& g = detail::grad_of(n, 0);
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      double dot = n.grad.row(i).dot(n.value.row(i));
      g.row(i).array() += (n.grad.row(i).array() - dot) * n.value.row(i).array();
    }
  });
}

/// Per-row cross-entropy against integer targets: out(i) = logsumexp(row_i) - row_i[y_i].
inline Var cross_entropy_rows(const Var& scores, const Eigen::VectorXi& labels) {
  if (labels.size() != scores.rows()) throw InputError("cross_entropy_rows: label count mismatch");
  const Matrix& s = scores.value();
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= s.cols()) throw InputError("cross_entropy_rows: label out of range");
  Matrix out(s.rows(), 1);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double m = s.row(i).maxCoeff();
    double lse = m + std::log((s.row(i).array() - m).exp().sum());
    out(i, 0) = lse - s(i, labels[i]);
  }
  return detail::make_op(std::move(out), {scores}, [labels](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    const Matrix& s = n.parents[0]->value;
    Matrix& g = detail::grad_of(n, 0);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double m = s.row(i).maxCoeff();
      Eigen::RowVectorXd p = (s.row(i).array() - m).exp();
      p /= p.sum();
      p(labels[i]) -= 1.0;
      g.row(i) += n.grad(i, 0) * p;
    }
  });
}

/// base + coeff_m * theta_m scattered symmetrically at the candidate pairs.
/// Realizes the relaxed structural intervention A + (E - I - 2A) .* Theta with
/// theta materialized only on the candidate set.
inline Var scatter_symmetric(const Matrix& base, const std::vector<std::pair<int, int>>& pairs,
                             const Eigen::VectorXd& coeff, const Var& theta) {
  if (theta.cols() != 1 || theta.rows() != static_cast<Eigen::Index>(pairs.size()) ||
      coeff.size() != theta.rows())
    throw InputError("scatter_symmetric: candidate size mismatch");
  Matrix out = base;
  for (std::size_t m = 0; m < pairs.size(); ++m) {
    auto [i, j] = pairs[m];
    double delta = coeff[m] * theta.value()(static_cast<Eigen::Index>(m), 0);
    out(i, j) += delta;
    out(j, i) += delta;
  }
  return detail::make_op(std::move(out), {theta}, [pairs, coeff](detail::Node& n) {
    if (!detail::parent_needs(n, 0)) return;
    Matrix& g = detail::grad_of(n, 0);
    for (std::size_t m = 0; m < pairs.size(); ++m) {
      auto [i, j] = pairs[m];
      g(static_cast<Eigen::Index>(m), 0) += coeff[m] * (n.grad(i, j) + n.grad(j, i));
    }
  });
}

// Small conveniences used all over the objective code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return matmul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace iene::ad
