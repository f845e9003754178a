#include "memora/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace memora {

namespace {

Matrix sigmoid(const Matrix& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace

Matrix silu(const Matrix& a) { return a.cwiseProduct(sigmoid(a)); }

Matrix softmax_rows(const Matrix& logits) { return log_softmax_rows(logits).array().exp().matrix(); }

Matrix EvalOps::linear(const Matrix& x, const Matrix& w, const Matrix& b) const {
  Matrix y = x * w.transpose();
  y.rowwise() += b.row(0);
  return y;
}

Matrix EvalOps::linear(const Matrix& x, const Matrix& w) const { return x * w.transpose(); }

Matrix EvalOps::silu(const Matrix& a) const { return memora::silu(a); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad,
                        requires_grad ? std::move(backward) : Backward()});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, {}); }

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure only touches parents, which sit at lower indices.
    n.backward(*this, n.grad);
  }
}

Var Tape::linear(Var x, Var w, Var b) {
  Matrix y = value(x) * value(w).transpose();
  y.rowwise() += value(b).row(0);
  return push(std::move(y), any(x) || any(w, b), [x, w, b](Tape& t, const Matrix& g) {
    if (t.any(x)) t.accumulate(x, g * t.value(w));
    if (t.any(w)) t.accumulate(w, g.transpose() * t.value(x));
    if (t.any(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var Tape::linear(Var x, Var w) {
  return push(value(x) * value(w).transpose(), any(x, w), [x, w](Tape& t, const Matrix& g) {
    if (t.any(x)) t.accumulate(x, g * t.value(w));
    if (t.any(w)) t.accumulate(w, g.transpose() * t.value(x));
  });
}

Var Tape::matmul(Var a, Var b) {
  return push(value(a) * value(b), any(a, b), [a, b](Tape& t, const Matrix& g) {
    if (t.any(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.any(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::add(Var a, Var b) {
  return push(value(a) + value(b), any(a, b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  return push(value(a) - value(b), any(a, b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  return push(value(a).cwiseProduct(value(b)), any(a, b), [a, b](Tape& t, const Matrix& g) {
    if (t.any(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.any(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::scale(Var a, double s) {
  return push(s * value(a), any(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, s * g); });
}

Var Tape::axpby(double alpha, Var a, double beta, Var b) {
  return push(alpha * value(a) + beta * value(b), any(a, b),
              [alpha, a, beta, b](Tape& t, const Matrix& g) {
                t.accumulate(a, alpha * g);
                t.accumulate(b, beta * g);
              });
}

Var Tape::add_scalar(Var a, double c) {
  return push((value(a).array() + c).matrix(), any(a),
              [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var Tape::silu(Var a) {
  return push(memora::silu(value(a)), any(a), [a](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    const Matrix s = sigmoid(x);
    const Matrix d = s.array() * (1.0 + x.array() * (1.0 - s.array()));
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  return push(value(a).cwiseMax(lo).cwiseMin(hi), any(a), [a, lo, hi](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    t.accumulate(a, (x.array() > lo && x.array() < hi).select(g, 0.0).matrix());
  });
}

Var Tape::broadcast_rows(Var row, Eigen::Index n) {
  if (value(row).rows() != 1) throw std::invalid_argument("broadcast_rows: expected a single row");
  return push(value(row).replicate(n, 1), any(row),
              [row](Tape& t, const Matrix& g) { t.accumulate(row, g.colwise().sum()); });
}

Var Tape::gather_rows(Var table, const std::vector<int>& rows) {
  const Matrix& src = value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = src.row(rows[i]);
  return push(std::move(out), any(table), [table, rows](Tape& t, const Matrix& g) {
    Matrix acc = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    for (std::size_t i = 0; i < rows.size(); ++i) acc.row(rows[i]) += g.row(i);
    t.accumulate(table, acc);
  });
}

Var Tape::squared_error(Var pred, const Matrix& target) {
  const Matrix diff = value(pred) - target;
  const double n = static_cast<double>(diff.rows());
  Matrix loss(1, 1);
  loss(0, 0) = diff.squaredNorm() / n;
  return push(std::move(loss), any(pred), [pred, diff, n](Tape& t, const Matrix& g) {
    t.accumulate(pred, (2.0 * g(0, 0) / n) * diff);
  });
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
  const Matrix logp = log_softmax_rows(value(logits));
  const double n = static_cast<double>(labels.size());
  Matrix loss(1, 1);
  loss(0, 0) = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) loss(0, 0) -= logp(i, labels[i]);
  loss(0, 0) /= n;
  return push(std::move(loss), any(logits), [logits, logp, labels, n](Tape& t, const Matrix& g) {
    Matrix d = logp.array().exp();
    for (std::size_t i = 0; i < labels.size(); ++i) d(i, labels[i]) -= 1.0;
    t.accumulate(logits, (g(0, 0) / n) * d);
  });
}

Var Tape::log_prob(Var logits, int label) {
  const Matrix logp = log_softmax_rows(value(logits));
  Matrix out(1, 1);
  out(0, 0) = logp.col(label).sum();
  return push(std::move(out), any(logits), [logits, logp, label](Tape& t, const Matrix& g) {
    Matrix d = -logp.array().exp();
    d.col(label).array() += 1.0;
    t.accumulate(logits, g(0, 0) * d);
  });
}

}  // namespace memora
