#pragma once

#include <functional>
#include <vector>

#include "memora/types.hpp"

namespace memora {

// Minimal reverse-mode tape over dense matrices. Enough for the denoiser,
// the classifier, the adapter and the attack chain; nothing more.
struct Var {
  int id = -1;
};

class Tape {
 public:
  Var constant(Matrix value);
  Var leaf(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  // Zero matrix of the right shape when nothing flowed into v.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  Var linear(Var x, Var w, Var b);  // x W^T + b, b is a 1 x out row
  Var linear(Var x, Var w);         // x W^T
  Var matmul(Var a, Var b);         // a b
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var axpby(double alpha, Var a, double beta, Var b);
  Var add_scalar(Var a, double c);
  Var silu(Var a);
  Var clamp(Var a, double lo, double hi);  // gradient passes only where unclamped
  Var broadcast_rows(Var row, Eigen::Index n);
  Var gather_rows(Var table, const std::vector<int>& rows);

  // Mean over rows of the squared L2 distance to a constant target.
  Var squared_error(Var pred, const Matrix& target);
  // Mean cross entropy of row logits against integer labels.
  Var cross_entropy(Var logits, const std::vector<int>& labels);
  // Sum over rows of log softmax(logits)[label].
  Var log_prob(Var logits, int label);

  std::size_t size() const { return nodes_.size(); }

 private:
  using Backward = std::function<void(Tape&, const Matrix&)>;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward);
  void accumulate(Var v, const Matrix& g);
  bool any(Var a) const { return nodes_[a.id].requires_grad; }
  bool any(Var a, Var b) const { return any(a) || any(b); }

  std::vector<Node> nodes_;
};

// Two backends for code written once against the same vocabulary: EvalOps
// runs on plain matrices, TapeOps records onto a Tape.
struct EvalOps {
  using Value = Matrix;
  Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) const;
  Matrix linear(const Matrix& x, const Matrix& w) const;
  Matrix add(const Matrix& a, const Matrix& b) const { return a + b; }
  Matrix mul(const Matrix& a, const Matrix& b) const { return a.cwiseProduct(b); }
  Matrix add_scalar(const Matrix& a, double c) const { return a.array() + c; }
  Matrix silu(const Matrix& a) const;
};

struct TapeOps {
  using Value = Var;
  Tape& tape;
  Var linear(Var x, Var w, Var b) const { return tape.linear(x, w, b); }
  Var linear(Var x, Var w) const { return tape.linear(x, w); }
  Var add(Var a, Var b) const { return tape.add(a, b); }
  Var mul(Var a, Var b) const { return tape.mul(a, b); }
  Var add_scalar(Var a, double c) const { return tape.add_scalar(a, c); }
  Var silu(Var a) const { return tape.silu(a); }
};

Matrix silu(const Matrix& a);
Matrix softmax_rows(const Matrix& logits);

}  // namespace memora
