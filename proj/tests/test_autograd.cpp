#include <functional>

#include "doctest.h"
#include "memora/autograd.hpp"
#include "memora/denoiser.hpp"
#include "memora/rng.hpp"

using namespace memora;

namespace {

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

// Largest relative gap between the tape gradient and central differences.
double gradient_gap(const Build& build, const std::vector<Matrix>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(tape.leaf(m));
  tape.backward(build(tape, leaves));
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix g = tape.grad(leaves[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double shift) {
        std::vector<Matrix> moved = inputs;
        moved[k](i) += shift;
        Tape t;
        std::vector<Var> v;
        for (const auto& m : moved) v.push_back(t.constant(m));
        return t.value(build(t, v))(0, 0);
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(i)) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and linear ops") {
  Rng rng(1);
  const Matrix x = rng.normal_matrix(4, 3), w = rng.normal_matrix(5, 3), b = rng.normal_matrix(1, 5);
  const Matrix target = rng.normal_matrix(4, 5);
  CHECK(gradient_gap(
            [&](Tape& t, const std::vector<Var>& v) {
              const Var h = t.silu(t.linear(v[0], v[1], v[2]));
              return t.squared_error(t.add_scalar(t.scale(h, 1.5), 0.2), target);
            },
            {x, w, b}) < 1e-6);
  CHECK(gradient_gap(
            [&](Tape& t, const std::vector<Var>& v) {
              const Var p = t.mul(t.linear(v[0], v[1]), t.axpby(0.5, t.linear(v[0], v[1]), -2.0, t.constant(target)));
              return t.squared_error(t.sub(p, t.constant(target)), Matrix::Zero(4, 5));
            },
            {x, w}) < 1e-6);
}

TEST_CASE("row gathers, broadcasts and matmul") {
  Rng rng(2);
  const Matrix table = rng.normal_matrix(5, 3), row = rng.normal_matrix(1, 3), m = rng.normal_matrix(3, 2);
  CHECK(gradient_gap(
            [&](Tape& t, const std::vector<Var>& v) {
              const Var g = t.gather_rows(v[0], {4, 0, 0, 2});
              const Var s = t.add(g, t.broadcast_rows(v[1], 4));
              return t.squared_error(t.matmul(s, v[2]), Matrix::Ones(4, 2));
            },
            {table, row, m}) < 1e-6);
}

TEST_CASE("classification losses") {
  Rng rng(3);
  const Matrix logits = rng.normal_matrix(6, 4);
  CHECK(gradient_gap([&](Tape& t, const std::vector<Var>& v) { return t.cross_entropy(v[0], {0, 1, 2, 3, 3, 1}); },
                     {logits}) < 1e-6);
  CHECK(gradient_gap([&](Tape& t, const std::vector<Var>& v) { return t.log_prob(v[0], 2); }, {logits}) < 1e-6);
}

TEST_CASE("clamp passes gradient only inside the range") {
  Tape t;
  Matrix x(1, 3);
  x << -2.0, 0.3, 2.0;
  const Var v = t.leaf(x);
  t.backward(t.squared_error(t.clamp(v, -1.0, 1.0), Matrix::Zero(1, 3)));
  const Matrix g = t.grad(v);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == doctest::Approx(0.6));
  CHECK(g(0, 2) == 0.0);
}

TEST_CASE("denoiser gradients on the tape match finite differences") {
  DenoiserSpec spec;
  spec.latent = LatentShape{1, 3, 3};
  spec.hidden = 8;
  spec.bottleneck = 6;
  spec.cond_dim = 4;
  spec.time_features = 8;
  spec.time_dim = 8;
  Denoiser model(spec, 5);
  Rng rng(6);
  // Non-zero heads so every layer is on the gradient path.
  for (const std::string name : {"out.weight", "skip.weight", "mid.gate.weight"})
    model.params().at(name) = 0.3 * rng.normal_matrix(model.params().at(name).rows(), model.params().at(name).cols());
  const Matrix z = rng.normal_matrix(3, 9), target = rng.normal_matrix(3, 9);
  const Matrix tf = time_features({10, 400, 900}, spec.time_features);
  const Matrix cond = model.cond_rows(model.condition(1), 3);
  CHECK((model.predict(z, std::vector<int>{10, 400, 900}, cond).row(1) - model.predict(z.row(1), 400, cond.row(1)))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  const std::vector<std::string> names{"enc0.cond.weight", "mid.weight", "out.weight", "time.fc1.weight"};
  std::vector<Matrix> inputs;
  for (const auto& n : names) inputs.push_back(model.params().at(n));
  CHECK(gradient_gap(
            [&](Tape& t, const std::vector<Var>& v) {
              std::map<std::string, Var> p;
              for (const auto& [n, m] : model.params().entries()) p[n] = t.constant(m);
              for (std::size_t k = 0; k < names.size(); ++k) p[names[k]] = v[k];
              const TapeOps ops{t};
              const Var out = denoiser_forward(ops, [&](const std::string& n) { return p.at(n); }, t.constant(z),
                                               t.constant(tf), t.constant(cond));
              return t.squared_error(out, target);
            },
            inputs) < 1e-5);
}
