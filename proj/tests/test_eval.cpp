#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "memora/eval.hpp"
#include "memora/rng.hpp"

using namespace memora;

namespace {

// Reference Frechet distance via trace(sqrt(sqrt(S1) S2 sqrt(S1))), which is
// symmetric and avoids the non-symmetric product the library works with.
Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

double oracle_fid(const Matrix& a, const Matrix& b) {
  const RowVector ma = a.colwise().mean(), mb = b.colwise().mean();
  const Matrix ca = (a.rowwise() - ma).transpose() * (a.rowwise() - ma) / (a.rows() - 1.0);
  const Matrix cb = (b.rowwise() - mb).transpose() * (b.rowwise() - mb) / (b.rows() - 1.0);
  const Matrix r = psd_sqrt(ca);
  return (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * psd_sqrt(r * cb * r).trace();
}

RecoveryCurve curve(std::vector<double> v, long every = 50) {
  RecoveryCurve c;
  for (std::size_t i = 0; i < v.size(); ++i) c.steps.push_back(static_cast<long>(i) * every);
  c.asr_values = std::move(v);
  return c;
}

}  // namespace

TEST_CASE("fid of a set with itself is zero") {
  Rng rng(1);
  const Matrix a = rng.normal_matrix(400, 8);
  CHECK(std::abs(fid(a, a)) <= 1e-8);
  CHECK(std::abs(fid(a, a, 1e-6)) <= 1e-8);
}

TEST_CASE("fid is symmetric") {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const Matrix a = rng.normal_matrix(200, 6), b = 1.5 * rng.normal_matrix(300, 6);
    CHECK(std::abs(fid(a, b) - fid(b, a)) <= 1e-10);
  }
}

TEST_CASE("fid agrees with an independent oracle") {
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    const Matrix mix = rng.normal_matrix(6, 6);
    const Matrix a = rng.normal_matrix(500, 6);
    const Matrix b = (rng.normal_matrix(500, 6) * mix).array() + 0.3;
    CHECK(fid(a, b) == doctest::Approx(oracle_fid(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("fid between shifted unit Gaussians approaches the squared shift") {
  Rng rng(4);
  RowVector delta(8);
  delta << 1.0, -0.5, 0.25, 0.0, 0.75, -1.0, 0.5, 0.0;
  const Matrix a = rng.normal_matrix(5000, 8);
  const Matrix b = rng.normal_matrix(5000, 8).rowwise() + delta;
  CHECK(fid(a, b) == doctest::Approx(delta.squaredNorm()).epsilon(0.05));
}

TEST_CASE("fid rejects singular covariances without a ridge") {
  Rng rng(5);
  Matrix a = rng.normal_matrix(50, 4);
  a.col(3) = a.col(2);
  CHECK_THROWS(fid(a, rng.normal_matrix(50, 4)));
  CHECK(std::isfinite(fid(a, rng.normal_matrix(50, 4), 1e-6)));
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ties take the average rank: ranks of y are 1.5, 1.5, 3, 4.
  const double r = spearman({1, 2, 3, 4}, {0, 0, 5, 9});
  const double rx[] = {1, 2, 3, 4}, ry[] = {1.5, 1.5, 3, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - 2.5) * (ry[i] - 2.5);
    sxx += (rx[i] - 2.5) * (rx[i] - 2.5);
    syy += (ry[i] - 2.5) * (ry[i] - 2.5);
  }
  CHECK(r == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-12));
}

TEST_CASE("forgetting classification") {
  const ForgettingVerdict zero = classify_forgetting(curve(std::vector<double>(11, 0.0)));
  CHECK(zero.mode == ForgettingMode::long_term);
  CHECK(!zero.steps_to_threshold);

  const ForgettingVerdict above = classify_forgetting(curve(std::vector<double>(11, 0.6)));
  CHECK(above.mode == ForgettingMode::short_term);
  CHECK(above.steps_to_threshold == 0);

  // Crossing at step 250 is inside the horizon, at 300 it is not.
  CHECK(classify_forgetting(curve({0, 0, 0, 0, 0, 0.5, 0.9})).mode == ForgettingMode::short_term);
  CHECK(classify_forgetting(curve({0, 0, 0, 0, 0, 0.5, 0.9})).steps_to_threshold == 250);
  const ForgettingVerdict late = classify_forgetting(curve({0, 0, 0, 0, 0, 0.4, 0.9}));
  CHECK(late.mode == ForgettingMode::long_term);
  CHECK(late.steps_to_threshold == 300);
  CHECK(to_string(ForgettingMode::short_term) == "short_term");
  CHECK_THROWS(classify_forgetting(curve({0.0, 0.1, 0.2})));
  CHECK_THROWS(classify_forgetting(curve(std::vector<double>(11, 0.0)), 1.5));
}

TEST_CASE("prompt batches are reproducible per row") {
  const Matrix a = prompt_batch(42, 5, 16), b = prompt_batch(42, 3, 16);
  CHECK(a.topRows(3) == b);
  CHECK(a.row(0) != a.row(1));
}
