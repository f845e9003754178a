#include "doctest.h"
#include "memora/lora.hpp"
#include "memora/rng.hpp"

using namespace memora;

namespace {

Denoiser small_model(std::uint64_t seed = 1) {
  DenoiserSpec spec;
  spec.latent = LatentShape{1, 4, 4};
  spec.hidden = 32;
  spec.bottleneck = 16;
  Denoiser m(spec, seed);
  // Give the output head weights so that predictions depend on the adapted layers.
  Rng rng(seed + 100);
  for (const std::string name : {"out.weight", "skip.weight"}) {
    Matrix& w = m.params().at(name);
    w = 0.1 * rng.normal_matrix(w.rows(), w.cols());
  }
  return m;
}

LoraAdapter random_adapter(const Denoiser& host, int rank, double beta, std::uint64_t seed) {
  LoraAdapter a = init_adapter(host, rank, beta, seed);
  Rng rng(seed);
  for (auto& l : a.layers) l.B = rng.normal_matrix(l.B.rows(), l.B.cols());
  return a;
}

}  // namespace

TEST_CASE("a fresh adapter is transparent") {
  const Denoiser host = small_model();
  const LoraAdapter a = init_adapter(host, 4, 1.0, 5);
  CHECK(a.rank == 4);
  CHECK(a.host_checksum == host.checksum());
  Rng rng(2);
  const Matrix z = rng.normal_matrix(5, 16);
  const Matrix cond = host.cond_rows(host.condition(2), 5);
  CHECK(adapted_forward(host, a, z, 300, cond) == host.predict(z, 300, cond));
  CHECK(apply_adapter(host, a).params() == host.params());
}

TEST_CASE("adapted weights match the dense oracle") {
  const Denoiser host = small_model();
  const LoraAdapter a = random_adapter(host, 1, 0.7, 3);
  const Denoiser adapted = apply_adapter(host, a);
  for (const LoraLayer& l : a.layers) {
    // Explicit W + beta * B * A, entry by entry.
    const Matrix& w = host.params().at(l.name + ".weight");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double ba = 0.0;
        for (Eigen::Index r = 0; r < l.A.rows(); ++r) ba += l.B(i, r) * l.A(r, j);
        worst = std::max(worst, std::abs(adapted.params().at(l.name + ".weight")(i, j) - (w(i, j) + 0.7 * ba)));
      }
    CHECK(worst <= 1e-10);
  }
  Rng rng(4);
  const Matrix z = rng.normal_matrix(3, 16);
  const Matrix cond = host.cond_rows(host.condition(1), 3);
  CHECK((adapted_forward(host, a, z, 200, cond) - adapted.predict(z, 200, cond)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("beta scales the delta linearly") {
  const Denoiser host = small_model();
  const LoraAdapter a = random_adapter(host, 2, 1.0, 3);
  const DeltaSet d1 = dense_delta(a), d2 = dense_delta(with_beta(a, 2.0)), d0 = dense_delta(with_beta(a, 0.0));
  for (const auto& [name, d] : d1) {
    CHECK((d2.at(name) - 2.0 * d).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(d0.at(name).cwiseAbs().maxCoeff() == 0.0);
  }
  Rng rng(5);
  const Matrix z = rng.normal_matrix(3, 16);
  const Matrix cond = host.cond_rows(host.condition(0), 3);
  CHECK(apply_adapter(host, with_beta(a, 0.0)).predict(z, 100, cond) == host.predict(z, 100, cond));
}

TEST_CASE("adapter validation") {
  const Denoiser host = small_model();
  // The smallest condition projection is hidden x cond_dim = 32 x 16 and the
  // gate is 16 x 16, so rank 8 is the largest accepted.
  CHECK_NOTHROW(init_adapter(host, 8, 1.0, 1));
  CHECK_THROWS(init_adapter(host, 9, 1.0, 1));
  CHECK_THROWS(init_adapter(host, 0, 1.0, 1));
  LoraAdapter a = init_adapter(host, 2, 1.0, 1);
  a.layers[0].name = "nope.cond";
  CHECK_THROWS(check_adapter(host, a));
}

TEST_CASE("two-adapter merge") {
  const Denoiser host = small_model();
  const LoraAdapter a1 = random_adapter(host, 1, 1.0, 7), a2 = random_adapter(host, 1, 1.0, 8);
  const DeltaSet d1 = dense_delta(a1), d2 = dense_delta(a2);
  const DeltaSet m1 = merge_adapters(a1, a2, 1.0), m0 = merge_adapters(a1, a2, 0.0);
  const DeltaSet half = merge_adapters(a1, a2, 0.5);
  for (const auto& [name, d] : d1) {
    CHECK(m1.at(name) == d);
    CHECK(m0.at(name) == d2.at(name));
    const LoraLayer &l1 = a1.layer(name), &l2 = a2.layer(name);
    Matrix oracle(d.rows(), d.cols());
    for (Eigen::Index i = 0; i < d.rows(); ++i)
      for (Eigen::Index j = 0; j < d.cols(); ++j)
        oracle(i, j) = 0.5 * l1.B(i, 0) * l1.A(0, j) + 0.5 * l2.B(i, 0) * l2.A(0, j);
    CHECK((half.at(name) - oracle).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("n-adapter merge normalises weights") {
  const Denoiser host = small_model();
  const LoraAdapter a1 = random_adapter(host, 1, 1.0, 7), a2 = random_adapter(host, 1, 1.0, 8);
  const DeltaSet pairwise = merge_adapters(a1, a2, 0.25);
  const DeltaSet general = merge_adapters({a1, a2}, {1.0, 3.0});
  for (const auto& [name, d] : pairwise) CHECK((general.at(name) - d).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(merge_adapters({a1, a2}, {1.0}));
}
