#include <cmath>
#include <set>

#include "doctest.h"
#include "memora/memora.hpp"
#include "memora/rng.hpp"

using namespace memora;

namespace {

DenoiserSpec small_spec() {
  DenoiserSpec spec;
  spec.latent = LatentShape{1, 4, 4};
  spec.hidden = 32;
  spec.bottleneck = 16;
  return spec;
}

}  // namespace

TEST_CASE("slerp endpoints are exact") {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const RowVector a = rng.normal_matrix(1, 32), b = rng.normal_matrix(1, 32);
    CHECK(slerp(a, b, 0.0) == a);
    CHECK(slerp(a, b, 1.0) == b);
  }
}

TEST_CASE("slerp is symmetric bit for bit") {
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const RowVector a = rng.normal_matrix(1, 32), b = rng.normal_matrix(1, 32);
    const double p = rng.uniform(0.0, 1.0);
    CHECK(slerp(a, b, p) == slerp(b, a, 1.0 - p));
  }
}

TEST_CASE("slerp preserves a shared norm") {
  Rng rng(3);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    RowVector a = rng.normal_matrix(1, 32), b = rng.normal_matrix(1, 32);
    b *= a.norm() / b.norm();
    const double p = rng.uniform(0.0, 1.0);
    worst = std::max(worst, std::abs(slerp(a, b, p).norm() - a.norm()) / a.norm());
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("slerp of an orthonormal pair at one half") {
  RowVector a = RowVector::Zero(4), b = RowVector::Zero(4);
  a(0) = 1.0;
  b(1) = 1.0;
  // sin(pi/4) / sin(pi/2) on each side.
  const double w = std::sin(M_PI / 4.0) / std::sin(M_PI / 2.0);
  const RowVector m = slerp(a, b, 0.5);
  CHECK((m - w * (a + b)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(w == doctest::Approx(std::sqrt(2.0) / 2.0));
}

TEST_CASE("slerp rejects degenerate pairs") {
  RowVector a = RowVector::Ones(4);
  CHECK_THROWS(slerp(a, RowVector::Zero(4), 0.5));
  CHECK_THROWS(slerp(a, -a, 0.5));
}

TEST_CASE("six seeds expand to 33 latents") {
  Rng rng(4);
  std::vector<Latent> seeds;
  for (int i = 0; i < 6; ++i) seeds.push_back(make_latent(LatentShape{1, 4, 4}, rng.normal_matrix(1, 16)));
  const ExpansionSet set = expand_latents(seeds);
  CHECK(set.total_count == 33);
  CHECK(set.seeds.size() == 6);
  CHECK(set.interpolants.size() == 27);
  const std::vector<Latent> all = set.all();
  REQUIRE(all.size() == 33);
  for (int i = 0; i < 6; ++i) CHECK(all[i].data == seeds[i].data);
  // Pairs come in lexicographic order, each with every p before moving on.
  CHECK(set.interpolants[0].pair == std::pair{0, 1});
  CHECK(set.interpolants[0].p == 0.25);
  CHECK(set.interpolants[2].p == 0.75);
  CHECK(set.interpolants[3].pair == std::pair{0, 2});
  std::set<std::pair<int, int>> pairs;
  for (const auto& it : set.interpolants) {
    CHECK(it.pair.first < it.pair.second);
    CHECK(it.latent.data == slerp(seeds[it.pair.first].data, seeds[it.pair.second].data, it.p));
    pairs.insert(it.pair);
  }
  CHECK(pairs.size() == 9);
}

TEST_CASE("automemora noise mixes the two predictions") {
  Rng rng(5);
  const Matrix u = rng.normal_matrix(2, 7), m = rng.normal_matrix(2, 7);
  CHECK(automemora_noise(u, m, 0.0) == u);
  CHECK(automemora_noise(u, m, 1.0) == m);
  CHECK((automemora_noise(u, m, 0.5) - 0.5 * (u + m)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("inversion on a zero-output model rescales") {
  const Denoiser model(small_spec(), 3);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  const Latent img = make_latent(LatentShape{1, 4, 4}, RowVector::Zero(16));
  const LatentTrajectory zero_depth = invert_image(model, img, model.condition(0), s, 0);
  REQUIRE(zero_depth.latents.size() == 1);
  CHECK(zero_depth.latents[0].latent.data == img.data);

  Rng rng(6);
  const Latent x = make_latent(LatentShape{1, 4, 4}, rng.normal_matrix(1, 16));
  const LatentTrajectory tr = invert_image(model, x, model.condition(0), s, 15);
  REQUIRE(tr.latents.size() == 16);
  const InferenceSchedule inf = make_inference_schedule(1000, 50);
  const int t = inf.from(35);
  CHECK((tr.last().latent.data - std::sqrt(s.alpha_bar(t) / s.alpha_bar(0)) * x.data).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK(tr.last().step_index == 35);
  CHECK(tr.round_trip_error < 1e-12);

  const LatentTrajectory zeros = invert_image(model, img, model.condition(0), s, 15);
  for (const auto& p : zeros.latents) CHECK(p.latent.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("restarting at the final step keeps the decoded latents") {
  const Denoiser model(small_spec(), 3);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  Rng rng(7);
  std::vector<Latent> seeds;
  for (int i = 0; i < 6; ++i) seeds.push_back(make_latent(LatentShape{1, 4, 4}, 0.3 * rng.normal_matrix(1, 16)));
  const ExpansionSet set = expand_latents(seeds);
  const TrainingSet ts = build_training_set(set, model, model.condition(1), s, 49);
  REQUIRE(ts.images.rows() == 33);
  // One zero-noise step from the last level rescales by sqrt(ab_0 / ab_t), then clamps.
  const InferenceSchedule inf = make_inference_schedule(1000, 50);
  const double k = std::sqrt(s.alpha_bar(0) / s.alpha_bar(inf.from(49)));
  CHECK(k < 1.01);
  const std::vector<Latent> all = set.all();
  for (int i = 0; i < 33; ++i) {
    const RowVector expected = (k * all[i].data).cwiseMax(-1.0).cwiseMin(1.0);
    CHECK((ts.images.row(i) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(ts.condition.concept_id == 1);
  CHECK_THROWS(build_training_set(set, model, model.condition(1), s, 50));
}

TEST_CASE("relearning with zero steps keeps a zero delta") {
  const Denoiser model(small_spec(), 3);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  TrainingSet ts{Matrix::Zero(2, 16), model.condition(1)};
  LoraConfig cfg;
  cfg.steps = 0;
  const RelearnRun run = relearn(model, ts, s, cfg);
  for (const auto& [name, d] : dense_delta(run.final_adapter)) CHECK(d.cwiseAbs().maxCoeff() == 0.0);
  CHECK(run.checkpoints.count(0) == 1);
  const LoraConfig defaults;
  CHECK(defaults.rank == 4);
  CHECK(defaults.steps == 500);
  CHECK(defaults.batch == 1);
}

TEST_CASE("relearning trains the adapter and leaves the host alone") {
  Denoiser model(small_spec(), 3);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  Rng rng(8);
  // A fresh output head is zero and would block every gradient.
  Matrix& head = model.params().at("out.weight");
  head = 0.1 * rng.normal_matrix(head.rows(), head.cols());
  TrainingSet ts{0.5 * rng.normal_matrix(4, 16), model.condition(1)};
  LoraConfig cfg;
  cfg.steps = 20;
  cfg.checkpoint_every = 10;
  cfg.lr = 1e-2;
  const std::string before = model.checksum();
  const RelearnRun run = relearn(model, ts, s, cfg);
  CHECK(model.checksum() == before);
  CHECK(run.train_log.size() == 20);
  CHECK(run.checkpoints.size() == 3);
  CHECK(run.final_adapter.host_checksum == before);
  double moved = 0.0;
  for (const auto& [name, d] : dense_delta(run.final_adapter)) moved += d.norm();
  CHECK(moved > 0.0);
  // Same seed, same run.
  const RelearnRun again = relearn(model, ts, s, cfg);
  CHECK(again.train_log == run.train_log);
}

TEST_CASE("gradient clipping bounds every adapter step") {
  Denoiser model(small_spec(), 3);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  Rng rng(9);
  Matrix& head = model.params().at("out.weight");
  head = 0.1 * rng.normal_matrix(head.rows(), head.cols());
  TrainingSet ts{0.5 * rng.normal_matrix(4, 16), model.condition(1)};
  LoraConfig cfg;
  cfg.steps = 1;
  cfg.checkpoint_every = 1;
  cfg.lr = 1.0;
  cfg.max_grad_norm = 1e-3;
  const RelearnRun run = relearn(model, ts, s, cfg);
  const LoraAdapter& before = run.checkpoints.at(0);
  double sq = 0.0;
  for (std::size_t i = 0; i < before.layers.size(); ++i) {
    sq += (run.final_adapter.layers[i].A - before.layers[i].A).squaredNorm();
    sq += (run.final_adapter.layers[i].B - before.layers[i].B).squaredNorm();
  }
  CHECK(std::sqrt(sq) <= 1e-3 * (1.0 + 1e-12));
  CHECK(std::sqrt(sq) > 0.0);
}
