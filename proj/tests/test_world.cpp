#include "doctest.h"
#include "memora/rng.hpp"
#include "memora/toy_world.hpp"
#include "memora/unlearn.hpp"

using namespace memora;

TEST_CASE("dataset generation is deterministic and balanced") {
  const ConceptDataset a = generate_dataset(4, 256, 16, 0), b = generate_dataset(4, 256, 16, 0);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 1024);
  CHECK(a.class_counts() == std::vector<int>{256, 256, 256, 256});
  CHECK(a.images.maxCoeff() <= 1.0);
  CHECK(a.images.minCoeff() >= -1.0);
  CHECK(generate_dataset(4, 256, 16, 1).images != a.images);
  CHECK(a.images_of(2).rows() == 256);
  CHECK(a.images_of(2, 6).rows() == 6);
}

TEST_CASE("dataset preconditions") {
  CHECK_NOTHROW(generate_dataset(3, 4, 16, 0));
  CHECK_THROWS(generate_dataset(2, 4, 16, 0));
  CHECK_THROWS(generate_dataset(7, 4, 16, 0));
  CHECK_THROWS(generate_dataset(4, 0, 16, 0));
}

TEST_CASE("zero training steps leave the initialisation") {
  const ConceptDataset data = generate_dataset(3, 8, 8, 0);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  DenoiserSpec spec;
  spec.latent = data.shape;
  spec.n_concepts = 3;
  spec.hidden = 16;
  spec.bottleneck = 8;
  DenoiserTrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 4;
  const Denoiser m = train_denoiser(data, s, spec, cfg);
  CHECK(m.params() == Denoiser(spec, derive_seed(4, 0)).params());
}

TEST_CASE("the first loss of a fresh model is near the latent size") {
  const ConceptDataset data = generate_dataset(3, 32, 8, 0);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  DenoiserSpec spec;
  spec.latent = data.shape;
  spec.n_concepts = 3;
  DenoiserTrainConfig cfg;
  cfg.steps = 1;
  cfg.batch = 512;
  std::vector<double> losses;
  train_denoiser(data, s, spec, cfg, &losses);
  REQUIRE(losses.size() == 1);
  // A zero predictor pays E|eps|^2 = 64; over 512 rows the standard error is about 0.5.
  CHECK(losses[0] == doctest::Approx(64.0).epsilon(0.05));
}

TEST_CASE("classifier on the default world") {
  const ConceptDataset data = generate_dataset(4, 256, 16, 1);
  ClassifierTrainConfig cfg;
  cfg.seed = 2;
  const ConceptClassifier clf = train_classifier(data, cfg);
  CHECK(clf.heldout_accuracy() >= 0.98);
  CHECK(clf.features(data.images.topRows(7)).rows() == 7);
  CHECK(clf.features(data.images.topRows(7)).cols() == cfg.feature_dim);
  const Matrix f = clf.features(data.images);
  Matrix twice(2, data.images.cols());
  twice << data.images.row(5), data.images.row(5);
  const Matrix ft = clf.features(twice);
  CHECK(ft.row(0) == ft.row(1));
  CHECK((ft.row(0) - f.row(5)).cwiseAbs().maxCoeff() < 1e-12);

  // Between-concept spread of feature means exceeds the average within-concept spread.
  const RowVector grand = f.colwise().mean();
  double between = 0.0, within = 0.0;
  for (int k = 0; k < 4; ++k) {
    Matrix fk(256, f.cols());
    int r = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      if (data.labels[i] == k) fk.row(r++) = f.row(i);
    const RowVector mk = fk.colwise().mean();
    between += (mk - grand).squaredNorm() / 4.0;
    within += (fk.rowwise() - mk).rowwise().squaredNorm().mean() / 4.0;
  }
  CHECK(between > within);
}

TEST_CASE("classifier training rejects degenerate data") {
  ConceptDataset data = generate_dataset(3, 16, 8, 0);
  ConceptDataset one = data;
  std::fill(one.labels.begin(), one.labels.end(), 0);
  CHECK_THROWS(train_classifier(one, {}));
  ConceptDataset skewed = data;
  // 16 / 28 / 4 rows: a 7:1 ratio against the default limit of 1.5.
  for (std::size_t i = 0; i < skewed.labels.size(); ++i) skewed.labels[i] = i < 16 ? 0 : i < 44 ? 1 : 2;
  CHECK_THROWS(train_classifier(skewed, {}));
}

TEST_CASE("unlearners with zero steps return the base") {
  const ConceptDataset data = generate_dataset(3, 16, 8, 0);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  DenoiserSpec spec;
  spec.latent = data.shape;
  spec.n_concepts = 3;
  spec.hidden = 16;
  spec.bottleneck = 8;
  const Denoiser base(spec, 1);
  ClassifierTrainConfig ccfg;
  ccfg.steps = 10;
  const ConceptClassifier clf = train_classifier(data, ccfg);
  EvalOptions eo;
  eo.n_prompts = 2;
  eo.fid_per_concept = 40;
  eo.sampler.n_infer_steps = 2;
  const UnlearnProbe probe{clf, s, eo};

  NegativeGuidanceConfig ng;
  ng.steps = 0;
  ng.teacher_per_concept = 2;
  ng.teacher_sampler.n_infer_steps = 2;
  CHECK(unlearn_negative_guidance(base, base.condition(1), ng, probe).model.params() == base.params());

  RetrainConfig rt;
  rt.train.steps = 0;
  CHECK(unlearn_retrain_excluding(base, data, 1, s, rt, probe).model.params() == base.params());
}

TEST_CASE("steered rows need a valid fraction") {
  const ConceptDataset data = generate_dataset(3, 8, 8, 0);
  const NoiseSchedule s = make_schedule(1000, 0.00085, 0.012);
  DenoiserSpec spec;
  spec.latent = data.shape;
  spec.n_concepts = 3;
  spec.hidden = 16;
  spec.bottleneck = 8;
  Denoiser m(spec, 1);
  DenoiserTrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 4;
  SteeredRows rows{data.images.topRows(2), data.images.bottomRows(2), {1, 1}, 200, 1.5};
  CHECK_THROWS(fit_denoiser(m, data.images, data.labels, s, cfg, nullptr, &rows));
  rows.fraction = 1.0;
  CHECK_NOTHROW(fit_denoiser(m, data.images, data.labels, s, cfg, nullptr, &rows));
  SteeredRows empty{Matrix(0, data.images.cols()), Matrix(0, data.images.cols()), {}, 200, 0.5};
  CHECK_THROWS(fit_denoiser(m, data.images, data.labels, s, cfg, nullptr, &empty));
}
