#include "memora/toy_world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace memora {

std::string to_string(GlyphKind kind) {
  switch (kind) {
    case GlyphKind::square: return "square";
    case GlyphKind::ring: return "ring";
    case GlyphKind::plus: return "plus";
    case GlyphKind::saltire: return "saltire";
    case GlyphKind::diamond: return "diamond";
    case GlyphKind::bars: return "bars";
  }
  return "unknown";
}

RenderSpec default_render_spec(int n_concepts) {
  static const std::vector<GlyphSpec> families = {
      {GlyphKind::square, 2.5, 4.0, 0.0},   {GlyphKind::ring, 3.5, 5.0, 0.9},
      {GlyphKind::plus, 3.5, 5.5, 1.0},     {GlyphKind::saltire, 3.5, 5.5, 0.9},
      {GlyphKind::diamond, 3.5, 5.5, 0.0},  {GlyphKind::bars, 3.5, 5.0, 0.8},
  };
  if (n_concepts < 3) throw std::invalid_argument("need at least three concepts");
  if (n_concepts > static_cast<int>(families.size()))
    throw std::invalid_argument(fmt::format("at most {} glyph families are available", families.size()));
  RenderSpec spec;
  spec.glyphs.assign(families.begin(), families.begin() + n_concepts);
  return spec;
}

namespace {

double box(double dx, double dy, double hx, double hy) {
  return std::max(std::abs(dx) - hx, std::abs(dy) - hy);
}

double cross(double u, double v, double len, double hw) {
  return std::min(box(u, v, len, hw), box(u, v, hw, len));
}

}  // namespace

RowVector render_glyph(const GlyphSpec& g, const RenderSpec& render, int n, Rng& rng) {
  const double k = n / 16.0;
  const double mid = (n - 1) / 2.0;
  const double cx = mid + k * rng.uniform(-render.jitter, render.jitter);
  const double cy = mid + k * rng.uniform(-render.jitter, render.jitter);
  const double amp = rng.uniform(render.amp_lo, render.amp_hi);
  const double size = k * rng.uniform(g.size_lo, g.size_hi);
  const double hw = k * g.half_width;

  RowVector img(n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dx = x - cx, dy = y - cy;
      double sdf = 0.0;
      switch (g.kind) {
        case GlyphKind::square: sdf = box(dx, dy, size, size); break;
        case GlyphKind::ring: sdf = std::abs(std::hypot(dx, dy) - size) - hw; break;
        case GlyphKind::plus: sdf = cross(dx, dy, size, hw); break;
        case GlyphKind::saltire: {
          const double u = (dx + dy) / std::numbers::sqrt2, v = (dx - dy) / std::numbers::sqrt2;
          sdf = cross(u, v, size, hw);
          break;
        }
        case GlyphKind::diamond: sdf = (std::abs(dx) + std::abs(dy) - size) / std::numbers::sqrt2; break;
        case GlyphKind::bars: {
          const double gap = 2.5 * k;
          sdf = std::min(box(dx, dy - gap, size, hw), box(dx, dy + gap, size, hw));
          break;
        }
      }
      // Anti-aliased coverage of the signed distance field.
      const double cov = std::clamp(0.5 - sdf, 0.0, 1.0);
      img(y * n + x) = -1.0 + (amp + 1.0) * cov;
    }
  return img;
}

ConceptDataset generate_dataset(int n_concepts, int n_per_class, int image_size, std::uint64_t seed) {
  return generate_dataset(default_render_spec(n_concepts), n_per_class, image_size, seed);
}

ConceptDataset generate_dataset(const RenderSpec& render, int n_per_class, int image_size,
                                std::uint64_t seed) {
  const int nc = static_cast<int>(render.glyphs.size());
  if (nc < 3) throw std::invalid_argument("need at least three concepts");
  if (image_size < 8) throw std::invalid_argument("image size must be at least 8");
  if (n_per_class < 1) throw std::invalid_argument("need at least one image per class");
  if (!(render.amp_lo > -1.0 && render.amp_lo <= render.amp_hi && render.amp_hi <= 1.0))
    throw std::invalid_argument("amplitudes must lie in (-1, 1]");

  ConceptDataset d;
  d.n_concepts = nc;
  d.n_per_class = n_per_class;
  d.shape = LatentShape{1, image_size, image_size};
  d.render = render;
  d.seed = seed;
  d.images.resize(static_cast<Eigen::Index>(nc) * n_per_class, image_size * image_size);
  d.labels.reserve(static_cast<std::size_t>(nc) * n_per_class);
  Rng rng(seed);
  // Interleaved by class so any prefix or suffix is balanced.
  Eigen::Index row = 0;
  for (int i = 0; i < n_per_class; ++i)
    for (int c = 0; c < nc; ++c) {
      d.images.row(row++) = render_glyph(render.glyphs[c], render, image_size, rng);
      d.labels.push_back(c);
    }
  return d;
}

Matrix ConceptDataset::images_of(int concept_id, Eigen::Index limit) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == concept_id && (limit < 0 || static_cast<Eigen::Index>(rows.size()) < limit))
      rows.push_back(static_cast<Eigen::Index>(i));
  Matrix out(static_cast<Eigen::Index>(rows.size()), images.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = images.row(rows[i]);
  return out;
}

std::vector<int> ConceptDataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(n_concepts), 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

Denoiser train_denoiser(const ConceptDataset& data, const NoiseSchedule& sched,
                        const DenoiserSpec& spec, const DenoiserTrainConfig& config,
                        std::vector<double>* losses) {
  if (data.size() == 0) throw std::invalid_argument("train_denoiser: empty dataset");
  if (spec.latent.size() != data.images.cols())
    throw std::invalid_argument("train_denoiser: dataset and model shapes differ");
  Denoiser model(spec, derive_seed(config.seed, 0));
  fit_denoiser(model, data.images, data.labels, sched, config, losses);
  return model;
}

void fit_denoiser(Denoiser& model, const Matrix& images, const std::vector<int>& labels,
                  const NoiseSchedule& sched, const DenoiserTrainConfig& config,
                  std::vector<double>* losses, const SteeredRows* steered) {
  if (images.rows() == 0 || static_cast<Eigen::Index>(labels.size()) != images.rows())
    throw std::invalid_argument("fit_denoiser: images and labels disagree");
  const int n_steered = steered ? static_cast<int>(steered->inputs.rows()) : 0;
  if (steered) {
    if (steered->targets.rows() != n_steered || static_cast<int>(steered->labels.size()) != n_steered ||
        steered->inputs.cols() != images.cols() || steered->targets.cols() != images.cols())
      throw std::invalid_argument("fit_denoiser: steered rows disagree in shape");
    if (n_steered == 0 || !(steered->fraction >= 0.0 && steered->fraction <= 1.0))
      throw std::invalid_argument("fit_denoiser: steered rows need rows and a fraction in [0, 1]");
    if (steered->min_t < 0 || steered->min_t >= sched.n_train_steps)
      throw std::invalid_argument("fit_denoiser: steered min_t outside the schedule");
  }
  Rng rng(derive_seed(config.seed, 1));
  Adam adam;
  const int n = static_cast<int>(images.rows());
  const int b = config.batch;
  const std::vector<std::string> all = model.params().names();
  Matrix x0(b, images.cols());
  std::vector<int> y(static_cast<std::size_t>(b)), t(static_cast<std::size_t>(b));
  std::vector<int> pick(static_cast<std::size_t>(b));
  for (long step = 0; step < config.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      if (steered && rng.bernoulli(steered->fraction))
        pick[i] = n + rng.uniform_int(0, n_steered - 1);
      else
        pick[i] = rng.uniform_int(0, n - 1);
      if (pick[i] < n) {
        x0.row(i) = images.row(pick[i]);
        y[i] = labels[pick[i]];
      } else {
        x0.row(i) = steered->inputs.row(pick[i] - n);
        y[i] = steered->labels[pick[i] - n];
      }
    }
    for (int i = 0; i < b; ++i)
      if (rng.bernoulli(config.p_uncond) && pick[i] < n) y[i] = model.null_index();
    for (int i = 0; i < b; ++i)
      t[i] = rng.uniform_int(pick[i] < n ? 0 : steered->min_t, sched.n_train_steps - 1);
    Matrix eps = rng.normal_matrix(b, images.cols());
    const Matrix zt = forward_diffuse(x0, t, eps, sched);
    for (int i = 0; i < b; ++i)
      if (pick[i] >= n) {
        const double ab = sched.alpha_bar(t[i]);
        eps.row(i) = (zt.row(i) - std::sqrt(ab) * steered->targets.row(pick[i] - n)) / std::sqrt(1.0 - ab);
      }

    Tape tape;
    auto P = params_on_tape(tape, model.params(), all);
    auto p = [&P](const std::string& name) { return P.at(name); };
    const Var cond = tape.gather_rows(P.at("cond.table"), y);
    const Var pred = denoiser_forward(TapeOps{tape}, p, tape.constant(zt),
                                      tape.constant(time_features(t, model.spec().time_features)), cond);
    const Var loss = tape.squared_error(pred, eps);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value))
      throw std::runtime_error(fmt::format("denoiser loss became non-finite at step {}", step));
    if (losses) losses->push_back(value);
    tape.backward(loss);
    GradMap grads;
    for (const auto& [name, var] : P) grads.emplace(name, tape.grad(var));
    const double lr = config.cosine_decay ? cosine_lr(config.lr, step, config.steps) : config.lr;
    adam.step(model.params(), grads, lr);
  }
}

ConceptClassifier::ConceptClassifier(const ClassifierSpec& spec, std::uint64_t seed) : spec_(spec) {
  Rng rng(seed);
  auto layer = [&](const std::string& name, int out, int in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(out, in), b(1, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
    params_.add(name + ".weight", std::move(w));
    params_.add(name + ".bias", std::move(b));
  };
  layer("fc1", spec.hidden, spec.input_dim);
  layer("fc2", spec.feature_dim, spec.hidden);
  layer("head", spec.n_concepts, spec.feature_dim);
}

ConceptClassifier::ConceptClassifier(const ClassifierSpec& spec, ParamSet params, double heldout_accuracy)
    : spec_(spec), params_(std::move(params)), heldout_accuracy_(heldout_accuracy) {
  auto check = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    const Matrix& m = params_.at(name);
    if (m.rows() != r || m.cols() != c)
      throw std::invalid_argument("classifier parameter '" + name + "' has the wrong shape");
  };
  check("fc1.weight", spec.hidden, spec.input_dim);
  check("fc2.weight", spec.feature_dim, spec.hidden);
  check("head.weight", spec.n_concepts, spec.feature_dim);
}

Matrix ConceptClassifier::features(const Matrix& images) const {
  if (images.cols() != spec_.input_dim) throw std::invalid_argument("classifier: image size mismatch");
  auto p = [this](const std::string& name) -> const Matrix& { return params_.at(name); };
  return classifier_features(EvalOps{}, p, images);
}

Matrix ConceptClassifier::logits(const Matrix& images) const {
  return EvalOps{}.linear(features(images), params_.at("head.weight"), params_.at("head.bias"));
}

Matrix ConceptClassifier::probabilities(const Matrix& images) const { return softmax_rows(logits(images)); }

std::vector<int> ConceptClassifier::predict(const Matrix& images) const {
  const Matrix l = logits(images);
  std::vector<int> out(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index r = 0; r < l.rows(); ++r) l.row(r).maxCoeff(&out[r]);
  return out;
}

double accuracy(const ConceptClassifier& clf, const Matrix& images, const std::vector<int>& labels) {
  if (images.rows() == 0) return 0.0;
  const std::vector<int> pred = clf.predict(images);
  long hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ConceptClassifier train_classifier(const ConceptDataset& data, const ClassifierTrainConfig& config) {
  const std::vector<int> counts = data.class_counts();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  const auto populated = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; });
  if (populated < 2) throw std::invalid_argument("train_classifier: need at least two populated classes");
  if (*lo == 0 || static_cast<double>(*hi) / *lo > config.max_imbalance)
    throw std::invalid_argument(fmt::format("train_classifier: class counts {}..{} exceed imbalance ratio {}",
                                            *lo, *hi, config.max_imbalance));

  const Eigen::Index n = data.size();
  const Eigen::Index n_hold = static_cast<Eigen::Index>(std::floor(config.holdout_fraction * n));
  const Eigen::Index n_train = n - n_hold;
  if (n_train < 1) throw std::invalid_argument("train_classifier: nothing left to train on");

  ClassifierSpec spec{static_cast<int>(data.images.cols()), config.hidden, config.feature_dim,
                      data.n_concepts};
  ConceptClassifier clf(spec, derive_seed(config.seed, 0));
  Rng rng(derive_seed(config.seed, 1));
  Adam adam;
  const int b = config.batch;
  Matrix x(b, data.images.cols());
  std::vector<int> y(static_cast<std::size_t>(b));
  const std::vector<std::string> all = clf.params().names();
  for (long step = 0; step < config.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const int idx = rng.uniform_int(0, static_cast<int>(n_train) - 1);
      x.row(i) = data.images.row(idx);
      y[i] = data.labels[idx];
    }
    x += rng.normal_matrix(b, x.cols(), config.noise_std);
    Tape tape;
    auto P = params_on_tape(tape, clf.params(), all);
    auto p = [&P](const std::string& name) { return P.at(name); };
    const Var f = classifier_features(TapeOps{tape}, p, tape.constant(x));
    const Var loss = tape.cross_entropy(tape.linear(f, P.at("head.weight"), P.at("head.bias")), y);
    if (!std::isfinite(tape.value(loss)(0, 0)))
      throw std::runtime_error(fmt::format("classifier loss became non-finite at step {}", step));
    tape.backward(loss);
    GradMap grads;
    for (const auto& [name, var] : P) grads.emplace(name, tape.grad(var));
    adam.step(clf.params(), grads, config.lr);
  }
  if (n_hold > 0) {
    const std::vector<int> held(data.labels.begin() + n_train, data.labels.end());
    clf.set_heldout_accuracy(accuracy(clf, data.images.bottomRows(n_hold), held));
  }
  return clf;
}

}  // namespace memora
