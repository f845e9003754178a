#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memora/denoiser.hpp"
#include "memora/rng.hpp"

namespace memora {

enum class GlyphKind { square, ring, plus, saltire, diamond, bars };

std::string to_string(GlyphKind kind);

// Per-concept generative parameters. Sizes are in pixels of a 16x16 canvas
// and scale with the image size.
struct GlyphSpec {
  GlyphKind kind = GlyphKind::square;
  double size_lo = 0.0;
  double size_hi = 0.0;
  double half_width = 0.0;
};

struct RenderSpec {
  std::vector<GlyphSpec> glyphs;
  double amp_lo = 0.6;
  double amp_hi = 1.0;
  double jitter = 1.5;
};

// Up to six distinct glyph families.
RenderSpec default_render_spec(int n_concepts);

struct ConceptDataset {
  Matrix images;            // one flattened image per row, values in [-1, 1]
  std::vector<int> labels;  // concept per row
  int n_concepts = 0;
  int n_per_class = 0;
  LatentShape shape;
  RenderSpec render;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return images.rows(); }
  Latent image(Eigen::Index i) const { return Latent{shape, images.row(i), std::nullopt}; }
  Matrix images_of(int concept_id, Eigen::Index limit = -1) const;
  std::vector<int> class_counts() const;
};

ConceptDataset generate_dataset(int n_concepts, int n_per_class, int image_size, std::uint64_t seed);
ConceptDataset generate_dataset(const RenderSpec& render, int n_per_class, int image_size,
                                std::uint64_t seed);
RowVector render_glyph(const GlyphSpec& glyph, const RenderSpec& render, int image_size, Rng& rng);

struct DenoiserTrainConfig {
  long steps = 8000;
  int batch = 128;
  double lr = 1e-3;
  double p_uncond = 0.1;
  bool cosine_decay = true;
  std::uint64_t seed = 0;
};

// Noise-prediction training: loss is the squared error summed over pixels and
// averaged over the batch, so an untrained zero predictor starts near the
// latent dimensionality. Labels are replaced by the null condition with
// probability p_uncond.
Denoiser train_denoiser(const ConceptDataset& data, const NoiseSchedule& sched,
                        const DenoiserSpec& spec, const DenoiserTrainConfig& config,
                        std::vector<double>* losses = nullptr);

// Rows diffused from `inputs` whose noise target is computed against a
// different clean image, so trajectories of one distribution are pulled onto
// another. Steered rows are never dropped to the null condition and only see
// timesteps >= min_t, where the implied noise target stays well scaled.
struct SteeredRows {
  Matrix inputs;
  Matrix targets;
  std::vector<int> labels;
  int min_t = 0;
  double fraction = 0.5;  // expected share of each batch drawn from these rows
};

// Same loop continuing from an existing model. Steered rows, if given, make
// up `fraction` of each batch in expectation.
void fit_denoiser(Denoiser& model, const Matrix& images, const std::vector<int>& labels,
                  const NoiseSchedule& sched, const DenoiserTrainConfig& config,
                  std::vector<double>* losses = nullptr, const SteeredRows* steered = nullptr);

struct ClassifierSpec {
  int input_dim = 256;
  int hidden = 128;
  int feature_dim = 32;
  int n_concepts = 4;
};

class ConceptClassifier {
 public:
  ConceptClassifier() = default;
  ConceptClassifier(const ClassifierSpec& spec, std::uint64_t seed);
  ConceptClassifier(const ClassifierSpec& spec, ParamSet params, double heldout_accuracy);

  const ClassifierSpec& spec() const { return spec_; }
  int n_concepts() const { return spec_.n_concepts; }
  int feature_dim() const { return spec_.feature_dim; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  double heldout_accuracy() const { return heldout_accuracy_; }
  void set_heldout_accuracy(double a) { heldout_accuracy_ = a; }

  Matrix features(const Matrix& images) const;
  Matrix logits(const Matrix& images) const;
  Matrix probabilities(const Matrix& images) const;
  std::vector<int> predict(const Matrix& images) const;

 private:
  ClassifierSpec spec_;
  ParamSet params_;
  double heldout_accuracy_ = 0.0;
};

template <class Ops, class Param>
typename Ops::Value classifier_features(const Ops& ops, Param&& p, const typename Ops::Value& x) {
  const auto h = ops.silu(ops.linear(x, p("fc1.weight"), p("fc1.bias")));
  return ops.silu(ops.linear(h, p("fc2.weight"), p("fc2.bias")));
}

struct ClassifierTrainConfig {
  long steps = 2000;
  int batch = 64;
  double lr = 1e-3;
  double noise_std = 0.2;
  double holdout_fraction = 0.2;
  double max_imbalance = 1.5;
  int hidden = 128;
  int feature_dim = 32;
  std::uint64_t seed = 0;
};

// Trains on the leading rows and reports accuracy on the trailing
// holdout_fraction of the dataset.
ConceptClassifier train_classifier(const ConceptDataset& data, const ClassifierTrainConfig& config);

double accuracy(const ConceptClassifier& clf, const Matrix& images, const std::vector<int>& labels);

}  // namespace memora
