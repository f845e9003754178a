#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "memora/attack.hpp"
#include "memora/memora.hpp"

namespace memora {

// Maps starting noise (one row per prompt) to images for one concept. Each
// generator carries its own model(s) and condition table.
using Generator = std::function<Matrix(const Matrix& z_T, int concept_id)>;

Generator plain_generator(const Denoiser& model, const NoiseSchedule& sched, const SamplerSettings& sampler);
Generator automemora_generator(const Denoiser& unlearned, const Denoiser& adapted, const NoiseSchedule& sched,
                               const SamplerSettings& sampler, double w);

// Row i is prompt_noise(derive_seed(seed, i)).
Matrix prompt_batch(std::uint64_t seed, int n, int dim);

struct AsrOutcome {
  double pre_rate = 0.0;
  double post_rate = 0.0;  // equals pre_rate without an attack budget
  std::vector<bool> pre_hits;
  std::vector<bool> post_hits;
  std::vector<AttackResult> attacks;  // one per prompt that needed an attack
  Matrix images;                      // the unperturbed generations
};

// Fraction of prompts whose generation the classifier assigns to `concept_id`.
double asr(const Generator& gen, int concept_id, const ConceptClassifier& clf, int n_prompts,
           std::uint64_t seed, int dim);

// Plain-model ASR with an optional attack. A prompt counts as a post-attack
// success when its unperturbed sample already succeeds or the attack does,
// so post >= pre holds prompt by prompt.
AsrOutcome asr_detail(const Denoiser& model, int concept_id, const ConceptClassifier& clf, int n_prompts,
                      const std::optional<AttackBudget>& budget, std::uint64_t seed, const NoiseSchedule& sched,
                      const SamplerSettings& sampler, int jobs = 1);

// Frechet distance between Gaussian fits of two feature sets. A singular
// covariance is an error unless `ridge` > 0, which is added to both
// diagonals.
double fid(const Matrix& features_a, const Matrix& features_b, double ridge = 0.0);

Matrix extract_features(const Matrix& images, const ConceptClassifier& clf);

struct CosineReport {
  double mean = 0.0;
  std::vector<int> histogram;  // 50 uniform bins on [-1, 1]
};

CosineReport cosine_report(const Matrix& images_a, const Matrix& images_b, const ConceptClassifier& clf,
                           int bins = 50);

struct RecoveryCurve {
  std::vector<long> steps;
  std::vector<double> asr_values;
  std::string method_label;
  int concept_id = 0;
};

RecoveryCurve recovery_curve(const Denoiser& unlearned, const RelearnRun& run, int concept_id,
                             const ConceptClassifier& clf, int n_prompts, std::uint64_t seed,
                             const NoiseSchedule& sched, const SamplerSettings& sampler,
                             const std::string& label = "");

enum class ForgettingMode { short_term, long_term };
std::string to_string(ForgettingMode mode);

struct ForgettingVerdict {
  ForgettingMode mode = ForgettingMode::long_term;
  std::optional<long> steps_to_threshold;
  double threshold = 0.5;
  long horizon = 250;
};

ForgettingVerdict classify_forgetting(const RecoveryCurve& curve, double tau = 0.5, long horizon = 250);

// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EvalOptions {
  int n_prompts = 50;
  int fid_per_concept = 64;
  double fid_ridge = 1e-6;
  std::uint64_t seed = 0;
  SamplerSettings sampler;
  std::optional<AttackBudget> attack;
  int jobs = 1;
};

struct EvalReport {
  std::string label;
  int concept_id = 0;
  double pre_asr = 0.0;
  double post_asr = 0.0;
  double fid_retained = 0.0;
  double fid_all = 0.0;
  double cosine_mean = 0.0;
  std::vector<int> cosine_histogram;
  double condition_fidelity = 0.0;  // mean classifier probability of the concept; a CLIP-score stand-in
  int n_prompts = 0;
  std::vector<std::uint64_t> seeds;
};

// Metrics of `gen` against the reference model for `concept_id`. FID sets
// use the same starting noise for both sides; the cosine report pairs the
// concept's generations prompt by prompt. `attack_model` enables post-ASR.
EvalReport evaluate(const Generator& gen, const Generator& reference, int concept_id,
                    const ConceptClassifier& clf, const EvalOptions& options, int dim,
                    const NoiseSchedule& sched, const Denoiser* attack_model = nullptr);

}  // namespace memora
