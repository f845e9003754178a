#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memora/eval.hpp"

namespace memora {

enum class UnlearnMethod { negative_guidance, retrain_excluding };

std::string to_string(UnlearnMethod method);
UnlearnMethod parse_unlearn_method(const std::string& name);

struct UnlearnResult {
  Denoiser model;
  UnlearnMethod method = UnlearnMethod::negative_guidance;
  int erased_concept = 0;
  double pre_relearn_asr = 0.0;
  double retained_fid_delta = 0.0;  // retained-class FID of the result against the base
  std::vector<double> losses;
};

// What the unlearners need to measure their own outcome.
struct UnlearnProbe {
  const ConceptClassifier& classifier;
  const NoiseSchedule& sched;
  EvalOptions eval;
};

struct NegativeGuidanceConfig {
  double eta = 0.2;
  long steps = 200;
  double lr = 1e-3;
  int batch = 64;
  // Retained concepts (and the null branch) regress onto the frozen base.
  double preserve_weight = 1.0;
  double null_fraction = 0.25;
  // Training images are drawn from the frozen base, not from a dataset.
  int teacher_per_concept = 64;
  SamplerSettings teacher_sampler;
  std::uint64_t seed = 0;
};

// Fine-tunes the condition table and condition projections of a copy of
// `base` so that its conditional prediction for the erased concept matches
// eps(z, null) - eta * (eps(z, c) - eps(z, null)) of the frozen base.
UnlearnResult unlearn_negative_guidance(const Denoiser& base, const Condition& concept_cond,
                                        const NegativeGuidanceConfig& config, const UnlearnProbe& probe);

struct RetrainConfig {
  int anchor = 0;
  // Start from a fresh initialisation rather than from the base weights.
  bool reinitialize = true;
  // Noised erased-concept images are pulled onto paired anchor images, so
  // partially noised erased content is redirected rather than reconstructed.
  // Applied at timesteps >= steer_min_t, under every label (the null one
  // included) or only the erased one, and making up steer_fraction of each
  // batch.
  bool steer = true;
  int steer_min_t = 200;
  bool steer_every_condition = true;
  double steer_fraction = 0.5;
  DenoiserTrainConfig train;
};

// Trains on the dataset without the erased concept, with the anchor's images
// relabelled as the erased concept. steps == 0 returns the base untouched.
UnlearnResult unlearn_retrain_excluding(const Denoiser& base, const ConceptDataset& data, int concept_id,
                                        const NoiseSchedule& sched, const RetrainConfig& config,
                                        const UnlearnProbe& probe);

// Fills pre_relearn_asr and retained_fid_delta.
void measure_unlearning(UnlearnResult& result, const Denoiser& base, const UnlearnProbe& probe);

}  // namespace memora
