#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "memora/attack.hpp"
#include "memora/eval.hpp"
#include "memora/memora.hpp"
#include "memora/unlearn.hpp"

namespace memora::harness {

struct WorldConfig {
  int n_concepts = 4;
  int n_per_class = 256;
  int image_size = 16;
  int reference_count = 6;  // clean images of the erased concept handed to relearning
};

struct ScheduleConfig {
  int n_train_steps = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  ScheduleKind kind = ScheduleKind::scaled_linear;
  int n_infer_steps = 50;
};

struct UnlearnStageConfig {
  UnlearnMethod method = UnlearnMethod::negative_guidance;
  int concept_id = 2;
  int second_concept = 3;  // erased on top of the first for the merged-adapter run
  NegativeGuidanceConfig negative_guidance;
  RetrainConfig retrain;
};

struct MemoraStageConfig {
  int restart_step = 35;
  double s_inv = 1.0;
  double s_build = 1.0;
  bool build_clip = true;
  bool inversion_clip = false;
  bool invert_with_base = false;  // use the original model's eps for inversion
  ExpansionScheme expansion;
  LoraConfig lora;
};

struct EvalStageConfig {
  int n_prompts = 50;
  int base_gate_prompts = 200;
  int fid_per_concept = 64;
  double fid_ridge = 1e-6;
  double guidance = 7.5;
  bool clip_sample = true;
  double automemora_w = 0.5;
  double merge_a = 0.5;
  double tau = 0.5;
  long horizon = 250;
};

// Per-stage seeds are derive_seed(master, stream) with the streams below, so
// any stage can be rerun on its own and still see the same randomness.
enum SeedStream : std::uint64_t {
  kSeedDataset = 1,
  kSeedClassifier = 2,
  kSeedBase = 3,
  kSeedReferences = 4,
  kSeedUnlearn = 5,
  kSeedRelearn = 6,
  kSeedEval = 7,
  kSeedHeldout = 8,
};

struct RunConfig {
  WorldConfig world;
  ScheduleConfig schedule;
  DenoiserSpec denoiser;
  DenoiserTrainConfig base_train;
  ClassifierTrainConfig classifier;
  UnlearnStageConfig unlearn;
  MemoraStageConfig memora;
  AttackBudget attack;
  EvalStageConfig eval;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::filesystem::path out_dir;

  std::uint64_t stage_seed(SeedStream stream) const;
  NoiseSchedule make_schedule() const;
  SamplerSettings sampler() const;
  EvalOptions eval_options() const;
  // Stage configs with their seeds filled in from the master seed.
  DenoiserTrainConfig base_train_config() const;
  ClassifierTrainConfig classifier_config() const;
  NegativeGuidanceConfig negative_guidance_config() const;
  RetrainConfig retrain_config() const;
  LoraConfig lora_config() const;
};

// Reads an INI file over the defaults. Unknown sections or keys are an error
// so a typo cannot silently fall back to a default.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& ini_text);
std::string to_ini(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);

// Artifact root: MEMORA_LAB_HOME if set, else ./memora_runs.
std::filesystem::path default_home();

}  // namespace memora::harness
