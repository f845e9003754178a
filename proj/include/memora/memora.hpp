#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "memora/lora.hpp"
#include "memora/sampling.hpp"

namespace memora {

struct TrajectoryPoint {
  int step_index;  // position in the inference subsequence; the clean image sits at n_infer_steps
  Latent latent;
};

struct LatentTrajectory {
  Latent source_image;
  Condition condition;
  std::vector<TrajectoryPoint> latents;  // z_0 first
  double inversion_scale = 1.0;
  int n_infer_steps = 50;
  double round_trip_error = 0.0;  // RMS per pixel after denoising the last entry back

  const TrajectoryPoint& last() const { return latents.back(); }
};

// Walks the inference subsequence backwards `target_depth` steps from the
// clean image, using the CFG prediction at scale `s_inv` for each eps. With
// `clip` the x0 estimate is clamped at every step (and in the round-trip
// replay), which keeps inversion bounded when the model's estimate disagrees
// with the image content.
LatentTrajectory invert_image(const Denoiser& model, const Latent& image, const Condition& c,
                              const NoiseSchedule& sched, int target_depth, double s_inv = 1.0,
                              int n_infer_steps = 50, bool clip = false);

// Spherical interpolation with Omega = arccos(<a,b> / (|a||b|)). The weights
// are formed so that slerp(a, b, p) == slerp(b, a, 1 - p) bit for bit and the
// endpoints are returned exactly. Zero-norm or antiparallel inputs throw.
RowVector slerp(const RowVector& a, const RowVector& b, double p);

struct ExpansionScheme {
  std::vector<double> p_values{0.25, 0.5, 0.75};
  int total_count = 33;
};

struct Interpolant {
  std::pair<int, int> pair;
  double p;
  Latent latent;
};

struct ExpansionSet {
  std::vector<Latent> seeds;
  std::vector<Interpolant> interpolants;
  int total_count = 0;

  // Seeds first, then interpolants in enumeration order.
  std::vector<Latent> all() const;
};

// Unordered seed pairs in lexicographic order, each with every p in turn,
// until total_count - seeds.size() interpolants exist.
ExpansionSet expand_latents(const std::vector<Latent>& seeds, const ExpansionScheme& scheme = {});

struct TrainingSet {
  Matrix images;  // one clean image per row
  Condition condition;
};

// Denoises every expansion latent from inference index `restart_step` under
// `model` and pairs the results with `c`. Outputs are clamped to the image
// range [-1, 1], as a decoded and saved image would be.
TrainingSet build_training_set(const ExpansionSet& expansion, const Denoiser& model, const Condition& c,
                               const NoiseSchedule& sched, int restart_step, double s_build = 1.0,
                               int n_infer_steps = 50, bool clip = true);

struct LoraConfig {
  int rank = 4;
  double beta = 1.0;
  long steps = 500;
  int batch = 1;
  double lr = 4e-3;
  double max_grad_norm = 3.0;  // global clip over all factors; 0 turns it off
  long checkpoint_every = 50;
  std::uint64_t seed = 0;
  std::vector<std::string> targets = Denoiser::cond_layers();
};

struct RelearnRun {
  std::map<long, LoraAdapter> checkpoints;  // step -> adapter, step 0 included
  LoraAdapter final_adapter;
  std::vector<double> train_log;  // loss per step
  LoraConfig config;
};

// Plain SGD on the adapter factors only; the host stays frozen and its
// checksum is compared before and after.
RelearnRun relearn(const Denoiser& unlearned, const TrainingSet& train_set, const NoiseSchedule& sched,
                   const LoraConfig& config);

// (1 - w) * eps_unlearn + w * eps_memora.
Matrix automemora_noise(const Matrix& eps_unlearn, const Matrix& eps_memora, double w);

EpsFn automemora_eps(const Denoiser& unlearned, const Denoiser& adapted, const Matrix& cond, double s,
                     double w);

Matrix automemora_sample(const Denoiser& unlearned, const Denoiser& adapted, const Matrix& z_T,
                         const Matrix& cond, const NoiseSchedule& sched, double s, double w,
                         int n_infer_steps = 50, bool clip = false);
Latent automemora_sample(const Denoiser& unlearned, const LoraAdapter& adapter, const Latent& z_T,
                         const Condition& c, const NoiseSchedule& sched, double s, double w,
                         int n_infer_steps = 50, bool clip = false);

}  // namespace memora
