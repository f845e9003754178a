#pragma once

#include <optional>
#include <string>
#include <vector>

#include "memora/types.hpp"

namespace memora {

enum class ScheduleKind { scaled_linear, linear };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

struct NoiseSchedule {
  int n_train_steps = 0;
  ScheduleKind kind = ScheduleKind::scaled_linear;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  // Checked accessor; t must lie in [0, n_train_steps).
  double alpha_bar(int t) const;
};

NoiseSchedule make_schedule(int n_train_steps, double beta_start, double beta_end,
                            ScheduleKind kind = ScheduleKind::scaled_linear);

struct LatentShape {
  int channels = 1;
  int height = 16;
  int width = 16;
  int size() const { return channels * height * width; }
  bool operator==(const LatentShape&) const = default;
};

// Images live directly in latent space: the encoder and decoder are identity
// maps at this scale. data is the flattened (c, h, w) array.
struct Latent {
  LatentShape shape;
  RowVector data;
  std::optional<int> t;  // empty for a clean sample
};

Latent make_latent(const LatentShape& shape, RowVector data, std::optional<int> t = std::nullopt);

struct Condition {
  std::optional<int> concept_id;  // empty is the unconditional branch
  RowVector embedding;
  bool is_null() const { return !concept_id.has_value(); }
};

Latent forward_diffuse(const Latent& z0, int t, const RowVector& noise, const NoiseSchedule& sched);
// Batched form, one timestep per row.
Matrix forward_diffuse(const Matrix& z0, const std::vector<int>& t, const Matrix& noise,
                       const NoiseSchedule& sched);

// Deterministic DDIM (eta = 0). Both directions share one transfer formula:
// predict x0 from (z, eps) at the source level, re-noise it to the target.
Matrix ddim_step(const Matrix& z, const Matrix& eps, int t, int t_prev, const NoiseSchedule& sched);
Matrix ddim_inverse_step(const Matrix& z, const Matrix& eps, int t, int t_next,
                         const NoiseSchedule& sched);
Latent ddim_step(const Latent& z, const RowVector& eps, int t, int t_prev, const NoiseSchedule& sched);
// Clamped variants: the x0 estimate is clamped to [-bound, bound] and eps is
// re-derived from the clamped estimate before re-noising. They agree with the
// plain steps whenever the estimate is already in range.
Matrix ddim_step_clipped(const Matrix& z, const Matrix& eps, int t, int t_prev, const NoiseSchedule& sched,
                         double bound = 1.0);
Matrix ddim_inverse_step_clipped(const Matrix& z, const Matrix& eps, int t, int t_next, const NoiseSchedule& sched,
                                 double bound = 1.0);
Latent ddim_inverse_step(const Latent& z, const RowVector& eps, int t, int t_next,
                         const NoiseSchedule& sched);

// Strided subsequence used at inference. levels[0] is the noisiest; step i
// moves from levels[i] to levels[i + 1], and the last step lands on t = 0.
struct InferenceSchedule {
  std::vector<int> levels;
  int size() const { return static_cast<int>(levels.size()); }
  int from(int i) const { return levels.at(i); }
  int to(int i) const { return i + 1 < size() ? levels[i + 1] : 0; }
};

InferenceSchedule make_inference_schedule(int n_train_steps, int n_infer_steps);

}  // namespace memora
