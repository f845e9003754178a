#pragma once

#include <functional>

#include "memora/denoiser.hpp"

namespace memora {

// How images are generated for metrics, attacks and AutoMemoRa.
struct SamplerSettings {
  double guidance = 7.5;
  int n_infer_steps = 50;
  bool clip_sample = true;
};

// Noise oracle for a batch at a shared timestep.
using EpsFn = std::function<Matrix(const Matrix& z, int t)>;

// (1 - s) * eps_uncond + s * eps_cond. Written in this form so that s = 0 and
// s = 1 return one of the inputs bit for bit.
Matrix cfg_combine(const Matrix& eps_uncond, const Matrix& eps_cond, double s);

Matrix cfg_noise(const Denoiser& model, const Matrix& z, int t, const Matrix& cond, double s);
RowVector cfg_noise(const Denoiser& model, const Latent& z, int t, const Condition& c, double s);

EpsFn cfg_eps(const Denoiser& model, const Matrix& cond, double s);

// Runs inference steps start..end of `steps` over a batch. With `clip` the
// clamped step variant is used.
Matrix denoise_steps(const EpsFn& eps, Matrix z, const NoiseSchedule& sched,
                     const InferenceSchedule& steps, int start, bool clip = false);

Matrix sample(const Denoiser& model, const Matrix& z_T, const Matrix& cond,
              const NoiseSchedule& sched, double s, int n_infer_steps, bool clip = false);
Latent sample(const Denoiser& model, const Latent& z_T, const Condition& c,
              const NoiseSchedule& sched, double s, int n_infer_steps, bool clip = false);

// t_start is an index into the inference subsequence, not a raw timestep.
Matrix denoise_from(const Denoiser& model, const Matrix& z_t, int t_start, const Matrix& cond,
                    const NoiseSchedule& sched, double s, int n_infer_steps, bool clip = false);
Latent denoise_from(const Denoiser& model, const Latent& z_t, int t_start, const Condition& c,
                    const NoiseSchedule& sched, double s, int n_infer_steps, bool clip = false);

}  // namespace memora
