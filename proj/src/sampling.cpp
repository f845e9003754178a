#include "memora/sampling.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace memora {

Matrix cfg_combine(const Matrix& eps_uncond, const Matrix& eps_cond, double s) {
  if (eps_uncond.rows() != eps_cond.rows() || eps_uncond.cols() != eps_cond.cols())
    throw std::invalid_argument("cfg: prediction shapes differ");
  return (1.0 - s) * eps_uncond + s * eps_cond;
}

Matrix cfg_noise(const Denoiser& model, const Matrix& z, int t, const Matrix& cond, double s) {
  const Matrix null = model.cond_rows(model.null_condition(), z.rows());
  return cfg_combine(model.predict(z, t, null), model.predict(z, t, cond), s);
}

RowVector cfg_noise(const Denoiser& model, const Latent& z, int t, const Condition& c, double s) {
  if (c.is_null()) throw std::invalid_argument("cfg_noise needs a conditional condition");
  return cfg_noise(model, Matrix(z.data), t, model.cond_rows(c, 1), s).row(0);
}

EpsFn cfg_eps(const Denoiser& model, const Matrix& cond, double s) {
  return [&model, cond, s](const Matrix& z, int t) { return cfg_noise(model, z, t, cond, s); };
}

Matrix denoise_steps(const EpsFn& eps, Matrix z, const NoiseSchedule& sched,
                     const InferenceSchedule& steps, int start, bool clip) {
  if (start < 0 || start >= steps.size())
    throw std::out_of_range(fmt::format("start step {} outside [0, {})", start, steps.size()));
  for (int i = start; i < steps.size(); ++i) {
    const int t = steps.from(i), t_prev = steps.to(i);
    if (t == t_prev) continue;
    z = clip ? ddim_step_clipped(z, eps(z, t), t, t_prev, sched) : ddim_step(z, eps(z, t), t, t_prev, sched);
  }
  return z;
}

Matrix sample(const Denoiser& model, const Matrix& z_T, const Matrix& cond,
              const NoiseSchedule& sched, double s, int n_infer_steps, bool clip) {
  return denoise_from(model, z_T, 0, cond, sched, s, n_infer_steps, clip);
}

Latent sample(const Denoiser& model, const Latent& z_T, const Condition& c,
              const NoiseSchedule& sched, double s, int n_infer_steps, bool clip) {
  return denoise_from(model, z_T, 0, c, sched, s, n_infer_steps, clip);
}

Matrix denoise_from(const Denoiser& model, const Matrix& z_t, int t_start, const Matrix& cond,
                    const NoiseSchedule& sched, double s, int n_infer_steps, bool clip) {
  const InferenceSchedule steps = make_inference_schedule(sched.n_train_steps, n_infer_steps);
  return denoise_steps(cfg_eps(model, cond, s), z_t, sched, steps, t_start, clip);
}

Latent denoise_from(const Denoiser& model, const Latent& z_t, int t_start, const Condition& c,
                    const NoiseSchedule& sched, double s, int n_infer_steps, bool clip) {
  if (c.is_null()) throw std::invalid_argument("sampling needs a conditional condition");
  Matrix out = denoise_from(model, Matrix(z_t.data), t_start, model.cond_rows(c, 1), sched, s,
                            n_infer_steps, clip);
  return Latent{z_t.shape, out.row(0), std::nullopt};
}

}  // namespace memora
