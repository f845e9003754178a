#include "memora/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace memora {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "scaled_linear") return ScheduleKind::scaled_linear;
  if (name == "linear") return ScheduleKind::linear;
  throw std::invalid_argument(fmt::format("unknown schedule kind '{}'", name));
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::scaled_linear ? "scaled_linear" : "linear";
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= n_train_steps)
    throw std::out_of_range(fmt::format("timestep {} outside [0, {})", t, n_train_steps));
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(int n, double beta_start, double beta_end, ScheduleKind kind) {
  if (n < 2) throw std::invalid_argument("schedule needs at least two steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument(
        fmt::format("betas must satisfy 0 < start <= end < 1, got {} and {}", beta_start, beta_end));

  NoiseSchedule s;
  s.n_train_steps = n;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(static_cast<std::size_t>(n));
  const double last = static_cast<double>(n - 1);
  if (kind == ScheduleKind::scaled_linear) {
    const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
    for (int i = 0; i < n; ++i) {
      const double r = a + (b - a) * (static_cast<double>(i) / last);
      s.betas[i] = std::clamp(r * r, beta_start, beta_end);
    }
  } else {
    for (int i = 0; i < n; ++i)
      s.betas[i] = beta_start + (beta_end - beta_start) * (static_cast<double>(i) / last);
  }
  // Squaring the square root does not round-trip; pin the endpoints.
  s.betas.front() = beta_start;
  s.betas.back() = beta_end;

  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    if (i > 0 && s.betas[i] < s.betas[i - 1])
      throw std::invalid_argument("betas must be non-decreasing");
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

Latent make_latent(const LatentShape& shape, RowVector data, std::optional<int> t) {
  if (data.size() != shape.size())
    throw std::invalid_argument(
        fmt::format("latent data has {} values, shape needs {}", data.size(), shape.size()));
  return Latent{shape, std::move(data), t};
}

Matrix forward_diffuse(const Matrix& z0, const std::vector<int>& t, const Matrix& noise,
                       const NoiseSchedule& sched) {
  if (z0.rows() != noise.rows() || z0.cols() != noise.cols())
    throw std::invalid_argument("forward_diffuse: noise shape mismatch");
  if (static_cast<Eigen::Index>(t.size()) != z0.rows())
    throw std::invalid_argument("forward_diffuse: one timestep per row required");
  Matrix out(z0.rows(), z0.cols());
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    const double ab = sched.alpha_bar(t[r]);
    out.row(r) = std::sqrt(ab) * z0.row(r) + std::sqrt(1.0 - ab) * noise.row(r);
  }
  return out;
}

Latent forward_diffuse(const Latent& z0, int t, const RowVector& noise, const NoiseSchedule& sched) {
  if (z0.t) throw std::invalid_argument("forward_diffuse: input must be a clean sample");
  Matrix out = forward_diffuse(Matrix(z0.data), {t}, Matrix(noise), sched);
  return Latent{z0.shape, out.row(0), t};
}

namespace {

// Shared by both directions: recover x0 at `from`, re-noise it to `to`.
Matrix ddim_transfer(const Matrix& z, const Matrix& eps, int from, int to, const NoiseSchedule& sched) {
  if (z.rows() != eps.rows() || z.cols() != eps.cols())
    throw std::invalid_argument("ddim: eps shape mismatch");
  if (from == to) return z;
  const double a = sched.alpha_bar(from);
  const double b = sched.alpha_bar(to);
  const Matrix x0 = (z - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
  return std::sqrt(b) * x0 + std::sqrt(1.0 - b) * eps;
}

Matrix ddim_transfer_clipped(const Matrix& z, const Matrix& eps, int from, int to, const NoiseSchedule& sched,
                             double bound) {
  if (z.rows() != eps.rows() || z.cols() != eps.cols())
    throw std::invalid_argument("ddim: eps shape mismatch");
  if (from == to) return z;
  const double a = sched.alpha_bar(from);
  const double b = sched.alpha_bar(to);
  const Matrix x0 = ((z - std::sqrt(1.0 - a) * eps) / std::sqrt(a)).cwiseMax(-bound).cwiseMin(bound);
  const Matrix e = (z - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
  return std::sqrt(b) * x0 + std::sqrt(1.0 - b) * e;
}

}  // namespace

Matrix ddim_step(const Matrix& z, const Matrix& eps, int t, int t_prev, const NoiseSchedule& sched) {
  if (t_prev > t)
    throw std::invalid_argument(fmt::format("ddim_step: {} -> {} does not decrease", t, t_prev));
  return ddim_transfer(z, eps, t, t_prev, sched);
}

Matrix ddim_step_clipped(const Matrix& z, const Matrix& eps, int t, int t_prev, const NoiseSchedule& sched,
                         double bound) {
  if (t_prev > t)
    throw std::invalid_argument(fmt::format("ddim_step: {} -> {} does not decrease", t, t_prev));
  return ddim_transfer_clipped(z, eps, t, t_prev, sched, bound);
}

Matrix ddim_inverse_step_clipped(const Matrix& z, const Matrix& eps, int t, int t_next, const NoiseSchedule& sched,
                                 double bound) {
  if (t_next < t)
    throw std::invalid_argument(fmt::format("ddim_inverse_step: {} -> {} does not increase", t, t_next));
  return ddim_transfer_clipped(z, eps, t, t_next, sched, bound);
}

Matrix ddim_inverse_step(const Matrix& z, const Matrix& eps, int t, int t_next,
                         const NoiseSchedule& sched) {
  if (t_next < t)
    throw std::invalid_argument(fmt::format("ddim_inverse_step: {} -> {} does not increase", t, t_next));
  return ddim_transfer(z, eps, t, t_next, sched);
}

Latent ddim_step(const Latent& z, const RowVector& eps, int t, int t_prev, const NoiseSchedule& sched) {
  Matrix out = ddim_step(Matrix(z.data), Matrix(eps), t, t_prev, sched);
  return Latent{z.shape, out.row(0), t_prev};
}

Latent ddim_inverse_step(const Latent& z, const RowVector& eps, int t, int t_next,
                         const NoiseSchedule& sched) {
  Matrix out = ddim_inverse_step(Matrix(z.data), Matrix(eps), t, t_next, sched);
  return Latent{z.shape, out.row(0), t_next};
}

InferenceSchedule make_inference_schedule(int n_train_steps, int n_infer_steps) {
  if (n_infer_steps < 1) throw std::invalid_argument("need at least one inference step");
  if (n_infer_steps > n_train_steps)
    throw std::invalid_argument(
        fmt::format("{} inference steps exceed {} training steps", n_infer_steps, n_train_steps));
  const int stride = n_train_steps / n_infer_steps;
  InferenceSchedule s;
  s.levels.reserve(static_cast<std::size_t>(n_infer_steps));
  for (int i = 0; i < n_infer_steps; ++i) s.levels.push_back((n_infer_steps - i) * stride - 1);
  return s;
}

}  // namespace memora
