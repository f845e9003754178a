#include "memora/memora.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

LatentTrajectory invert_image(const Denoiser& model, const Latent& image, const Condition& c,
                              const NoiseSchedule& sched, int target_depth, double s_inv,
                              int n_infer_steps, bool clip) {
  if (image.t) throw std::invalid_argument("invert_image: input must be a clean image");
  if (c.is_null()) throw std::invalid_argument("invert_image: needs a conditional condition");
  const InferenceSchedule steps = make_inference_schedule(sched.n_train_steps, n_infer_steps);
  const int n = steps.size();
  if (target_depth < 0 || target_depth > n)
    throw std::out_of_range(fmt::format("inversion depth {} outside [0, {}]", target_depth, n));

  LatentTrajectory traj{image, c, {}, s_inv, n_infer_steps, 0.0};
  traj.latents.push_back({n, image});
  const Matrix cond = model.cond_rows(c, 1);
  Matrix z = image.data;
  for (int k = 0; k < target_depth; ++k) {
    // Undo inference step i = n - 1 - k, which maps levels[i] to to(i).
    const int i = n - 1 - k;
    const int t = steps.to(i), t_next = steps.from(i);
    const Matrix eps = cfg_noise(model, z, t, cond, s_inv);
    z = clip ? ddim_inverse_step_clipped(z, eps, t, t_next, sched) : ddim_inverse_step(z, eps, t, t_next, sched);
    if (!z.allFinite())
      throw std::runtime_error(fmt::format("inversion diverged at depth {} (timestep {})", k + 1, t_next));
    traj.latents.push_back({i, Latent{image.shape, z.row(0), t_next}});
  }
  if (target_depth > 0) {
    const Matrix back = denoise_from(model, z, n - target_depth, cond, sched, s_inv, n_infer_steps, clip);
    traj.round_trip_error = std::sqrt((back.row(0) - image.data).squaredNorm() / image.data.size());
  }
  return traj;
}

RowVector slerp(const RowVector& a, const RowVector& b, double p) {
  if (a.size() != b.size()) throw std::invalid_argument("slerp: size mismatch");
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("slerp: zero-norm endpoint");
  const double cos = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double omega = std::acos(cos);
  const double so = std::sin(omega);
  // Both weights are derived from c, the larger of p and 1 - p. The swapped
  // call slerp(b, a, 1 - p) arrives at the same c, and 1 - c is exact for
  // c >= 0.5. The sum is always written with the heavier endpoint first so
  // that FMA contraction rounds the same way in both calls.
  const bool low = p < 0.5;
  const double c = low ? 1.0 - p : p;
  const double c_rest = 1.0 - c;
  const RowVector& heavy = low ? a : b;
  const RowVector& light = low ? b : a;
  if (so < 1e-12) {
    if (cos < 0.0) throw std::invalid_argument("slerp: antiparallel endpoints have no unique great circle");
    if (c == 0.5) return 0.5 * (a + b);
    return c * heavy + c_rest * light;  // parallel: the arc degenerates to a segment
  }
  if (c == 0.5) return (std::sin(0.5 * omega) / so) * (a + b);
  return (std::sin(c * omega) / so) * heavy + (std::sin(c_rest * omega) / so) * light;
}

std::vector<Latent> ExpansionSet::all() const {
  std::vector<Latent> out = seeds;
  for (const Interpolant& it : interpolants) out.push_back(it.latent);
  return out;
}

ExpansionSet expand_latents(const std::vector<Latent>& seeds, const ExpansionScheme& scheme) {
  if (seeds.size() < 2) throw std::invalid_argument("expansion needs at least two seeds");
  if (scheme.p_values.empty()) throw std::invalid_argument("expansion needs at least one p value");
  for (double p : scheme.p_values)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(fmt::format("p = {} outside [0, 1]", p));
  const int k = static_cast<int>(seeds.size());
  const int available = k + k * (k - 1) / 2 * static_cast<int>(scheme.p_values.size());
  if (scheme.total_count < k || scheme.total_count > available)
    throw std::invalid_argument(
        fmt::format("total_count {} outside [{}, {}] for {} seeds", scheme.total_count, k, available, k));
  for (const Latent& s : seeds) {
    if (s.data.size() != seeds[0].data.size()) throw std::invalid_argument("seeds differ in size");
    if (!(s.data.norm() > 0.0)) throw std::invalid_argument("expansion seed has zero norm");
  }

  ExpansionSet set{seeds, {}, scheme.total_count};
  const int wanted = scheme.total_count - k;
  for (int i = 0; i < k && static_cast<int>(set.interpolants.size()) < wanted; ++i)
    for (int j = i + 1; j < k && static_cast<int>(set.interpolants.size()) < wanted; ++j)
      for (double p : scheme.p_values) {
        if (static_cast<int>(set.interpolants.size()) == wanted) break;
        Latent z{seeds[i].shape, slerp(seeds[i].data, seeds[j].data, p), seeds[i].t};
        set.interpolants.push_back({{i, j}, p, std::move(z)});
      }
  return set;
}

TrainingSet build_training_set(const ExpansionSet& expansion, const Denoiser& model, const Condition& c,
                               const NoiseSchedule& sched, int restart_step, double s_build,
                               int n_infer_steps, bool clip) {
  const std::vector<Latent> latents = expansion.all();
  Matrix z(static_cast<Eigen::Index>(latents.size()), model.latent_dim());
  for (std::size_t i = 0; i < latents.size(); ++i) z.row(i) = latents[i].data;
  Matrix images = denoise_from(model, z, restart_step, model.cond_rows(c, z.rows()), sched, s_build,
                               n_infer_steps, clip);
  return TrainingSet{images.cwiseMax(-1.0).cwiseMin(1.0), c};
}

RelearnRun relearn(const Denoiser& unlearned, const TrainingSet& train_set, const NoiseSchedule& sched,
                   const LoraConfig& config) {
  if (train_set.images.rows() == 0) throw std::invalid_argument("relearn: empty training set");
  if (config.batch < 1 || config.checkpoint_every < 1 || config.steps < 0)
    throw std::invalid_argument("relearn: batch and checkpoint interval must be positive");
  const std::string host_sum = unlearned.checksum();

  RelearnRun run;
  run.config = config;
  LoraAdapter adapter = init_adapter(unlearned, config.rank, config.beta, derive_seed(config.seed, 0),
                                     config.targets);
  adapter.erased_concept = train_set.condition.concept_id;
  Rng rng(derive_seed(config.seed, 1));
  const int n = static_cast<int>(train_set.images.rows());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int cursor = n;  // forces a shuffle before the first draw

  run.checkpoints.emplace(0, adapter);
  const Matrix cond = unlearned.cond_rows(train_set.condition, config.batch);
  Matrix x0(config.batch, train_set.images.cols());
  std::vector<int> t(static_cast<std::size_t>(config.batch));
  for (long step = 1; step <= config.steps; ++step) {
    for (int i = 0; i < config.batch; ++i) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      x0.row(i) = train_set.images.row(order[cursor++]);
    }
    for (int i = 0; i < config.batch; ++i) t[i] = rng.uniform_int(0, sched.n_train_steps - 1);
    const Matrix eps = rng.normal_matrix(config.batch, x0.cols());
    const Matrix zt = forward_diffuse(x0, t, eps, sched);

    Tape tape;
    auto P = params_on_tape(tape, unlearned.params(), {});
    std::map<std::string, std::pair<Var, Var>> factors;
    for (const LoraLayer& l : adapter.layers) {
      const Var A = tape.leaf(l.A), B = tape.leaf(l.B);
      factors.emplace(l.name, std::make_pair(A, B));
      const std::string w = l.name + ".weight";
      P[w] = tape.add(P.at(w), tape.scale(tape.matmul(B, A), adapter.beta));
    }
    auto p = [&P](const std::string& name) { return P.at(name); };
    const Var pred = denoiser_forward(TapeOps{tape}, p, tape.constant(zt),
                                      tape.constant(time_features(t, unlearned.spec().time_features)),
                                      tape.constant(cond));
    const Var loss = tape.squared_error(pred, eps);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value))
      throw std::runtime_error(fmt::format("relearn loss became non-finite at step {}", step));
    run.train_log.push_back(value);
    tape.backward(loss);
    double scale = config.lr;
    if (config.max_grad_norm > 0.0) {
      double sq = 0.0;
      for (const auto& [name, ab] : factors) sq += tape.grad(ab.first).squaredNorm() + tape.grad(ab.second).squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > config.max_grad_norm) scale *= config.max_grad_norm / norm;
    }
    for (LoraLayer& l : adapter.layers) {
      const auto& [A, B] = factors.at(l.name);
      l.A -= scale * tape.grad(A);
      l.B -= scale * tape.grad(B);
    }
    if (step % config.checkpoint_every == 0 || step == config.steps) run.checkpoints.emplace(step, adapter);
  }
  if (unlearned.checksum() != host_sum) throw std::runtime_error("relearn: host parameters were modified");
  run.final_adapter = adapter;
  return run;
}

Matrix automemora_noise(const Matrix& eps_unlearn, const Matrix& eps_memora, double w) {
  if (eps_unlearn.rows() != eps_memora.rows() || eps_unlearn.cols() != eps_memora.cols())
    throw std::invalid_argument("automemora: prediction shapes differ");
  return (1.0 - w) * eps_unlearn + w * eps_memora;
}

EpsFn automemora_eps(const Denoiser& unlearned, const Denoiser& adapted, const Matrix& cond, double s,
                     double w) {
  return [&unlearned, &adapted, cond, s, w](const Matrix& z, int t) {
    return automemora_noise(cfg_noise(unlearned, z, t, cond, s), cfg_noise(adapted, z, t, cond, s), w);
  };
}

Matrix automemora_sample(const Denoiser& unlearned, const Denoiser& adapted, const Matrix& z_T,
                         const Matrix& cond, const NoiseSchedule& sched, double s, double w,
                         int n_infer_steps, bool clip) {
  const InferenceSchedule steps = make_inference_schedule(sched.n_train_steps, n_infer_steps);
  return denoise_steps(automemora_eps(unlearned, adapted, cond, s, w), z_T, sched, steps, 0, clip);
}

Latent automemora_sample(const Denoiser& unlearned, const LoraAdapter& adapter, const Latent& z_T,
                         const Condition& c, const NoiseSchedule& sched, double s, double w,
                         int n_infer_steps, bool clip) {
  if (c.is_null()) throw std::invalid_argument("automemora_sample: needs a conditional condition");
  const Denoiser adapted = apply_adapter(unlearned, adapter);
  Matrix out = automemora_sample(unlearned, adapted, Matrix(z_T.data), unlearned.cond_rows(c, 1), sched, s,
                                 w, n_infer_steps, clip);
  return Latent{z_T.shape, out.row(0), std::nullopt};
}

}  // namespace memora
