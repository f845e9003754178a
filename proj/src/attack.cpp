#include "memora/attack.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

namespace {

struct Verification {
  bool success;
  double prob;
};

Verification verify(const Denoiser& model, const ConceptClassifier& clf, int target, const Matrix& z_T,
                    const RowVector& embedding, const NoiseSchedule& sched, const SamplerSettings& sampler) {
  const Matrix x = sample(model, z_T, Matrix(embedding), sched, sampler.guidance, sampler.n_infer_steps,
                          sampler.clip_sample);
  const Matrix probs = clf.probabilities(x);
  Eigen::Index arg = 0;
  probs.row(0).maxCoeff(&arg);
  return {arg == target, probs(0, target)};
}

// d log p(target) / d delta through a short chain started from z_T.
Matrix chain_gradient(const Denoiser& model, const ConceptClassifier& clf, int target, const Matrix& z_T,
                      const RowVector& embedding, const RowVector& delta, const NoiseSchedule& sched,
                      const SamplerSettings& sampler, int chain_steps) {
  const InferenceSchedule steps = make_inference_schedule(sched.n_train_steps, chain_steps);
  Tape tape;
  auto P = params_on_tape(tape, model.params(), {});
  auto p = [&P](const std::string& name) { return P.at(name); };
  const Var d = tape.leaf(delta);
  const Var cond = tape.add(tape.constant(embedding), d);
  const Var null = tape.constant(model.cond_rows(model.null_condition(), 1));
  const double s = sampler.guidance;
  Var z = tape.constant(z_T);
  for (int i = 0; i < steps.size(); ++i) {
    const int t = steps.from(i), t_prev = steps.to(i);
    if (t == t_prev) continue;
    const Var tf = tape.constant(time_features({t}, model.spec().time_features));
    const Var eu = denoiser_forward(TapeOps{tape}, p, z, tf, null);
    const Var ec = denoiser_forward(TapeOps{tape}, p, z, tf, cond);
    const Var eps = tape.axpby(1.0 - s, eu, s, ec);
    const double a = sched.alpha_bar(t), b = sched.alpha_bar(t_prev);
    Var x0 = tape.axpby(1.0 / std::sqrt(a), z, -std::sqrt(1.0 - a) / std::sqrt(a), eps);
    Var e = eps;
    if (sampler.clip_sample) {
      x0 = tape.clamp(x0, -1.0, 1.0);
      e = tape.axpby(1.0 / std::sqrt(1.0 - a), z, -std::sqrt(a) / std::sqrt(1.0 - a), x0);
    }
    z = tape.axpby(std::sqrt(b), x0, std::sqrt(1.0 - b), e);
  }
  const auto cp = [&clf](const std::string& name) -> const Matrix& { return clf.params().at(name); };
  const Var f = classifier_features(TapeOps{tape}, [&](const std::string& n) { return tape.constant(cp(n)); },
                                    z);
  const Var logits = tape.linear(f, tape.constant(cp("head.weight")), tape.constant(cp("head.bias")));
  const Var objective = tape.log_prob(logits, target);
  tape.backward(objective);
  return tape.grad(d);
}

}  // namespace

Matrix prompt_noise(std::uint64_t seed, int dim) {
  Rng rng(seed);
  return rng.normal_matrix(1, dim);
}

AttackResult attack_condition(const Denoiser& model, const ConceptClassifier& classifier, int target,
                              const AttackBudget& budget, std::uint64_t seed, const NoiseSchedule& sched,
                              const SamplerSettings& sampler) {
  if (target < 0 || target >= classifier.n_concepts())
    throw std::out_of_range(fmt::format("attack target {} is not a concept", target));
  if (budget.max_iters < 0 || budget.norm_bound < 0.0 || budget.chain_steps < 1)
    throw std::invalid_argument("attack budget must be non-negative");

  const Condition base = model.condition(target);
  const Matrix z_T = prompt_noise(seed, model.latent_dim());
  RowVector delta = RowVector::Zero(base.embedding.size());

  AttackResult result;
  result.seed = seed;
  result.adversarial_condition = base;
  Verification v = verify(model, classifier, target, z_T, base.embedding, sched, sampler);
  result.success = v.success;
  result.classifier_prob = v.prob;
  if (v.success || budget.norm_bound == 0.0) return result;

  for (int it = 1; it <= budget.max_iters; ++it) {
    const Matrix g = chain_gradient(model, classifier, target, z_T, base.embedding, delta, sched, sampler,
                                    budget.chain_steps);
    if (!g.allFinite()) {
      result.aborted = true;
      result.diagnostic = fmt::format("non-finite gradient at iteration {}", it);
      return result;
    }
    const double gn = g.norm();
    if (gn == 0.0) break;
    delta += (budget.step_size / gn) * g.row(0);
    const double dn = delta.norm();
    if (dn > budget.norm_bound) delta *= budget.norm_bound / dn;

    const RowVector embedding = base.embedding + delta;
    v = verify(model, classifier, target, z_T, embedding, sched, sampler);
    result.iterations_used = it;
    result.adversarial_condition = Condition{target, embedding};
    result.success = v.success;
    result.classifier_prob = v.prob;
    if (v.success) break;
  }
  return result;
}

}  // namespace memora
