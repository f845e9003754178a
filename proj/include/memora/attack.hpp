#pragma once

#include <cstdint>
#include <string>

#include "memora/sampling.hpp"
#include "memora/toy_world.hpp"

namespace memora {

struct AttackBudget {
  int max_iters = 10;
  double step_size = 1.0;
  double norm_bound = 4.0;  // L2 bound on the embedding perturbation
  int chain_steps = 10;     // DDIM steps in the differentiable inner chain
};

struct AttackResult {
  Condition adversarial_condition;
  int iterations_used = 0;
  bool success = false;
  double classifier_prob = 0.0;  // target probability on the last verification sample
  std::uint64_t seed = 0;
  bool aborted = false;  // non-finite gradient; the run stops with its last verified state
  std::string diagnostic;
};

// The starting noise for a prompt seed. Shared with eval so that an
// attack's iteration 0 is the plain sample of the same prompt.
Matrix prompt_noise(std::uint64_t seed, int dim);

// Gradient ascent on log p(target | image) with respect to an additive
// perturbation of the target's condition embedding. Each iteration
// differentiates through a short clipped DDIM chain, takes a normalised
// gradient step, projects onto the norm ball, and then verifies with a full
// sample. Iteration 0 verifies the unperturbed condition.
AttackResult attack_condition(const Denoiser& model, const ConceptClassifier& classifier, int target,
                              const AttackBudget& budget, std::uint64_t seed, const NoiseSchedule& sched,
                              const SamplerSettings& sampler = {});

}  // namespace memora
