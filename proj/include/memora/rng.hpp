#pragma once

#include <cstdint>
#include <random>

#include "memora/types.hpp"

namespace memora {

// splitmix64 finaliser over (master, stream). Every stage and every eval
// prompt draws from its own derived stream so reruns of a single stage
// reproduce exactly.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi);
  // Inclusive on both ends.
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace memora
