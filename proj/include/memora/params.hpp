#pragma once

#include <map>
#include <string>
#include <vector>

#include "memora/types.hpp"

namespace memora {

// Named weight matrices, ordered by name so iteration (and therefore
// checksums and archives) is stable.
class ParamSet {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::map<std::string, Matrix>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  // SHA-256 over names, shapes and raw little-endian values.
  std::string checksum() const;

  bool operator==(const ParamSet& other) const;

 private:
  std::map<std::string, Matrix> entries_;
};

using GradMap = std::map<std::string, Matrix>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  // Updates only the parameters that appear in grads.
  void step(ParamSet& params, const GradMap& grads, double lr);

 private:
  AdamConfig config_;
  std::map<std::string, Matrix> m_, v_;
  long t_ = 0;
};

// Cosine decay from lr at step 0 towards 0 at `total`.
double cosine_lr(double lr, long step, long total);

}  // namespace memora
