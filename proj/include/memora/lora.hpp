#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memora/denoiser.hpp"

namespace memora {

// One adapted linear map. The host weight W is d x k (out x in); the update
// is beta * B * A with A: r x k and B: d x r.
struct LoraLayer {
  std::string name;  // host layer, e.g. "mid.cond"; the weight is name + ".weight"
  Matrix A;
  Matrix B;
};

struct LoraAdapter {
  int rank = 0;
  double beta = 1.0;
  std::vector<LoraLayer> layers;
  std::string host_checksum;
  std::optional<int> erased_concept;

  std::vector<std::string> target_layer_names() const;
  const LoraLayer& layer(const std::string& name) const;
  // beta * B * A for one layer.
  Matrix delta(const std::string& name) const;
};

// Dense per-layer weight deltas keyed by layer name. Merged adapters are
// carried in this form.
using DeltaSet = std::map<std::string, Matrix>;

// B starts at zero and A at N(0, 1/k), so the initial delta is exactly zero.
LoraAdapter init_adapter(const Denoiser& model, int rank, double beta, std::uint64_t seed,
                         const std::vector<std::string>& targets = Denoiser::cond_layers());

// Throws if a layer is missing from the host or the rank is too large for it.
void check_adapter(const Denoiser& host, const LoraAdapter& adapter);

DeltaSet dense_delta(const LoraAdapter& adapter);

// Copies of the host with W replaced by W + delta; the host is not touched.
Denoiser apply_delta(const Denoiser& host, const DeltaSet& delta);
Denoiser apply_adapter(const Denoiser& host, const LoraAdapter& adapter);

Matrix adapted_forward(const Denoiser& host, const LoraAdapter& adapter, const Matrix& z, int t,
                       const Matrix& cond);

// a * delta(a1) + (1 - a) * delta(a2).
DeltaSet merge_adapters(const LoraAdapter& a1, const LoraAdapter& a2, double a);
// Extension to n adapters: weights are normalised to sum to one.
DeltaSet merge_adapters(const std::vector<LoraAdapter>& adapters, const std::vector<double>& weights);

LoraAdapter with_beta(LoraAdapter adapter, double beta);

}  // namespace memora
