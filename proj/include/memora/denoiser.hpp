#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memora/autograd.hpp"
#include "memora/diffusion.hpp"
#include "memora/params.hpp"

namespace memora {

struct DenoiserSpec {
  LatentShape latent{};
  int n_concepts = 4;
  int cond_dim = 16;
  int hidden = 256;
  int bottleneck = 128;
  int time_features = 32;
  int time_dim = 64;
};

// Sinusoidal timestep features, one row per entry of t.
Matrix time_features(const std::vector<int>& t, int n_features);

// U-shaped MLP noise predictor over flattened latents. Two encoder blocks,
// a gated bottleneck and one decoder block with skips; every block adds a
// timestep projection and a bias-free projection of the condition embedding.
// The output head and a time-gated input skip start at zero, so a fresh
// model predicts exactly zero noise.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserSpec& spec, std::uint64_t seed);
  // Rehydrate from stored parameters; shapes are validated.
  Denoiser(const DenoiserSpec& spec, ParamSet params);

  const DenoiserSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int latent_dim() const { return spec_.latent.size(); }
  int null_index() const { return spec_.n_concepts; }
  std::string checksum() const { return params_.checksum(); }

  Condition condition(int concept_id) const;
  Condition null_condition() const;
  Matrix cond_rows(const Condition& c, Eigen::Index n) const;

  Matrix predict(const Matrix& z, int t, const Matrix& cond) const;
  Matrix predict(const Matrix& z, const std::vector<int>& t, const Matrix& cond) const;

  // The condition projections, i.e. where concept information enters.
  static const std::vector<std::string>& cond_layers();

 private:
  void validate() const;

  DenoiserSpec spec_;
  ParamSet params_;
};

// Layer blocks of the network; `Param` maps a parameter name to whatever the
// backend consumes (a const Matrix& for EvalOps, a Var for TapeOps).
template <class Ops, class Param>
typename Ops::Value denoiser_forward(const Ops& ops, Param&& p, const typename Ops::Value& x,
                                     const typename Ops::Value& tfeat,
                                     const typename Ops::Value& cond) {
  const auto te = ops.silu(ops.linear(
      ops.silu(ops.linear(tfeat, p("time.fc1.weight"), p("time.fc1.bias"))),
      p("time.fc2.weight"), p("time.fc2.bias")));
  auto block = [&](const auto& in, const std::string& name) {
    auto h = ops.add(ops.linear(in, p(name + ".weight"), p(name + ".bias")),
                     ops.linear(te, p(name + ".time.weight"), p(name + ".time.bias")));
    return ops.add(h, ops.linear(cond, p(name + ".cond.weight")));
  };
  const auto a0 = ops.silu(block(x, "enc0"));
  const auto a1 = ops.silu(block(a0, "enc1"));
  const auto gate = ops.add_scalar(ops.linear(cond, p("mid.gate.weight")), 1.0);
  const auto m = ops.add(ops.mul(ops.silu(block(a1, "mid")), gate), a1);
  const auto d1 = ops.add(ops.silu(block(m, "dec1")), a0);
  return ops.add(ops.linear(d1, p("out.weight"), p("out.bias")),
                 ops.mul(ops.linear(te, p("skip.weight"), p("skip.bias")), x));
}

// Places every parameter on the tape. Names in `trainable` become leaves,
// the rest constants.
std::map<std::string, Var> params_on_tape(Tape& tape, const ParamSet& params,
                                          const std::vector<std::string>& trainable);

}  // namespace memora
