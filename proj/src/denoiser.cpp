#include "memora/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

namespace {

struct LayerShape {
  std::string name;
  int out;
  int in;
  bool bias;
  bool zero;
};

std::vector<LayerShape> layer_shapes(const DenoiserSpec& s) {
  const int d = s.latent.size();
  const int e = s.cond_dim;
  const int te = s.time_dim;
  std::vector<LayerShape> out = {
      {"time.fc1", te, s.time_features, true, false},
      {"time.fc2", te, te, true, false},
  };
  auto block = [&](const std::string& name, int o, int i) {
    out.push_back({name, o, i, true, false});
    out.push_back({name + ".time", o, te, true, false});
    out.push_back({name + ".cond", o, e, false, false});
  };
  block("enc0", s.hidden, d);
  block("enc1", s.bottleneck, s.hidden);
  block("mid", s.bottleneck, s.bottleneck);
  out.push_back({"mid.gate", s.bottleneck, e, false, false});
  block("dec1", s.hidden, s.bottleneck);
  out.push_back({"out", d, s.hidden, true, true});
  out.push_back({"skip", d, te, true, true});
  return out;
}

}  // namespace

Matrix time_features(const std::vector<int>& t, int n_features) {
  const int half = n_features / 2;
  Matrix out(static_cast<Eigen::Index>(t.size()), 2 * half);
  for (std::size_t r = 0; r < t.size(); ++r)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = static_cast<double>(t[r]) * freq;
      out(r, i) = std::sin(a);
      out(r, half + i) = std::cos(a);
    }
  return out;
}

Denoiser::Denoiser(const DenoiserSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.time_features % 2 != 0) throw std::invalid_argument("time_features must be even");
  Rng rng(seed);
  // Uniform fan-in initialisation for weights and biases alike.
  for (const LayerShape& l : layer_shapes(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    Matrix w(l.out, l.in);
    Matrix b(1, l.out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = l.zero ? 0.0 : rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = l.zero ? 0.0 : rng.uniform(-bound, bound);
    params_.add(l.name + ".weight", std::move(w));
    if (l.bias) params_.add(l.name + ".bias", std::move(b));
  }
  params_.add("cond.table", rng.normal_matrix(spec.n_concepts + 1, spec.cond_dim));
}

Denoiser::Denoiser(const DenoiserSpec& spec, ParamSet params) : spec_(spec), params_(std::move(params)) {
  validate();
}

void Denoiser::validate() const {
  std::size_t expected = 1;
  auto check = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    if (!params_.contains(name)) throw std::invalid_argument("denoiser is missing '" + name + "'");
    const Matrix& m = params_.at(name);
    if (m.rows() != r || m.cols() != c)
      throw std::invalid_argument(fmt::format("'{}' has shape {}x{}, expected {}x{}", name, m.rows(),
                                              m.cols(), r, c));
  };
  for (const LayerShape& l : layer_shapes(spec_)) {
    check(l.name + ".weight", l.out, l.in);
    ++expected;
    if (l.bias) {
      check(l.name + ".bias", 1, l.out);
      ++expected;
    }
  }
  check("cond.table", spec_.n_concepts + 1, spec_.cond_dim);
  if (params_.entries().size() != expected) throw std::invalid_argument("denoiser has unexpected parameters");
}

Condition Denoiser::condition(int concept_id) const {
  if (concept_id < 0 || concept_id >= spec_.n_concepts)
    throw std::out_of_range(fmt::format("concept {} outside [0, {})", concept_id, spec_.n_concepts));
  return Condition{concept_id, params_.at("cond.table").row(concept_id)};
}

Condition Denoiser::null_condition() const {
  return Condition{std::nullopt, params_.at("cond.table").row(null_index())};
}

Matrix Denoiser::cond_rows(const Condition& c, Eigen::Index n) const {
  if (c.embedding.size() != spec_.cond_dim)
    throw std::invalid_argument("condition embedding has the wrong dimension");
  return c.embedding.replicate(n, 1);
}

Matrix Denoiser::predict(const Matrix& z, int t, const Matrix& cond) const {
  return predict(z, std::vector<int>(static_cast<std::size_t>(z.rows()), t), cond);
}

Matrix Denoiser::predict(const Matrix& z, const std::vector<int>& t, const Matrix& cond) const {
  if (z.cols() != latent_dim()) throw std::invalid_argument("predict: latent has the wrong size");
  if (cond.rows() != z.rows() || cond.cols() != spec_.cond_dim)
    throw std::invalid_argument("predict: condition rows do not match the batch");
  if (static_cast<Eigen::Index>(t.size()) != z.rows())
    throw std::invalid_argument("predict: one timestep per row required");
  EvalOps ops;
  auto p = [this](const std::string& name) -> const Matrix& { return params_.at(name); };
  return denoiser_forward(ops, p, z, time_features(t, spec_.time_features), cond);
}

const std::vector<std::string>& Denoiser::cond_layers() {
  static const std::vector<std::string> layers = {"dec1.cond", "enc0.cond", "enc1.cond", "mid.cond",
                                                  "mid.gate"};
  return layers;
}

std::map<std::string, Var> params_on_tape(Tape& tape, const ParamSet& params,
                                          const std::vector<std::string>& trainable) {
  std::map<std::string, Var> out;
  for (const auto& [name, value] : params.entries()) {
    const bool train = std::find(trainable.begin(), trainable.end(), name) != trainable.end();
    out.emplace(name, train ? tape.leaf(value) : tape.constant(value));
  }
  return out;
}

}  // namespace memora
