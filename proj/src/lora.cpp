#include "memora/lora.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

namespace {

std::string weight_name(const std::string& layer) { return layer + ".weight"; }

void require_same_layers(const LoraAdapter& a, const LoraAdapter& b) {
  if (a.target_layer_names() != b.target_layer_names())
    throw std::invalid_argument("merge: adapters target different layers");
  if (a.host_checksum != b.host_checksum)
    throw std::invalid_argument("merge: adapters were trained against different hosts");
}

}  // namespace

std::vector<std::string> LoraAdapter::target_layer_names() const {
  std::vector<std::string> out;
  for (const LoraLayer& l : layers) out.push_back(l.name);
  return out;
}

const LoraLayer& LoraAdapter::layer(const std::string& name) const {
  for (const LoraLayer& l : layers)
    if (l.name == name) return l;
  throw std::out_of_range("adapter has no layer '" + name + "'");
}

Matrix LoraAdapter::delta(const std::string& name) const {
  const LoraLayer& l = layer(name);
  return beta * (l.B * l.A);
}

void check_adapter(const Denoiser& host, const LoraAdapter& adapter) {
  for (const LoraLayer& l : adapter.layers) {
    if (!host.params().contains(weight_name(l.name)))
      throw std::invalid_argument("host has no layer '" + l.name + "'");
    const Matrix& w = host.params().at(weight_name(l.name));
    if (2 * adapter.rank > std::min(w.rows(), w.cols()))
      throw std::invalid_argument(fmt::format("rank {} too large for layer '{}' ({}x{})", adapter.rank,
                                              l.name, w.rows(), w.cols()));
    if (l.A.rows() != adapter.rank || l.A.cols() != w.cols() || l.B.rows() != w.rows() ||
        l.B.cols() != adapter.rank)
      throw std::invalid_argument("adapter factors for '" + l.name + "' do not fit the host");
  }
}

LoraAdapter init_adapter(const Denoiser& model, int rank, double beta, std::uint64_t seed,
                         const std::vector<std::string>& targets) {
  if (rank < 1) throw std::invalid_argument("rank must be at least 1");
  if (targets.empty()) throw std::invalid_argument("adapter needs at least one target layer");
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.beta = beta;
  adapter.host_checksum = model.checksum();
  Rng rng(seed);
  for (const std::string& name : targets) {
    if (!model.params().contains(weight_name(name)))
      throw std::invalid_argument("host has no layer '" + name + "'");
    const Matrix& w = model.params().at(weight_name(name));
    const double k = static_cast<double>(w.cols());
    adapter.layers.push_back(
        {name, rng.normal_matrix(rank, w.cols(), 1.0 / std::sqrt(k)), Matrix::Zero(w.rows(), rank)});
  }
  check_adapter(model, adapter);
  return adapter;
}

DeltaSet dense_delta(const LoraAdapter& adapter) {
  DeltaSet out;
  for (const LoraLayer& l : adapter.layers) out.emplace(l.name, adapter.delta(l.name));
  return out;
}

Denoiser apply_delta(const Denoiser& host, const DeltaSet& delta) {
  Denoiser out = host;
  for (const auto& [name, d] : delta) {
    if (!out.params().contains(weight_name(name)))
      throw std::invalid_argument("host has no layer '" + name + "'");
    Matrix& w = out.params().at(weight_name(name));
    if (w.rows() != d.rows() || w.cols() != d.cols())
      throw std::invalid_argument("delta for '" + name + "' does not fit the host");
    w += d;
  }
  return out;
}

Denoiser apply_adapter(const Denoiser& host, const LoraAdapter& adapter) {
  check_adapter(host, adapter);
  return apply_delta(host, dense_delta(adapter));
}

Matrix adapted_forward(const Denoiser& host, const LoraAdapter& adapter, const Matrix& z, int t,
                       const Matrix& cond) {
  return apply_adapter(host, adapter).predict(z, t, cond);
}

DeltaSet merge_adapters(const LoraAdapter& a1, const LoraAdapter& a2, double a) {
  if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("merge weight must lie in [0, 1]");
  require_same_layers(a1, a2);
  DeltaSet out;
  for (const LoraLayer& l : a1.layers) out.emplace(l.name, a * a1.delta(l.name) + (1.0 - a) * a2.delta(l.name));
  return out;
}

DeltaSet merge_adapters(const std::vector<LoraAdapter>& adapters, const std::vector<double>& weights) {
  if (adapters.empty() || adapters.size() != weights.size())
    throw std::invalid_argument("merge: need one weight per adapter");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0) || std::any_of(weights.begin(), weights.end(), [](double w) { return w < 0.0; }))
    throw std::invalid_argument("merge: weights must be non-negative with a positive sum");
  for (std::size_t i = 1; i < adapters.size(); ++i) require_same_layers(adapters[0], adapters[i]);
  DeltaSet out;
  for (const LoraLayer& l : adapters[0].layers) {
    Matrix acc = Matrix::Zero(l.B.rows(), l.A.cols());
    for (std::size_t i = 0; i < adapters.size(); ++i) acc += (weights[i] / total) * adapters[i].delta(l.name);
    out.emplace(l.name, std::move(acc));
  }
  return out;
}

LoraAdapter with_beta(LoraAdapter adapter, double beta) {
  adapter.beta = beta;
  return adapter;
}

}  // namespace memora
