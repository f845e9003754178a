#include "memora/params.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "memora/checksum.hpp"

namespace memora {

void ParamSet::add(const std::string& name, Matrix value) {
  if (!entries_.emplace(name, std::move(value)).second)
    throw std::invalid_argument("duplicate parameter '" + name + "'");
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : entries_) n += static_cast<std::size_t>(m.size());
  return n;
}

std::string ParamSet::checksum() const {
  Sha256 h;
  for (const auto& [name, m] : entries_) {
    h.update(name);
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    h.update(shape, sizeof(shape));
    // Row-major byte order, matching the archive layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        h.update(&v, sizeof(v));
      }
  }
  return h.hex();
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    if (a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols()) return false;
    if (a->second != b->second) return false;
  }
  return true;
}

void Adam::step(ParamSet& params, const GradMap& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    Matrix& m = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    Matrix& v = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
  }
}

double cosine_lr(double lr, long step, long total) {
  if (total <= 0) return lr;
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace memora
