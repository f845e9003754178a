#include "memora/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

#include "memora/rng.hpp"

namespace memora {

namespace {

constexpr std::uint64_t kFidStream = 0xF1D;

double rate(const std::vector<bool>& hits) {
  if (hits.empty()) return 0.0;
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(hits.size());
}

std::vector<bool> hits_for(const ConceptClassifier& clf, const Matrix& images, int concept_id) {
  const std::vector<int> pred = clf.predict(images);
  std::vector<bool> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] == concept_id;
  return out;
}

Matrix covariance(const Matrix& x, const RowVector& mean) {
  const Matrix c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Matrix stack_rows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const Matrix& m : parts) rows += m.rows();
  Matrix out(rows, parts.empty() ? 0 : parts[0].cols());
  Eigen::Index r = 0;
  for (const Matrix& m : parts) {
    out.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  return out;
}

}  // namespace

Generator plain_generator(const Denoiser& model, const NoiseSchedule& sched, const SamplerSettings& sampler) {
  return [&model, &sched, sampler](const Matrix& z_T, int concept_id) {
    return sample(model, z_T, model.cond_rows(model.condition(concept_id), z_T.rows()), sched,
                  sampler.guidance, sampler.n_infer_steps, sampler.clip_sample);
  };
}

Generator automemora_generator(const Denoiser& unlearned, const Denoiser& adapted, const NoiseSchedule& sched,
                               const SamplerSettings& sampler, double w) {
  return [&unlearned, &adapted, &sched, sampler, w](const Matrix& z_T, int concept_id) {
    return automemora_sample(unlearned, adapted, z_T,
                             unlearned.cond_rows(unlearned.condition(concept_id), z_T.rows()), sched,
                             sampler.guidance, w, sampler.n_infer_steps, sampler.clip_sample);
  };
}

Matrix prompt_batch(std::uint64_t seed, int n, int dim) {
  Matrix out(n, dim);
  for (int i = 0; i < n; ++i) out.row(i) = prompt_noise(derive_seed(seed, static_cast<std::uint64_t>(i)), dim);
  return out;
}

double asr(const Generator& gen, int concept_id, const ConceptClassifier& clf, int n_prompts,
           std::uint64_t seed, int dim) {
  if (n_prompts < 1) throw std::invalid_argument("asr needs at least one prompt");
  return rate(hits_for(clf, gen(prompt_batch(seed, n_prompts, dim), concept_id), concept_id));
}

AsrOutcome asr_detail(const Denoiser& model, int concept_id, const ConceptClassifier& clf, int n_prompts,
                      const std::optional<AttackBudget>& budget, std::uint64_t seed, const NoiseSchedule& sched,
                      const SamplerSettings& sampler, int jobs) {
  if (n_prompts < 1) throw std::invalid_argument("asr needs at least one prompt");
  AsrOutcome out;
  out.images = plain_generator(model, sched, sampler)(prompt_batch(seed, n_prompts, model.latent_dim()),
                                                        concept_id);
  out.pre_hits = hits_for(clf, out.images, concept_id);
  out.post_hits = out.pre_hits;
  if (budget) {
    std::vector<int> todo;
    for (int i = 0; i < n_prompts; ++i)
      if (!out.pre_hits[i]) todo.push_back(i);
    std::vector<AttackResult> results(todo.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t k = next++; k < todo.size(); k = next++)
        results[k] = attack_condition(model, clf, concept_id, *budget,
                                      derive_seed(seed, static_cast<std::uint64_t>(todo[k])), sched, sampler);
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(todo.size())));
    if (n_threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
    for (std::size_t k = 0; k < todo.size(); ++k)
      if (results[k].success) out.post_hits[todo[k]] = true;
    out.attacks = std::move(results);
  }
  out.pre_rate = rate(out.pre_hits);
  out.post_rate = rate(out.post_hits);
  return out;
}

double fid(const Matrix& a, const Matrix& b, double ridge) {
  if (a.cols() != b.cols()) throw std::invalid_argument("fid: feature dimensions differ");
  const Eigen::Index d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1)
    throw std::invalid_argument(fmt::format("fid: need at least {} rows per set", d + 1));
  const RowVector ma = a.colwise().mean(), mb = b.colwise().mean();
  Matrix ca = covariance(a, ma), cb = covariance(b, mb);
  if (ridge > 0.0) {
    ca.diagonal().array() += ridge;
    cb.diagonal().array() += ridge;
  }

  Eigen::SelfAdjointEigenSolver<Matrix> ea(ca), eb(cb);
  auto check_singular = [ridge](const Vector& ev, const char* which) {
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ridge <= 0.0 && ev.minCoeff() <= 1e-12 * scale)
      throw std::domain_error(fmt::format("fid: covariance of set {} is singular; pass a ridge", which));
  };
  check_singular(ea.eigenvalues(), "a");
  check_singular(eb.eigenvalues(), "b");

  // Tr((Ca Cb)^1/2) = Tr((Ca^1/2 Cb Ca^1/2)^1/2), the latter symmetric PSD.
  const Matrix root_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  const Matrix inner = root_a * cb * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> ei(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const Vector ev = ei.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol) throw std::domain_error("fid: product covariance is not positive semi-definite");
  const double tr_sqrt = ev.cwiseMax(0.0).cwiseSqrt().sum();

  const double value = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

Matrix extract_features(const Matrix& images, const ConceptClassifier& clf) { return clf.features(images); }

CosineReport cosine_report(const Matrix& images_a, const Matrix& images_b, const ConceptClassifier& clf,
                           int bins) {
  if (images_a.rows() != images_b.rows() || images_a.cols() != images_b.cols())
    throw std::invalid_argument("cosine_report: image sets must be paired");
  if (images_a.rows() == 0) throw std::invalid_argument("cosine_report: empty image sets");
  const Matrix fa = clf.features(images_a), fb = clf.features(images_b);
  CosineReport out;
  out.histogram.assign(static_cast<std::size_t>(bins), 0);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < fa.rows(); ++i) {
    const double na = fa.row(i).norm(), nb = fb.row(i).norm();
    if (na == 0.0 || nb == 0.0) throw std::domain_error(fmt::format("cosine_report: zero feature row {}", i));
    const double c = std::clamp(fa.row(i).dot(fb.row(i)) / (na * nb), -1.0, 1.0);
    sum += c;
    const int bin = std::min(bins - 1, static_cast<int>((c + 1.0) / 2.0 * bins));
    ++out.histogram[static_cast<std::size_t>(bin)];
  }
  out.mean = sum / static_cast<double>(fa.rows());
  return out;
}

RecoveryCurve recovery_curve(const Denoiser& unlearned, const RelearnRun& run, int concept_id,
                             const ConceptClassifier& clf, int n_prompts, std::uint64_t seed,
                             const NoiseSchedule& sched, const SamplerSettings& sampler,
                             const std::string& label) {
  if (run.checkpoints.size() < 2) throw std::invalid_argument("recovery_curve: need at least two checkpoints");
  RecoveryCurve curve;
  curve.method_label = label;
  curve.concept_id = concept_id;
  for (const auto& [step, adapter] : run.checkpoints) {
    const Denoiser adapted = apply_adapter(unlearned, adapter);
    curve.steps.push_back(step);
    curve.asr_values.push_back(
        asr(plain_generator(adapted, sched, sampler), concept_id, clf, n_prompts, seed, unlearned.latent_dim()));
  }
  return curve;
}

std::string to_string(ForgettingMode mode) {
  return mode == ForgettingMode::short_term ? "short_term" : "long_term";
}

ForgettingVerdict classify_forgetting(const RecoveryCurve& curve, double tau, long horizon) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  if (curve.steps.empty() || curve.steps.size() != curve.asr_values.size())
    throw std::invalid_argument("recovery curve is empty or misaligned");
  if (horizon < curve.steps.front() || horizon > curve.steps.back())
    throw std::invalid_argument(fmt::format("horizon {} outside the curve's steps", horizon));
  ForgettingVerdict v;
  v.threshold = tau;
  v.horizon = horizon;
  for (std::size_t i = 0; i < curve.steps.size(); ++i)
    if (curve.asr_values[i] >= tau) {
      v.steps_to_threshold = curve.steps[i];
      break;
    }
  v.mode = v.steps_to_threshold && *v.steps_to_threshold <= horizon ? ForgettingMode::short_term
                                                                     : ForgettingMode::long_term;
  return v;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need paired samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

EvalReport evaluate(const Generator& gen, const Generator& reference, int concept_id,
                    const ConceptClassifier& clf, const EvalOptions& options, int dim,
                    const NoiseSchedule& sched, const Denoiser* attack_model) {
  EvalReport r;
  r.concept_id = concept_id;
  r.n_prompts = options.n_prompts;
  for (int i = 0; i < options.n_prompts; ++i)
    r.seeds.push_back(derive_seed(options.seed, static_cast<std::uint64_t>(i)));

  const Matrix z = prompt_batch(options.seed, options.n_prompts, dim);
  const Matrix images = gen(z, concept_id);
  const std::vector<bool> hits = hits_for(clf, images, concept_id);
  r.pre_asr = rate(hits);
  r.post_asr = r.pre_asr;
  r.condition_fidelity = clf.probabilities(images).col(concept_id).mean();
  if (options.attack && attack_model) {
    r.post_asr = asr_detail(*attack_model, concept_id, clf, options.n_prompts, options.attack, options.seed,
                            sched, options.sampler, options.jobs)
                     .post_rate;
  }

  const CosineReport cos = cosine_report(images, reference(z, concept_id), clf);
  r.cosine_mean = cos.mean;
  r.cosine_histogram = cos.histogram;

  std::vector<Matrix> mine_all, ref_all, mine_kept, ref_kept;
  const std::uint64_t fid_seed = derive_seed(options.seed, kFidStream);
  for (int c = 0; c < clf.n_concepts(); ++c) {
    const Matrix zc = prompt_batch(derive_seed(fid_seed, static_cast<std::uint64_t>(c)), options.fid_per_concept, dim);
    Matrix fm = clf.features(gen(zc, c)), fr = clf.features(reference(zc, c));
    if (c != concept_id) {
      mine_kept.push_back(fm);
      ref_kept.push_back(fr);
    }
    mine_all.push_back(std::move(fm));
    ref_all.push_back(std::move(fr));
  }
  r.fid_retained = fid(stack_rows(mine_kept), stack_rows(ref_kept), options.fid_ridge);
  r.fid_all = fid(stack_rows(mine_all), stack_rows(ref_all), options.fid_ridge);
  return r;
}

}  // namespace memora
