// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Criteria 1-4 are algebraic and take seconds; 5-11 run the full default
// pipeline twice under one master seed.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "memora/eval.hpp"
#include "memora/harness/commands.hpp"
#include "memora/harness/config.hpp"
#include "memora/harness/store.hpp"
#include "memora/lora.hpp"
#include "memora/memora.hpp"
#include "memora/rng.hpp"
#include "memora/sampling.hpp"

using namespace memora;
using namespace memora::harness;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

void print(const Outcome& o) {
  std::cout << fmt::format("criterion {:>2} {:<28} {}  {}", o.id, o.name, o.pass ? "PASS" : "FAIL", o.detail)
            << std::endl;
}

Outcome slerp_algebra() {
  const auto t0 = Clock::now();
  Rng rng(101);
  bool endpoints = true, symmetric = true;
  double worst_norm = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const RowVector a = rng.normal_matrix(1, 256);
    RowVector b = rng.normal_matrix(1, 256);
    const double p = rng.uniform(0.0, 1.0);
    endpoints = endpoints && slerp(a, b, 0.0) == a && slerp(a, b, 1.0) == b;
    symmetric = symmetric && slerp(a, b, p) == slerp(b, a, 1.0 - p);
    b *= a.norm() / b.norm();
    worst_norm = std::max(worst_norm, std::abs(slerp(a, b, p).norm() - a.norm()) / a.norm());
  }
  const double secs = since(t0);
  return {1, "slerp algebra", endpoints && symmetric && worst_norm <= 1e-6 && secs < 1.0,
          fmt::format("endpoints {}, symmetry {}, norm drift {:.2e}, {:.2f} s", endpoints ? "exact" : "off",
                      symmetric ? "exact" : "off", worst_norm, secs)};
}

double ddim_round_trip(const NoiseSchedule& sched) {
  Rng rng(102);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    int a = rng.uniform_int(0, sched.n_train_steps - 1), b = rng.uniform_int(0, sched.n_train_steps - 1);
    if (a < b) std::swap(a, b);
    const Matrix z = rng.normal_matrix(1, 256), eps = rng.normal_matrix(1, 256);
    const Matrix back = ddim_inverse_step(ddim_step(z, eps, a, b, sched), eps, b, a, sched);
    worst = std::max(worst, (back - z).norm() / z.norm());
  }
  return worst;
}

// Mean per-pixel RMS of invert -> denoise on the base model over held-out images.
double base_inversion_rms(const RunConfig& c) {
  const Store store(c.out_dir);
  const Denoiser base = load_denoiser(store, names::base);
  const NoiseSchedule sched = c.make_schedule();
  const ConceptDataset held =
      generate_dataset(c.world.n_concepts, 8, c.world.image_size, c.stage_seed(kSeedHeldout));
  const int n = c.schedule.n_infer_steps;
  double total = 0.0;
  for (Eigen::Index i = 0; i < held.images.rows(); ++i) {
    const LatentTrajectory tr =
        invert_image(base, Latent{base.spec().latent, held.images.row(i), std::nullopt},
                     base.condition(held.labels[i]), sched, n - c.memora.restart_step, c.memora.s_inv, n,
                     c.memora.inversion_clip);
    total += tr.round_trip_error;
  }
  return total / static_cast<double>(held.images.rows());
}

Outcome lora_algebra() {
  DenoiserSpec spec;
  spec.latent = LatentShape{1, 8, 8};
  Denoiser host(spec, 103);
  Rng rng(104);
  for (const std::string name : {"out.weight", "skip.weight"}) {
    Matrix& w = host.params().at(name);
    w = 0.1 * rng.normal_matrix(w.rows(), w.cols());
  }
  const Matrix z = rng.normal_matrix(4, host.latent_dim());
  const Matrix cond = host.cond_rows(host.condition(1), 4);
  const LoraAdapter fresh = init_adapter(host, 4, 1.0, 105);
  const bool transparent = adapted_forward(host, fresh, z, 400, cond) == host.predict(z, 400, cond);

  auto random = [&](std::uint64_t seed, double beta) {
    LoraAdapter a = init_adapter(host, 4, beta, seed);
    Rng r(seed);
    for (auto& l : a.layers) l.B = r.normal_matrix(l.B.rows(), l.B.cols());
    return a;
  };
  const LoraAdapter a1 = random(106, 0.8), a2 = random(107, 1.0);
  double dense = 0.0, half = 0.0;
  bool ends = true;
  const Denoiser adapted = apply_adapter(host, a1);
  const DeltaSet m1 = merge_adapters(a1, a2, 1.0), m0 = merge_adapters(a1, a2, 0.0), mh = merge_adapters(a1, a2, 0.5);
  for (const LoraLayer& l : a1.layers) {
    const Matrix& w = host.params().at(l.name + ".weight");
    const Matrix& l2B = a2.layer(l.name).B;
    const Matrix& l2A = a2.layer(l.name).A;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double ba1 = 0.0, ba2 = 0.0;
        for (Eigen::Index r = 0; r < l.A.rows(); ++r) {
          ba1 += l.B(i, r) * l.A(r, j);
          ba2 += l2B(i, r) * l2A(r, j);
        }
        dense = std::max(dense, std::abs(adapted.params().at(l.name + ".weight")(i, j) - (w(i, j) + 0.8 * ba1)));
        half = std::max(half, std::abs(mh.at(l.name)(i, j) - (0.5 * 0.8 * ba1 + 0.5 * ba2)));
      }
    ends = ends && m1.at(l.name) == a1.delta(l.name) && m0.at(l.name) == a2.delta(l.name);
  }
  return {3, "lora algebra", transparent && ends && dense <= 1e-10 && half <= 1e-10,
          fmt::format("transparency {}, dense {:.1e}, merge ends {}, a=0.5 {:.1e}", transparent ? "exact" : "off",
                      dense, ends ? "exact" : "off", half)};
}

Outcome frechet_oracle() {
  Rng rng(108);
  const Matrix a = rng.normal_matrix(1000, 8);
  const double self = std::abs(fid(a, a));
  double sym = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Matrix x = rng.normal_matrix(300, 8), y = 1.3 * rng.normal_matrix(400, 8);
    sym = std::max(sym, std::abs(fid(x, y) - fid(y, x)));
  }
  // Identity covariances, so the distance is the squared mean shift.
  RowVector shift(8);
  shift << 1.0, -0.5, 0.25, 2.0, 0.0, 0.75, -1.25, 0.5;
  const Matrix g1 = rng.normal_matrix(5000, 8);
  const Matrix g2 = rng.normal_matrix(5000, 8).rowwise() + shift;
  const double rel = std::abs(fid(g1, g2) - shift.squaredNorm()) / shift.squaredNorm();
  return {4, "frechet oracle", self <= 1e-8 && sym <= 1e-10 && rel <= 0.05,
          fmt::format("self {:.1e}, symmetry {:.1e}, shift error {:.2f}%", self, sym, 100.0 * rel)};
}

double timing(const RunConfig& c, const std::string& name) {
  const fs::path p = c.out_dir / "timings" / (name + ".json");
  return nlohmann::json::parse(read_file(p)).at("seconds").get<double>();
}

const UnlearnSummary& unlearned(const PipelineSummary& s, const std::string& label) {
  for (const auto& u : s.unlearned)
    if (u.label == label) return u;
  throw std::runtime_error("pipeline produced no model " + label);
}

const RelearnSummary& relearned(const PipelineSummary& s, const std::string& label) {
  for (const auto& r : s.relearned)
    if (r.label == label) return r;
  throw std::runtime_error("pipeline produced no relearn run " + label);
}

const EvalReport& evaluated(const PipelineSummary& s, const std::string& label) {
  for (const auto& e : s.evals)
    if (e.label == label) return e;
  throw std::runtime_error("pipeline produced no evaluation " + label);
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  return out;
}

std::vector<Outcome> pipeline_criteria(const RunConfig& c, const PipelineSummary& s) {
  std::vector<Outcome> out;
  const int k1 = c.unlearn.concept_id, k2 = c.unlearn.second_concept;
  const std::string ng = to_string(UnlearnMethod::negative_guidance);
  const std::string rt = to_string(UnlearnMethod::retrain_excluding);

  {
    const double worst = *std::min_element(s.base.asr.begin(), s.base.asr.end());
    const bool ok = worst >= 0.90 && c.eval.base_gate_prompts >= 200 && s.base.heldout_accuracy >= 0.98 &&
                    s.base.train_seconds < 15 * 60;
    out.push_back({5, "base-world gate", ok,
                   fmt::format("min ASR {:.3f} over {} samples, classifier {:.4f}, training {:.0f} s", worst,
                               c.eval.base_gate_prompts, s.base.heldout_accuracy, s.base.train_seconds)});
  }
  {
    const UnlearnSummary& n = unlearned(s, ng);
    const UnlearnSummary& r = unlearned(s, rt);
    double retained = 1.0;
    for (int k = 0; k < static_cast<int>(n.concept_asr.size()); ++k)
      if (k != k1) retained = std::min(retained, n.concept_asr[k]);
    const bool ok = n.pre_relearn_asr <= 0.25 && retained >= 0.80 && r.pre_relearn_asr <= 0.10;
    out.push_back({6, "unlearning gate", ok,
                   fmt::format("{} erased {:.3f}, retained min {:.3f}; {} erased {:.3f}", ng, n.pre_relearn_asr,
                               retained, rt, r.pre_relearn_asr)});
  }
  {
    const RelearnSummary& n = relearned(s, relearn_label(ng, k1));
    const RelearnSummary& r = relearned(s, relearn_label(rt, k1));
    const double n0 = n.curve.asr_values.front(), nf = n.curve.asr_values.back(), rf = r.curve.asr_values.back();
    const double secs = timing(c, "relearn_" + n.label) + timing(c, "relearn_" + r.label);
    const bool ok = n0 <= 0.25 && nf >= 0.70 && rf <= nf - 0.20 && n.verdict.mode == ForgettingMode::short_term &&
                    r.verdict.mode == ForgettingMode::long_term && n.curve.steps.back() == 500 &&
                    c.memora.lora.rank == 4 && secs < 20 * 60;
    out.push_back({7, "recovery", ok,
                   fmt::format("{} {:.2f} -> {:.2f} ({}), {} final {:.2f} ({}), {:.0f} s", ng, n0, nf,
                               to_string(n.verdict.mode), rt, rf, to_string(r.verdict.mode), secs)});
  }
  {
    bool ok = c.eval.n_prompts >= 50 && !s.attacks.empty();
    std::string worst;
    double margin = 1.0;
    for (const auto& a : s.attacks) {
      ok = ok && a.post_asr >= a.pre_asr;
      if (a.post_asr - a.pre_asr < margin) {
        margin = a.post_asr - a.pre_asr;
        worst = fmt::format("{} c{}", a.model, a.concept_id);
      }
    }
    out.push_back({8, "attack ordering", ok,
                   fmt::format("{} models x {} seeds, smallest lift {:.3f} ({})", s.attacks.size(), c.eval.n_prompts,
                               margin, worst)});
  }
  {
    const EvalReport& plain = evaluated(s, ng + "+memora");
    const EvalReport& guided = evaluated(s, ng + "+memora+automemora");
    const bool ok = c.eval.automemora_w == 0.5 && guided.fid_retained <= plain.fid_retained &&
                    guided.pre_asr >= 0.5 * plain.pre_asr && guided.seeds == plain.seeds;
    out.push_back({9, "automemora trade-off", ok,
                   fmt::format("retained FD {:.3f} vs {:.3f}, ASR {:.2f} vs {:.2f}", guided.fid_retained,
                               plain.fid_retained, guided.pre_asr, plain.pre_asr)});
  }
  {
    const EvalReport& m1 = evaluated(s, fmt::format("double+merged_c{}", k1));
    const EvalReport& m2 = evaluated(s, fmt::format("double+merged_c{}", k2));
    const bool ok = c.eval.merge_a == 0.5 && m1.pre_asr >= 0.5 && m2.pre_asr >= 0.5;
    out.push_back({10, "multi-adapter merge", ok,
                   fmt::format("a={} ASR c{} {:.2f}, c{} {:.2f}", c.eval.merge_a, k1, m1.pre_asr, k2, m2.pre_asr)});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run for the memora lab"};
  std::string config_path, work;
  std::optional<std::uint64_t> seed;
  bool quick = false, keep = false;
  app.add_option("--config", config_path, "run config (defaults otherwise)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--work", work, "scratch directory for the two pipeline runs");
  app.add_flag("--quick", quick, "only the algebraic criteria 1-4");
  app.add_flag("--keep", keep, "keep the pipeline runs");
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = config_path.empty() ? parse_config("") : parse_config(read_file(config_path));
    if (seed) c.seed = *seed;
    c.jobs = 1;
    const NoiseSchedule sched = c.make_schedule();
    std::vector<Outcome> all;

    all.push_back(slerp_algebra());
    const auto t2 = Clock::now();
    const double step_err = ddim_round_trip(sched);
    double ddim_secs = since(t2);
    Outcome ddim{2, "ddim round trip", step_err <= 1e-6, fmt::format("step/inverse {:.1e}", step_err)};
    if (quick) ddim.detail += ", base inversion skipped";
    all.push_back(ddim);
    all.push_back(lora_algebra());
    all.push_back(frechet_oracle());

    if (!quick) {
      const fs::path root = work.empty() ? fs::temp_directory_path() / fmt::format("memora_acceptance_{}", c.seed)
                                         : fs::path(work);
      fs::remove_all(root);
      RunConfig ca = c, cb = c;
      ca.out_dir = root / "a";
      cb.out_dir = root / "b";

      Context ctx_a(ca, false, &std::cerr);
      const PipelineSummary sa = run_pipeline(ctx_a);
      const auto t_inv = Clock::now();
      const double rms = base_inversion_rms(ca);
      ddim_secs += since(t_inv);
      Outcome& d = all[1];
      d.pass = d.pass && rms <= 0.05 && ddim_secs < 120.0;
      d.detail += fmt::format(", base invert/denoise {:.4f} RMS, {:.1f} s", rms, ddim_secs);
      for (Outcome& o : pipeline_criteria(ca, sa)) all.push_back(std::move(o));

      Context ctx_b(cb, false, nullptr);
      run_pipeline(ctx_b);
      const auto fa = csv_files(ca.out_dir), fb = csv_files(cb.out_dir);
      std::vector<std::string> differ;
      for (const auto& [name, text] : fa)
        if (!fb.count(name) || fb.at(name) != text) differ.push_back(name);
      for (const auto& [name, text] : fb)
        if (!fa.count(name)) differ.push_back(name);
      Outcome det{11, "determinism", differ.empty() && !fa.empty(),
                  differ.empty() ? fmt::format("{} csv files identical", fa.size())
                                 : fmt::format("{} of {} csv files differ, first {}", differ.size(), fa.size(),
                                               differ.front())};
      all.push_back(det);
      if (!keep) fs::remove_all(root);
    }

    for (const Outcome& o : all) print(o);
    const long passed = std::count_if(all.begin(), all.end(), [](const Outcome& o) { return o.pass; });
    std::cout << fmt::format("{} of {} criteria passed", passed, all.size()) << std::endl;
    return passed == static_cast<long>(all.size()) ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
}
