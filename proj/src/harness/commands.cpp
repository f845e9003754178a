#include "memora/harness/commands.hpp"

#include <chrono>
#include <ostream>

#include <fmt/format.h>

#include "memora/harness/table.hpp"

namespace memora::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string step_name(long step) { return fmt::format("step_{:06d}", step); }

// Fraction of the concept's generations that the classifier assigns to `target`.
double class_rate(const Generator& gen, int concept_id, int target, const ConceptClassifier& clf, int n,
                  std::uint64_t seed, int dim) {
  const std::vector<int> pred = clf.predict(gen(prompt_batch(seed, n, dim), concept_id));
  long hits = 0;
  for (int p : pred) hits += p == target;
  return static_cast<double>(hits) / static_cast<double>(n);
}

void write_timing(Context& ctx, const std::string& name, double seconds) {
  ctx.store.put_text("timings/" + name + ".json", nlohmann::json{{"seconds", seconds}}.dump(2) + "\n");
}

struct Loaded {
  ConceptClassifier clf;
  Manifest clf_manifest;
};

Loaded load_world(const Context& ctx) {
  Loaded w;
  w.clf = load_classifier(ctx.store, names::classifier, &w.clf_manifest);
  return w;
}

}  // namespace

Context::Context(RunConfig c, bool force, std::ostream* log_stream)
    : config(std::move(c)), store(config.out_dir, force), log(log_stream) {}

void Context::note(const std::string& line) const {
  if (log) *log << line << std::endl;
}

std::string relearn_label(const std::string& model, int concept_id) {
  return fmt::format("{}_c{}", model, concept_id);
}

BaseSummary cmd_train_base(Context& ctx) {
  const RunConfig& c = ctx.config;
  const nlohmann::json snapshot = to_json(c);
  const NoiseSchedule sched = c.make_schedule();
  BaseSummary out;

  const ConceptDataset data =
      generate_dataset(c.world.n_concepts, c.world.n_per_class, c.world.image_size, c.stage_seed(kSeedDataset));
  const Manifest dm = save_dataset(ctx.store, names::dataset, data, {}, snapshot);
  ctx.note(fmt::format("dataset: {} images, {} concepts", data.size(), data.n_concepts));

  const ConceptClassifier clf = train_classifier(data, c.classifier_config());
  out.heldout_accuracy = clf.heldout_accuracy();
  const Manifest cm = save_classifier(ctx.store, names::classifier, clf, {parent_of(dm)}, snapshot);
  ctx.note(fmt::format("classifier: held-out accuracy {:.4f}", out.heldout_accuracy));

  DenoiserSpec spec = c.denoiser;
  spec.n_concepts = c.world.n_concepts;
  spec.latent = LatentShape{1, c.world.image_size, c.world.image_size};
  std::vector<double> losses;
  const auto t0 = Clock::now();
  const Denoiser base = train_denoiser(data, sched, spec, c.base_train_config(), &losses);
  out.train_seconds = seconds_since(t0);
  out.initial_loss = losses.empty() ? 0.0 : losses.front();
  out.final_loss = losses.empty() ? 0.0 : losses.back();
  save_denoiser(ctx.store, names::base, base, {parent_of(dm)}, snapshot,
                {{"stage", "train_base"}, {"initial_loss", out.initial_loss}, {"final_loss", out.final_loss}});
  ctx.note(fmt::format("base: {} steps in {:.1f} s, loss {:.3f} -> {:.3f}", c.base_train.steps, out.train_seconds,
                       out.initial_loss, out.final_loss));

  const Generator gen = plain_generator(base, sched, c.sampler());
  Table t({"metric", "value"});
  t.add({"heldout_accuracy", num(out.heldout_accuracy)});
  for (int k = 0; k < c.world.n_concepts; ++k) {
    out.asr.push_back(asr(gen, k, clf, c.eval.base_gate_prompts, c.stage_seed(kSeedEval), base.latent_dim()));
    t.add({fmt::format("asr_c{}", k), num(out.asr.back())});
    ctx.note(fmt::format("base ASR concept {}: {:.3f}", k, out.asr.back()));
  }
  t.add({"initial_loss", num(out.initial_loss)});
  t.add({"final_loss", num(out.final_loss)});
  ctx.store.put_text("tables/base.csv", t.csv());
  write_timing(ctx, "train_base", out.train_seconds);
  (void)cm;
  return out;
}

UnlearnSummary cmd_unlearn(Context& ctx, UnlearnMethod method, int concept_id, const std::string& source,
                           const std::string& label) {
  const RunConfig& c = ctx.config;
  const nlohmann::json snapshot = to_json(c);
  const NoiseSchedule sched = c.make_schedule();
  const Loaded w = load_world(ctx);
  Manifest base_m, source_m;
  const Denoiser base = load_denoiser(ctx.store, names::base, &base_m);
  const Denoiser from = load_denoiser(ctx.store, names::model(source), &source_m);

  EvalOptions probe_eval = c.eval_options();
  probe_eval.attack.reset();
  const UnlearnProbe probe{w.clf, sched, probe_eval};
  std::vector<ParentRef> parents{parent_of(source_m)};

  const auto t0 = Clock::now();
  UnlearnResult r = [&] {
    if (method == UnlearnMethod::negative_guidance)
      return unlearn_negative_guidance(from, from.condition(concept_id), c.negative_guidance_config(), probe);
    Manifest dm;
    const ConceptDataset data = load_dataset(ctx.store, names::dataset, &dm);
    parents.push_back(parent_of(dm));
    return unlearn_retrain_excluding(from, data, concept_id, sched, c.retrain_config(), probe);
  }();
  const double secs = seconds_since(t0);
  // The FID delta is always taken against the trained model, also when
  // erasing on top of an already unlearned one.
  if (source != "base") measure_unlearning(r, base, probe);

  UnlearnSummary out;
  out.label = label;
  out.method = method;
  out.concept_id = concept_id;
  out.source = source;
  out.pre_relearn_asr = r.pre_relearn_asr;
  out.retained_fid_delta = r.retained_fid_delta;
  const Generator gen = plain_generator(r.model, sched, c.sampler());
  const int dim = r.model.latent_dim();
  for (int k = 0; k < c.world.n_concepts; ++k)
    out.concept_asr.push_back(asr(gen, k, w.clf, c.eval.n_prompts, c.stage_seed(kSeedEval), dim));
  if (method == UnlearnMethod::retrain_excluding)
    out.anchor_rate = class_rate(gen, concept_id, c.unlearn.retrain.anchor, w.clf, c.eval.n_prompts,
                                 c.stage_seed(kSeedEval), dim);

  save_denoiser(ctx.store, names::model(label), r.model, parents, snapshot,
                {{"stage", "unlearn"},
                 {"method", to_string(method)},
                 {"erased_concept", concept_id},
                 {"source", source},
                 {"pre_relearn_asr", r.pre_relearn_asr},
                 {"retained_fid_delta", r.retained_fid_delta},
                 {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()}});

  std::vector<std::string> header{"label", "method", "concept", "source", "pre_relearn_asr", "retained_fid_delta",
                                  "anchor_rate"};
  std::vector<std::string> row{label,
                               to_string(method),
                               std::to_string(concept_id),
                               source,
                               num(out.pre_relearn_asr),
                               num(out.retained_fid_delta),
                               out.anchor_rate ? num(*out.anchor_rate) : ""};
  for (int k = 0; k < c.world.n_concepts; ++k) {
    header.push_back(fmt::format("asr_c{}", k));
    row.push_back(num(out.concept_asr[k]));
  }
  Table t(header);
  t.add(row);
  ctx.store.put_text("tables/unlearn/" + label + ".csv", t.csv());
  write_timing(ctx, "unlearn_" + label, secs);
  ctx.note(fmt::format("unlearn {} ({} on concept {} from {}): pre-ASR {:.3f}, retained FID {:.4f}{} in {:.1f} s",
                       label, to_string(method), concept_id, source, out.pre_relearn_asr, out.retained_fid_delta,
                       out.anchor_rate ? fmt::format(", anchor rate {:.3f}", *out.anchor_rate) : "", secs));
  return out;
}

RelearnSummary cmd_relearn(Context& ctx, const std::string& model_label, int concept_id, const std::string& label) {
  const RunConfig& c = ctx.config;
  const nlohmann::json snapshot = to_json(c);
  const NoiseSchedule sched = c.make_schedule();
  const Loaded w = load_world(ctx);
  Manifest mm;
  const Denoiser model = load_denoiser(ctx.store, names::model(model_label), &mm);
  std::optional<Denoiser> base;
  if (c.memora.invert_with_base) base = load_denoiser(ctx.store, names::base);
  const Denoiser& inverter = base ? *base : model;
  const std::string dir = names::relearn_dir(label);
  const auto t0 = Clock::now();

  const ConceptDataset refs_all = generate_dataset(c.world.n_concepts, c.world.reference_count, c.world.image_size,
                                                   c.stage_seed(kSeedReferences));
  const Matrix refs = refs_all.images_of(concept_id);
  const Manifest rm = ctx.store.put(dir + "/references", "images", {{"images", refs}}, {}, snapshot,
                                    {{"concept", concept_id}});

  RelearnSummary out;
  out.label = label;
  out.model = model_label;
  out.concept_id = concept_id;
  const int n = c.schedule.n_infer_steps;
  const int depth = n - c.memora.restart_step;
  std::vector<Latent> seeds;
  if (!(refs_all.shape == model.spec().latent))
    throw std::invalid_argument("reference images do not match the model's latent shape");
  for (Eigen::Index i = 0; i < refs.rows(); ++i) {
    const LatentTrajectory traj =
        invert_image(inverter, Latent{model.spec().latent, refs.row(i), std::nullopt},
                     inverter.condition(concept_id), sched, depth, c.memora.s_inv, n, c.memora.inversion_clip);
    out.mean_round_trip += traj.round_trip_error / static_cast<double>(refs.rows());
    seeds.push_back(traj.last().latent);
  }
  const ExpansionSet expansion = expand_latents(seeds, c.memora.expansion);
  const TrainingSet ts = build_training_set(expansion, model, model.condition(concept_id), sched,
                                            c.memora.restart_step, c.memora.s_build, n, c.memora.build_clip);
  {
    long hits = 0;
    for (int p : w.clf.predict(ts.images)) hits += p == concept_id;
    out.built_erased_fraction = static_cast<double>(hits) / static_cast<double>(ts.images.rows());
  }
  const Manifest tm = ctx.store.put(dir + "/training_set", "images", {{"images", ts.images}},
                                    {parent_of(mm), parent_of(rm)}, snapshot,
                                    {{"concept", concept_id}, {"count", ts.images.rows()},
                                     {"mean_round_trip", out.mean_round_trip}});

  const RelearnRun run = relearn(model, ts, sched, c.lora_config());
  for (const auto& [step, adapter] : run.checkpoints)
    save_adapter(ctx.store, dir + "/" + step_name(step), adapter, {parent_of(mm), parent_of(tm)}, snapshot,
                 {{"step", step}});
  save_adapter(ctx.store, dir + "/final", run.final_adapter, {parent_of(mm), parent_of(tm)}, snapshot,
               {{"step", c.memora.lora.steps}});
  Table log({"step", "loss"});
  for (std::size_t i = 0; i < run.train_log.size(); ++i) log.add({std::to_string(i), num(run.train_log[i])});
  ctx.store.put_text(dir + "/train_log.csv", log.csv());

  out.curve = recovery_curve(model, run, concept_id, w.clf, c.eval.n_prompts, c.stage_seed(kSeedEval), sched,
                             c.sampler(), label);
  out.verdict = classify_forgetting(out.curve, c.eval.tau, c.eval.horizon);
  std::vector<double> steps(out.curve.steps.begin(), out.curve.steps.end());
  out.spearman = spearman(steps, out.curve.asr_values);
  const double secs = seconds_since(t0);

  Table rec({"label", "model", "concept", "step", "asr"});
  for (std::size_t i = 0; i < out.curve.steps.size(); ++i)
    rec.add({label, model_label, std::to_string(concept_id), std::to_string(out.curve.steps[i]),
             num(out.curve.asr_values[i])});
  ctx.store.put_text("tables/relearn/" + label + "_recovery.csv", rec.csv());
  Table sum({"label", "model", "concept", "built_erased_fraction", "mean_round_trip", "initial_asr", "final_asr",
             "mode", "steps_to_threshold", "tau", "horizon", "spearman"});
  sum.add({label, model_label, std::to_string(concept_id), num(out.built_erased_fraction), num(out.mean_round_trip),
           num(out.curve.asr_values.front()), num(out.curve.asr_values.back()), to_string(out.verdict.mode),
           out.verdict.steps_to_threshold ? std::to_string(*out.verdict.steps_to_threshold) : "",
           num(out.verdict.threshold), std::to_string(out.verdict.horizon), num(out.spearman)});
  ctx.store.put_text("tables/relearn/" + label + "_summary.csv", sum.csv());
  write_timing(ctx, "relearn_" + label, secs);

  std::string curve_text;
  for (double v : out.curve.asr_values) curve_text += fmt::format(" {:.2f}", v);
  ctx.note(fmt::format("relearn {}: built {:.0f}% concept, curve{} -> {} ({:.1f} s)", label,
                       100.0 * out.built_erased_fraction, curve_text, to_string(out.verdict.mode), secs));
  return out;
}

AttackSummary cmd_attack(Context& ctx, const std::string& model_label, int concept_id) {
  const RunConfig& c = ctx.config;
  const NoiseSchedule sched = c.make_schedule();
  const Loaded w = load_world(ctx);
  Manifest mm;
  const Denoiser model = load_denoiser(ctx.store, names::model(model_label), &mm);
  const auto t0 = Clock::now();
  const std::uint64_t seed = c.stage_seed(kSeedEval);
  const AsrOutcome o = asr_detail(model, concept_id, w.clf, c.eval.n_prompts, c.attack, seed, sched, c.sampler(),
                                  c.jobs);
  const double secs = seconds_since(t0);

  std::map<std::uint64_t, const AttackResult*> by_seed;
  for (const AttackResult& a : o.attacks) by_seed[a.seed] = &a;
  Table t({"model", "concept", "prompt", "seed", "pre_hit", "post_hit", "attacked", "iterations", "classifier_prob",
           "aborted"});
  nlohmann::json records = nlohmann::json::array();
  for (int i = 0; i < c.eval.n_prompts; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    const auto it = by_seed.find(s);
    const AttackResult* a = it == by_seed.end() ? nullptr : it->second;
    t.add({model_label, std::to_string(concept_id), std::to_string(i), std::to_string(s),
           o.pre_hits[i] ? "1" : "0", o.post_hits[i] ? "1" : "0", a ? "1" : "0",
           a ? std::to_string(a->iterations_used) : "0", a ? num(a->classifier_prob) : "",
           a && a->aborted ? "1" : "0"});
    nlohmann::json r{{"prompt", i}, {"seed", s}, {"pre_hit", o.pre_hits[i]}, {"post_hit", o.post_hits[i]}};
    if (a) {
      r["iterations"] = a->iterations_used;
      r["success"] = a->success;
      r["classifier_prob"] = a->classifier_prob;
      r["perturbation_norm"] = (a->adversarial_condition.embedding - model.condition(concept_id).embedding).norm();
      if (a->aborted) r["diagnostic"] = a->diagnostic;
    }
    records.push_back(std::move(r));
  }
  const std::string stem = fmt::format("{}_c{}", model_label, concept_id);
  ctx.store.put_text("tables/attack/" + stem + ".csv", t.csv());
  Table s({"model", "concept", "n_prompts", "pre_asr", "post_asr"});
  s.add({model_label, std::to_string(concept_id), std::to_string(c.eval.n_prompts), num(o.pre_rate),
         num(o.post_rate)});
  ctx.store.put_text("tables/attack/" + stem + "_summary.csv", s.csv());
  nlohmann::json manifest{{"model", parent_of(mm).name},
                          {"model_checksum", mm.checksum},
                          {"concept", concept_id},
                          {"budget",
                           {{"max_iters", c.attack.max_iters},
                            {"step_size", c.attack.step_size},
                            {"norm_bound", c.attack.norm_bound},
                            {"chain_steps", c.attack.chain_steps}}},
                          {"pre_asr", o.pre_rate},
                          {"post_asr", o.post_rate},
                          {"prompts", records}};
  ctx.store.put_text("attack/" + stem + ".json", manifest.dump(2) + "\n");
  write_timing(ctx, "attack_" + stem, secs);
  ctx.note(fmt::format("attack {} concept {}: pre {:.3f} -> post {:.3f} ({:.1f} s)", model_label, concept_id,
                       o.pre_rate, o.post_rate, secs));
  return {model_label, concept_id, o.pre_rate, o.post_rate};
}

std::vector<EvalReport> cmd_eval(Context& ctx, const EvalRequest& req) {
  const RunConfig& c = ctx.config;
  const NoiseSchedule sched = c.make_schedule();
  const Loaded w = load_world(ctx);
  const Denoiser base = load_denoiser(ctx.store, names::base);
  const Denoiser model = load_denoiser(ctx.store, names::model(req.model));
  if (req.automemora_w && req.adapters.empty())
    throw std::invalid_argument("--automemora needs an adapter to guide towards");

  std::vector<LoraAdapter> adapters;
  for (const auto& a : req.adapters) {
    LoraAdapter ad = load_adapter_for(ctx.store, names::relearn_dir(a) + "/final", model);
    if (req.beta) ad = with_beta(std::move(ad), *req.beta);
    adapters.push_back(std::move(ad));
  }
  Denoiser adapted = model;
  if (adapters.size() == 1) {
    adapted = apply_adapter(model, adapters.front());
  } else if (adapters.size() == 2 && req.merge_weights.empty()) {
    adapted = apply_delta(model, merge_adapters(adapters[0], adapters[1], c.eval.merge_a));
  } else if (adapters.size() >= 2) {
    std::vector<double> weights = req.merge_weights;
    if (weights.empty()) weights.assign(adapters.size(), 1.0);
    adapted = apply_delta(model, merge_adapters(adapters, weights));
  }

  EvalOptions opts = c.eval_options();
  if (!req.attack) opts.attack.reset();
  const SamplerSettings sampler = c.sampler();
  const Generator reference = plain_generator(base, sched, sampler);
  const int dim = model.latent_dim();
  const auto t0 = Clock::now();

  std::vector<EvalReport> reports;
  reports.push_back(evaluate(plain_generator(adapted, sched, sampler), reference, req.concept_id, w.clf, opts, dim,
                             sched, req.attack ? &adapted : nullptr));
  reports.back().label = req.label;
  if (req.automemora_w) {
    opts.attack.reset();
    reports.push_back(evaluate(automemora_generator(model, adapted, sched, sampler, *req.automemora_w), reference,
                               req.concept_id, w.clf, opts, dim, sched));
    reports.back().label = req.label + "+automemora";
  }
  const double secs = seconds_since(t0);

  std::string joined;
  for (std::size_t i = 0; i < req.adapters.size(); ++i) joined += (i ? "+" : "") + req.adapters[i];
  Table t({"label", "model", "adapters", "mode", "w", "beta", "concept", "pre_asr", "post_asr", "fid_retained",
           "fid_all", "cosine_mean", "condition_fidelity", "n_prompts"});
  nlohmann::json js = nlohmann::json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    const bool guided = i == 1;
    const bool attacked = req.attack && !guided;
    t.add({r.label, req.model, joined, guided ? "automemora" : "plain", guided ? num(*req.automemora_w) : "",
           req.beta ? num(*req.beta) : "", std::to_string(r.concept_id), num(r.pre_asr),
           attacked ? num(r.post_asr) : "", num(r.fid_retained), num(r.fid_all), num(r.cosine_mean),
           num(r.condition_fidelity), std::to_string(r.n_prompts)});
    js.push_back({{"label", r.label},
                  {"mode", guided ? "automemora" : "plain"},
                  {"concept", r.concept_id},
                  {"pre_asr", r.pre_asr},
                  {"post_asr", attacked ? nlohmann::json(r.post_asr) : nlohmann::json()},
                  {"fid_retained", r.fid_retained},
                  {"fid_all", r.fid_all},
                  {"cosine_mean", r.cosine_mean},
                  {"cosine_histogram", r.cosine_histogram},
                  {"condition_fidelity", r.condition_fidelity},
                  {"seeds", r.seeds}});
    ctx.note(fmt::format("eval {}: ASR {:.3f}{}, FID retained {:.4f}, all {:.4f}, cosine {:.3f}", r.label, r.pre_asr,
                         attacked ? fmt::format(" (attacked {:.3f})", r.post_asr) : "", r.fid_retained, r.fid_all,
                         r.cosine_mean));
  }
  ctx.store.put_text("tables/eval/" + req.label + ".csv", t.csv());
  ctx.store.put_text("eval/" + req.label + ".json",
                     nlohmann::json{{"model", req.model}, {"adapters", req.adapters}, {"reports", js}}.dump(2) + "\n");
  write_timing(ctx, "eval_" + req.label, secs);
  return reports;
}

PipelineSummary run_pipeline(Context& ctx) {
  const RunConfig& c = ctx.config;
  const int c1 = c.unlearn.concept_id, c2 = c.unlearn.second_concept;
  const std::string ng = to_string(UnlearnMethod::negative_guidance);
  const std::string rt = to_string(UnlearnMethod::retrain_excluding);
  const std::string dbl = "double";
  PipelineSummary out;

  out.base = cmd_train_base(ctx);
  out.unlearned.push_back(cmd_unlearn(ctx, UnlearnMethod::negative_guidance, c1, "base", ng));
  out.unlearned.push_back(cmd_unlearn(ctx, UnlearnMethod::retrain_excluding, c1, "base", rt));
  out.unlearned.push_back(cmd_unlearn(ctx, UnlearnMethod::negative_guidance, c2, ng, dbl));

  out.relearned.push_back(cmd_relearn(ctx, ng, c1, relearn_label(ng, c1)));
  out.relearned.push_back(cmd_relearn(ctx, rt, c1, relearn_label(rt, c1)));
  out.relearned.push_back(cmd_relearn(ctx, dbl, c1, relearn_label(dbl, c1)));
  out.relearned.push_back(cmd_relearn(ctx, dbl, c2, relearn_label(dbl, c2)));

  for (const std::string& m : {std::string("base"), ng, rt}) out.attacks.push_back(cmd_attack(ctx, m, c1));
  out.attacks.push_back(cmd_attack(ctx, dbl, c1));
  out.attacks.push_back(cmd_attack(ctx, dbl, c2));

  auto eval = [&](EvalRequest r) {
    for (auto& rep : cmd_eval(ctx, r)) out.evals.push_back(std::move(rep));
  };
  eval({"base", "base", c1, {}, {}, {}, {}, false});
  eval({ng, ng, c1, {}, {}, {}, {}, false});
  eval({rt, rt, c1, {}, {}, {}, {}, false});
  eval({ng + "+memora", ng, c1, {relearn_label(ng, c1)}, {}, {}, c.eval.automemora_w, false});
  eval({rt + "+memora", rt, c1, {relearn_label(rt, c1)}, {}, {}, {}, false});
  for (int k : {c1, c2}) {
    eval({fmt::format("{}_c{}", dbl, k), dbl, k, {}, {}, {}, {}, false});
    eval({fmt::format("{}+memora_c{}", dbl, k), dbl, k, {relearn_label(dbl, k)}, {}, {}, {}, false});
    eval({fmt::format("{}+merged_c{}", dbl, k), dbl, k, {relearn_label(dbl, c1), relearn_label(dbl, c2)}, {}, {}, {},
          false});
  }

  cmd_report(ctx);
  return out;
}

}  // namespace memora::harness
