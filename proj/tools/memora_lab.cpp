// Command-line front end for the unlearn/relearn lab.
#include <cstdlib>
#include <iostream>
#include <optional>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "memora/harness/commands.hpp"

using namespace memora;
using namespace memora::harness;

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale concept unlearning and relearning lab"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool force = false;
  std::optional<int> jobs;
  bool quiet = false;
  app.add_option("--config", config_path, "INI config file (defaults apply to missing keys)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed, overrides [run] seed");
  app.add_option("--out", out_dir, "run directory (default: $MEMORA_LAB_HOME/seed-<seed>)");
  app.add_flag("--force", force, "overwrite existing artifacts");
  app.add_option("--jobs", jobs, "threads for per-seed evaluation work")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "no progress lines");

  auto* train = app.add_subcommand("train-base", "dataset, classifier and trained model");

  auto* unlearn = app.add_subcommand("unlearn", "erase a concept from a stored model");
  std::string method = "negative_guidance", source = "base", unlearn_label;
  std::optional<int> unlearn_concept;
  unlearn->add_option("--method", method, "negative_guidance or retrain_excluding");
  unlearn->add_option("--concept", unlearn_concept, "concept to erase (default: [unlearn] concept)");
  unlearn->add_option("--source", source, "label of the model to start from");
  unlearn->add_option("--label", unlearn_label, "label of the result (default: the method name)");

  auto* relearn = app.add_subcommand("relearn", "invert references, build the training set, train the adapter");
  std::string relearn_model, relearn_name;
  std::optional<int> relearn_concept;
  relearn->add_option("--model", relearn_model, "label of the unlearned model")->required();
  relearn->add_option("--concept", relearn_concept, "concept to relearn (default: [unlearn] concept)");
  relearn->add_option("--label", relearn_name, "run label (default: <model>_c<concept>)");

  auto* attack = app.add_subcommand("attack", "embedding attack on every eval prompt");
  std::string attack_model;
  std::optional<int> attack_concept;
  attack->add_option("--model", attack_model, "model label")->required();
  attack->add_option("--concept", attack_concept, "target concept (default: [unlearn] concept)");

  auto* eval = app.add_subcommand("eval", "ASR, Frechet distances and cosine report");
  EvalRequest req;
  std::optional<int> eval_concept;
  std::optional<double> automemora, beta;
  eval->add_option("--model", req.model, "model label")->required();
  eval->add_option("--concept", eval_concept, "concept (default: [unlearn] concept)");
  eval->add_option("--adapter", req.adapters, "relearn label; repeat to merge");
  eval->add_option("--weights", req.merge_weights, "merge weights, one per adapter");
  eval->add_option("--automemora", automemora, "also sample with the guided mix at this weight");
  eval->add_option("--beta", beta, "override the adapter scale");
  eval->add_flag("--attack", req.attack, "also run the attack on the plain sampler");
  eval->add_option("--label", req.label, "report label (default: the model label)");

  auto* report = app.add_subcommand("report", "aggregate tables and draw plots");
  auto* pipeline = app.add_subcommand("pipeline", "every stage from world creation to the report");
  auto* show = app.add_subcommand("config", "print the effective config as INI");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = config_path.empty() ? parse_config("") : load_config(config_path);
    if (seed) config.seed = *seed;
    if (jobs) config.jobs = *jobs;
    config.out_dir =
        out_dir.empty() ? default_home() / fmt::format("seed-{}", config.seed) : std::filesystem::path(out_dir);
    if (show->parsed()) {
      std::cout << to_ini(config);
      return 0;
    }
    Context ctx(config, force, quiet ? nullptr : &std::cerr);
    const int concept_default = ctx.config.unlearn.concept_id;

    if (train->parsed()) {
      cmd_train_base(ctx);
    } else if (unlearn->parsed()) {
      const UnlearnMethod m = parse_unlearn_method(method);
      cmd_unlearn(ctx, m, unlearn_concept.value_or(concept_default), source,
                  unlearn_label.empty() ? to_string(m) : unlearn_label);
    } else if (relearn->parsed()) {
      const int k = relearn_concept.value_or(concept_default);
      cmd_relearn(ctx, relearn_model, k, relearn_name.empty() ? relearn_label(relearn_model, k) : relearn_name);
    } else if (attack->parsed()) {
      cmd_attack(ctx, attack_model, attack_concept.value_or(concept_default));
    } else if (eval->parsed()) {
      req.concept_id = eval_concept.value_or(concept_default);
      req.automemora_w = automemora;
      req.beta = beta;
      if (req.label.empty()) req.label = req.model;
      cmd_eval(ctx, req);
    } else if (report->parsed()) {
      cmd_report(ctx);
    } else if (pipeline->parsed()) {
      run_pipeline(ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
