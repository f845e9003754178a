#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "memora/harness/config.hpp"
#include "memora/harness/store.hpp"

namespace memora::harness {

// Artifact names inside a run directory.
namespace names {
inline const std::string dataset = "world/dataset";
inline const std::string classifier = "world/classifier";
inline const std::string base = "models/base";
inline std::string model(const std::string& label) { return "models/" + label; }
inline std::string relearn_dir(const std::string& label) { return "relearn/" + label; }
}  // namespace names

struct Context {
  RunConfig config;
  Store store;
  std::ostream* log = nullptr;  // progress lines; null for silence

  Context(RunConfig c, bool force, std::ostream* log_stream = nullptr);
  void note(const std::string& line) const;
};

struct BaseSummary {
  double heldout_accuracy = 0.0;
  std::vector<double> asr;  // per concept, eval.base_gate_prompts samples each
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double train_seconds = 0.0;
};
BaseSummary cmd_train_base(Context& ctx);

struct UnlearnSummary {
  std::string label;
  UnlearnMethod method{};
  int concept_id = 0;
  std::string source;
  double pre_relearn_asr = 0.0;
  std::vector<double> concept_asr;  // every concept, eval.n_prompts each
  double retained_fid_delta = 0.0;
  std::optional<double> anchor_rate;  // retrain_excluding only
};
// Erases `concept_id` from the model stored under `source` (a label, "base"
// for the trained model) and stores the result as models/<label>.
UnlearnSummary cmd_unlearn(Context& ctx, UnlearnMethod method, int concept_id, const std::string& source,
                           const std::string& label);

struct RelearnSummary {
  std::string label;
  std::string model;
  int concept_id = 0;
  double built_erased_fraction = 0.0;  // built images the classifier assigns to the concept
  double mean_round_trip = 0.0;
  RecoveryCurve curve;
  ForgettingVerdict verdict;
  double spearman = 0.0;
};
// Inverts the reference images under models/<model>, expands and rebuilds
// them, trains the adapter and scores every checkpoint.
RelearnSummary cmd_relearn(Context& ctx, const std::string& model, int concept_id, const std::string& label);

struct AttackSummary {
  std::string model;
  int concept_id = 0;
  double pre_asr = 0.0;
  double post_asr = 0.0;
};
AttackSummary cmd_attack(Context& ctx, const std::string& model, int concept_id);

struct EvalRequest {
  std::string label;
  std::string model;
  int concept_id = 0;
  std::vector<std::string> adapters;  // relearn labels; two or more are merged
  std::vector<double> merge_weights;  // empty: eval.merge_a for two, uniform otherwise
  std::optional<double> beta;         // overrides the adapter scale
  std::optional<double> automemora_w;
  bool attack = false;
};
// One row per generator: the plain (possibly adapted) model and, with
// automemora_w, the guided sampler next to it.
std::vector<EvalReport> cmd_eval(Context& ctx, const EvalRequest& request);

// Aggregates the tables of a run directory and draws the plots.
void cmd_report(Context& ctx);

struct PipelineSummary {
  BaseSummary base;
  std::vector<UnlearnSummary> unlearned;
  std::vector<RelearnSummary> relearned;
  std::vector<AttackSummary> attacks;
  std::vector<EvalReport> evals;
};
// Everything from world creation to the report under one master seed.
PipelineSummary run_pipeline(Context& ctx);

// Label of the relearn run for `model` and `concept` as used by the pipeline.
std::string relearn_label(const std::string& model, int concept_id);

}  // namespace memora::harness
