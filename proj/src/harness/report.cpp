#include <algorithm>
#include <filesystem>
#include <map>

#include <fmt/format.h>

#include "memora/harness/commands.hpp"
#include "memora/harness/plots.hpp"
#include "memora/harness/table.hpp"

namespace memora::harness {

namespace {

namespace fs = std::filesystem;

constexpr int kGridColumns = 8;
constexpr int kGridPerConcept = 8;
constexpr int kTrainingSetShown = 32;

// Sorted so reports do not depend on directory iteration order.
std::vector<fs::path> files_in(const fs::path& dir, const std::string& suffix) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Concatenates every CSV in `dir` whose name passes `keep`; returns false when
// there was nothing to aggregate.
template <class Keep>
bool aggregate(Context& ctx, const std::string& dir, Keep keep, const std::string& out) {
  Table all;
  bool any = false;
  for (const auto& p : files_in(ctx.store.root() / dir, ".csv")) {
    if (!keep(p.filename().string())) continue;
    all.append(Table::parse(read_file(p)));
    any = true;
  }
  if (any) ctx.store.put_text(out, all.csv());
  return any;
}

void recovery_plot(Context& ctx) {
  const auto paths = files_in(ctx.store.root() / "tables/relearn", "_recovery.csv");
  if (paths.empty()) return;
  std::vector<Series> series;
  for (const auto& p : paths) {
    const Table t = Table::parse(read_file(p));
    const int label = t.column("label"), step = t.column("step"), asr = t.column("asr");
    Series s;
    for (const auto& row : t.rows()) {
      s.label = row[label];
      s.x.push_back(std::stod(row[step]));
      s.y.push_back(std::stod(row[asr]));
    }
    series.push_back(std::move(s));
  }
  ctx.store.put_text("report/recovery.svg", line_chart_svg("Erased-concept ASR during relearning", "adapter step",
                                                           "ASR", series, 0.0, 1.0, ctx.config.eval.tau));
}

void cosine_plots(Context& ctx) {
  for (const auto& p : files_in(ctx.store.root() / "eval", ".json")) {
    const nlohmann::json doc = nlohmann::json::parse(read_file(p));
    for (const auto& r : doc.at("reports")) {
      const std::string label = r.at("label").get<std::string>();
      const std::vector<int> counts = r.at("cosine_histogram").get<std::vector<int>>();
      ctx.store.put_text("report/cosine/" + label + ".svg",
                         histogram_svg(fmt::format("Feature cosine vs. trained model: {}", label), counts, -1.0, 1.0));
    }
  }
}

// One row of samples per concept for every stored model, all from the same
// prompts so the grids line up.
void sample_grids(Context& ctx) {
  const RunConfig& c = ctx.config;
  const fs::path models = ctx.store.root() / "models";
  const auto manifests = files_in(models, ".json");
  if (manifests.empty()) return;
  const NoiseSchedule sched = c.make_schedule();
  for (const auto& p : manifests) {
    const std::string label = p.stem().string();
    const Denoiser model = load_denoiser(ctx.store, names::model(label));
    const Generator gen = plain_generator(model, sched, c.sampler());
    const Matrix prompts = prompt_batch(c.stage_seed(kSeedEval), kGridPerConcept, model.latent_dim());
    Matrix grid(static_cast<Eigen::Index>(kGridPerConcept) * c.world.n_concepts, model.latent_dim());
    for (int k = 0; k < c.world.n_concepts; ++k) grid.middleRows(k * kGridPerConcept, kGridPerConcept) = gen(prompts, k);
    ctx.store.put_text("report/samples/" + label + ".pgm", pgm_grid(grid, c.world.image_size, kGridColumns));
  }
  const fs::path relearn = ctx.store.root() / "relearn";
  if (!fs::is_directory(relearn)) return;
  std::vector<std::string> runs;
  for (const auto& e : fs::directory_iterator(relearn))
    if (e.is_directory()) runs.push_back(e.path().filename().string());
  std::sort(runs.begin(), runs.end());
  for (const auto& run : runs) {
    for (const std::string part : {"references", "training_set"}) {
      const std::string name = names::relearn_dir(run) + "/" + part;
      if (!ctx.store.exists(name)) continue;
      const Matrix images = ctx.store.get(name, "images").at("images");
      const Eigen::Index shown = std::min<Eigen::Index>(images.rows(), kTrainingSetShown);
      ctx.store.put_text("report/samples/" + run + "_" + part + ".pgm",
                         pgm_grid(images.topRows(shown), c.world.image_size, kGridColumns));
    }
  }
}

}  // namespace

void cmd_report(Context& ctx) {
  std::vector<std::string> written;
  auto all = [](const std::string&) { return true; };
  if (aggregate(ctx, "tables/unlearn", all, "report/unlearn.csv")) written.push_back("unlearn.csv");
  if (aggregate(ctx, "tables/relearn", [](const std::string& n) { return ends_with(n, "_summary.csv"); },
                "report/relearn.csv"))
    written.push_back("relearn.csv");
  if (aggregate(ctx, "tables/relearn", [](const std::string& n) { return ends_with(n, "_recovery.csv"); },
                "report/recovery.csv"))
    written.push_back("recovery.csv");
  if (aggregate(ctx, "tables/attack", [](const std::string& n) { return ends_with(n, "_summary.csv"); },
                "report/attack.csv"))
    written.push_back("attack.csv");
  if (aggregate(ctx, "tables/eval", all, "report/eval.csv")) written.push_back("eval.csv");
  recovery_plot(ctx);
  cosine_plots(ctx);
  sample_grids(ctx);
  ctx.note(fmt::format("report: {} tables under {}", written.size(), (ctx.store.root() / "report").string()));
}

}  // namespace memora::harness
