#include "memora/harness/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace memora::harness {

namespace {

// One entry per configurable field. `get` renders the current value, `set`
// parses text into it.
struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
  std::function<nlohmann::json()> json;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& text) {
  throw std::invalid_argument(fmt::format("config: cannot parse '{}' for '{}'", text, key));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) bad_value(key, text);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  bad_value(key, text);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) bad_value(key, text);
    item = item.substr(b, e - b + 1);
    if constexpr (std::is_same_v<T, std::string>)
      out.push_back(item);
    else
      out.push_back(parse_number<T>(key, item));
  }
  if (out.empty()) bad_value(key, text);
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt::format("{}", v[i]);
  return s;
}

class Binder {
 public:
  std::vector<Field> fields;

  template <class T>
  void num(const std::string& section, const std::string& key, T& ref) {
    fields.push_back({section, key, [&ref] { return fmt::format("{}", ref); },
                      [&ref, key](const std::string& t) { ref = parse_number<T>(key, t); },
                      [&ref] { return nlohmann::json(ref); }});
  }
  void flag(const std::string& section, const std::string& key, bool& ref) {
    fields.push_back({section, key, [&ref] { return std::string(ref ? "true" : "false"); },
                      [&ref, key](const std::string& t) { ref = parse_bool(key, t); },
                      [&ref] { return nlohmann::json(ref); }});
  }
  template <class T>
  void list(const std::string& section, const std::string& key, std::vector<T>& ref) {
    fields.push_back({section, key, [&ref] { return join(ref); },
                      [&ref, key](const std::string& t) { ref = parse_list<T>(key, t); },
                      [&ref] { return nlohmann::json(ref); }});
  }
  template <class E>
  void choice(const std::string& section, const std::string& key, E& ref, E (*parse)(const std::string&)) {
    fields.push_back({section, key, [&ref] { return to_string(ref); },
                      [&ref, parse](const std::string& t) { ref = parse(t); },
                      [&ref] { return nlohmann::json(to_string(ref)); }});
  }
};

template <class Config>
std::vector<Field> bind(Config& c) {
  Binder b;
  b.num("run", "seed", c.seed);
  b.num("run", "jobs", c.jobs);

  b.num("world", "n_concepts", c.world.n_concepts);
  b.num("world", "n_per_class", c.world.n_per_class);
  b.num("world", "image_size", c.world.image_size);
  b.num("world", "reference_count", c.world.reference_count);

  b.num("schedule", "n_train_steps", c.schedule.n_train_steps);
  b.num("schedule", "beta_start", c.schedule.beta_start);
  b.num("schedule", "beta_end", c.schedule.beta_end);
  b.choice("schedule", "kind", c.schedule.kind, &parse_schedule_kind);
  b.num("schedule", "n_infer_steps", c.schedule.n_infer_steps);

  b.num("denoiser", "cond_dim", c.denoiser.cond_dim);
  b.num("denoiser", "hidden", c.denoiser.hidden);
  b.num("denoiser", "bottleneck", c.denoiser.bottleneck);
  b.num("denoiser", "time_features", c.denoiser.time_features);
  b.num("denoiser", "time_dim", c.denoiser.time_dim);

  b.num("base_train", "steps", c.base_train.steps);
  b.num("base_train", "batch", c.base_train.batch);
  b.num("base_train", "lr", c.base_train.lr);
  b.num("base_train", "p_uncond", c.base_train.p_uncond);
  b.flag("base_train", "cosine_decay", c.base_train.cosine_decay);

  b.num("classifier", "steps", c.classifier.steps);
  b.num("classifier", "batch", c.classifier.batch);
  b.num("classifier", "lr", c.classifier.lr);
  b.num("classifier", "noise_std", c.classifier.noise_std);
  b.num("classifier", "holdout_fraction", c.classifier.holdout_fraction);
  b.num("classifier", "max_imbalance", c.classifier.max_imbalance);
  b.num("classifier", "hidden", c.classifier.hidden);
  b.num("classifier", "feature_dim", c.classifier.feature_dim);

  b.choice("unlearn", "method", c.unlearn.method, &parse_unlearn_method);
  b.num("unlearn", "concept", c.unlearn.concept_id);
  b.num("unlearn", "second_concept", c.unlearn.second_concept);

  auto& ng = c.unlearn.negative_guidance;
  b.num("negative_guidance", "eta", ng.eta);
  b.num("negative_guidance", "steps", ng.steps);
  b.num("negative_guidance", "lr", ng.lr);
  b.num("negative_guidance", "batch", ng.batch);
  b.num("negative_guidance", "preserve_weight", ng.preserve_weight);
  b.num("negative_guidance", "null_fraction", ng.null_fraction);
  b.num("negative_guidance", "teacher_per_concept", ng.teacher_per_concept);

  auto& rt = c.unlearn.retrain;
  b.num("retrain", "anchor", rt.anchor);
  b.flag("retrain", "reinitialize", rt.reinitialize);
  b.flag("retrain", "steer", rt.steer);
  b.num("retrain", "steer_min_t", rt.steer_min_t);
  b.flag("retrain", "steer_every_condition", rt.steer_every_condition);
  b.num("retrain", "steer_fraction", rt.steer_fraction);
  b.num("retrain", "steps", rt.train.steps);
  b.num("retrain", "batch", rt.train.batch);
  b.num("retrain", "lr", rt.train.lr);
  b.num("retrain", "p_uncond", rt.train.p_uncond);
  b.flag("retrain", "cosine_decay", rt.train.cosine_decay);

  auto& m = c.memora;
  b.num("memora", "restart_step", m.restart_step);
  b.num("memora", "s_inv", m.s_inv);
  b.num("memora", "s_build", m.s_build);
  b.flag("memora", "build_clip", m.build_clip);
  b.flag("memora", "inversion_clip", m.inversion_clip);
  b.flag("memora", "invert_with_base", m.invert_with_base);
  b.list("memora", "p_values", m.expansion.p_values);
  b.num("memora", "total_count", m.expansion.total_count);

  b.num("lora", "rank", m.lora.rank);
  b.num("lora", "beta", m.lora.beta);
  b.num("lora", "steps", m.lora.steps);
  b.num("lora", "batch", m.lora.batch);
  b.num("lora", "lr", m.lora.lr);
  b.num("lora", "max_grad_norm", m.lora.max_grad_norm);
  b.num("lora", "checkpoint_every", m.lora.checkpoint_every);
  b.list("lora", "targets", m.lora.targets);

  b.num("attack", "max_iters", c.attack.max_iters);
  b.num("attack", "step_size", c.attack.step_size);
  b.num("attack", "norm_bound", c.attack.norm_bound);
  b.num("attack", "chain_steps", c.attack.chain_steps);

  b.num("eval", "n_prompts", c.eval.n_prompts);
  b.num("eval", "base_gate_prompts", c.eval.base_gate_prompts);
  b.num("eval", "fid_per_concept", c.eval.fid_per_concept);
  b.num("eval", "fid_ridge", c.eval.fid_ridge);
  b.num("eval", "guidance", c.eval.guidance);
  b.flag("eval", "clip_sample", c.eval.clip_sample);
  b.num("eval", "automemora_w", c.eval.automemora_w);
  b.num("eval", "merge_a", c.eval.merge_a);
  b.num("eval", "tau", c.eval.tau);
  b.num("eval", "horizon", c.eval.horizon);
  return b.fields;
}

void validate(const RunConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(fmt::format("config: {}", what));
  };
  need(c.world.n_concepts >= 3, "world.n_concepts must be at least 3");
  need(c.world.image_size >= 8, "world.image_size must be at least 8");
  need(c.world.reference_count >= 2, "world.reference_count must be at least 2");
  need(c.unlearn.concept_id >= 0 && c.unlearn.concept_id < c.world.n_concepts, "unlearn.concept out of range");
  need(c.unlearn.second_concept >= 0 && c.unlearn.second_concept < c.world.n_concepts &&
           c.unlearn.second_concept != c.unlearn.concept_id,
       "unlearn.second_concept must be another valid concept");
  need(c.unlearn.retrain.anchor != c.unlearn.concept_id, "retrain.anchor equals the erased concept");
  need(c.memora.restart_step >= 0 && c.memora.restart_step < c.schedule.n_infer_steps,
       "memora.restart_step outside the inference schedule");
  need(c.jobs >= 1, "run.jobs must be positive");
  need(c.eval.tau > 0.0 && c.eval.tau < 1.0, "eval.tau must lie in (0, 1)");
}

}  // namespace

std::uint64_t RunConfig::stage_seed(SeedStream stream) const { return derive_seed(seed, stream); }

NoiseSchedule RunConfig::make_schedule() const {
  return memora::make_schedule(schedule.n_train_steps, schedule.beta_start, schedule.beta_end, schedule.kind);
}

SamplerSettings RunConfig::sampler() const {
  return SamplerSettings{eval.guidance, schedule.n_infer_steps, eval.clip_sample};
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.n_prompts = eval.n_prompts;
  o.fid_per_concept = eval.fid_per_concept;
  o.fid_ridge = eval.fid_ridge;
  o.seed = stage_seed(kSeedEval);
  o.sampler = sampler();
  o.attack = attack;
  o.jobs = jobs;
  return o;
}

DenoiserTrainConfig RunConfig::base_train_config() const {
  DenoiserTrainConfig t = base_train;
  t.seed = stage_seed(kSeedBase);
  return t;
}

ClassifierTrainConfig RunConfig::classifier_config() const {
  ClassifierTrainConfig t = classifier;
  t.seed = stage_seed(kSeedClassifier);
  return t;
}

NegativeGuidanceConfig RunConfig::negative_guidance_config() const {
  NegativeGuidanceConfig t = unlearn.negative_guidance;
  t.teacher_sampler = sampler();
  t.seed = stage_seed(kSeedUnlearn);
  return t;
}

RetrainConfig RunConfig::retrain_config() const {
  RetrainConfig t = unlearn.retrain;
  t.train.seed = derive_seed(stage_seed(kSeedUnlearn), 1);
  return t;
}

LoraConfig RunConfig::lora_config() const {
  LoraConfig t = memora.lora;
  t.seed = stage_seed(kSeedRelearn);
  return t;
}

RunConfig parse_config(const std::string& ini_text) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(fmt::format("config: {}", e.message()));
  }
  RunConfig config;
  std::map<std::string, Field*> by_name;
  auto fields = bind(config);
  std::set<std::string> sections;
  for (auto& f : fields) {
    by_name[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }
  for (const auto& [section, body] : tree) {
    if (!sections.count(section)) {
      if (body.empty()) throw std::invalid_argument(fmt::format("config: key '{}' outside any section", section));
      throw std::invalid_argument(fmt::format("config: unknown section [{}]", section));
    }
    for (const auto& [key, value] : body) {
      const auto it = by_name.find(section + "." + key);
      if (it == by_name.end()) throw std::invalid_argument(fmt::format("config: unknown key {}.{}", section, key));
      it->second->set(value.get_value<std::string>());
    }
  }
  config.denoiser.n_concepts = config.world.n_concepts;
  config.denoiser.latent = LatentShape{1, config.world.image_size, config.world.image_size};
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("config: cannot open {}", path.string()));
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_ini(const RunConfig& config) {
  RunConfig copy = config;
  std::string out, section;
  for (const auto& f : bind(copy)) {
    if (f.section != section) {
      out += fmt::format("{}[{}]\n", section.empty() ? "" : "\n", f.section);
      section = f.section;
    }
    out += fmt::format("{} = {}\n", f.key, f.get());
  }
  return out;
}

nlohmann::json to_json(const RunConfig& config) {
  RunConfig copy = config;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : bind(copy)) j[f.section][f.key] = f.json();
  return j;
}

std::filesystem::path default_home() {
  if (const char* env = std::getenv("MEMORA_LAB_HOME"); env && *env) return env;
  return "memora_runs";
}

}  // namespace memora::harness
