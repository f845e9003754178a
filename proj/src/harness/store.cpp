#include "memora/harness/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include <fmt/format.h>

#include "memora/checksum.hpp"

namespace memora::harness {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "archives are written in host byte order");

namespace {

constexpr char kMagic[8] = {'M', 'L', 'A', 'R', 'C', 'H', '0', '1'};
constexpr std::uint8_t kF64 = 1;

template <class T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}
  template <class T>
  T take() {
    T v;
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string take_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void take_raw(void* dst, std::size_t n) {
    need(n);
    if (n == 0) return;  // dst may be null for an empty array
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("archive truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Matrix row_vector_of(const std::vector<int>& v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

NamedArrays arrays_of(const ParamSet& p) { return NamedArrays(p.entries().begin(), p.entries().end()); }

ParamSet params_of(const NamedArrays& a) {
  ParamSet p;
  for (const auto& [name, m] : a) p.add(name, m);
  return p;
}

nlohmann::json spec_json(const DenoiserSpec& s) {
  return {{"channels", s.latent.channels}, {"height", s.latent.height},     {"width", s.latent.width},
          {"n_concepts", s.n_concepts},    {"cond_dim", s.cond_dim},        {"hidden", s.hidden},
          {"bottleneck", s.bottleneck},    {"time_features", s.time_features}, {"time_dim", s.time_dim}};
}

DenoiserSpec spec_from(const nlohmann::json& j) {
  DenoiserSpec s;
  s.latent = LatentShape{j.at("channels"), j.at("height"), j.at("width")};
  s.n_concepts = j.at("n_concepts");
  s.cond_dim = j.at("cond_dim");
  s.hidden = j.at("hidden");
  s.bottleneck = j.at("bottleneck");
  s.time_features = j.at("time_features");
  s.time_dim = j.at("time_dim");
  return s;
}

}  // namespace

std::string encode_archive(const NamedArrays& arrays) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kF64);
    put<std::uint32_t>(out, 2);
    put<std::int64_t>(out, m.rows());
    put<std::int64_t>(out, m.cols());
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    if (rm.size() > 0)
      out.append(reinterpret_cast<const char*>(rm.data()), sizeof(double) * static_cast<std::size_t>(rm.size()));
  }
  return out;
}

NamedArrays decode_archive(const std::string& bytes) {
  Reader r(bytes);
  if (r.take_string(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw std::runtime_error("not a named-array archive");
  const auto count = r.take<std::uint32_t>();
  NamedArrays out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.take_string(r.take<std::uint32_t>());
    if (r.take<std::uint8_t>() != kF64) throw std::runtime_error("archive entry '" + name + "' is not f64");
    if (r.take<std::uint32_t>() != 2) throw std::runtime_error("archive entry '" + name + "' is not 2-d");
    const auto rows = r.take<std::int64_t>(), cols = r.take<std::int64_t>();
    if (rows < 0 || cols < 0) throw std::runtime_error("archive entry '" + name + "' has a negative shape");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    r.take_raw(rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()));
    out.emplace(name, Matrix(rm));
  }
  if (!r.done()) throw std::runtime_error("archive has trailing bytes");
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : parents) ps.push_back({{"name", p.name}, {"kind", p.kind}, {"checksum", p.checksum}});
  return {{"name", name},     {"kind", kind}, {"checksum", checksum}, {"parents", ps},
          {"config", config}, {"meta", meta}, {"created", created}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  m.name = j.at("name");
  m.kind = j.at("kind");
  m.checksum = j.at("checksum");
  for (const auto& p : j.at("parents")) m.parents.push_back({p.at("name"), p.at("kind"), p.at("checksum")});
  m.config = j.value("config", nlohmann::json::object());
  m.meta = j.value("meta", nlohmann::json::object());
  m.created = j.value("created", nlohmann::json::object());
  return m;
}

Store::Store(fs::path root, bool force) : root_(std::move(root)), force_(force) {}

fs::path Store::archive_path(const std::string& name) const { return root_ / (name + ".bin"); }
fs::path Store::manifest_path(const std::string& name) const { return root_ / (name + ".json"); }

bool Store::exists(const std::string& name) const { return fs::exists(manifest_path(name)); }

void Store::check_writable(const fs::path& path) const {
  if (!force_ && fs::exists(path))
    throw ExistsError(fmt::format("{} already exists (use --force to overwrite)", path.string()));
}

Manifest Store::put(const std::string& name, const std::string& kind, const NamedArrays& arrays,
                    std::vector<ParentRef> parents, nlohmann::json config, nlohmann::json meta) {
  for (const auto& p : parents)
    if (p.checksum.empty()) throw ProvenanceError(fmt::format("parent '{}' of '{}' has no checksum", p.name, name));
  check_writable(manifest_path(name));
  check_writable(archive_path(name));
  const std::string bytes = encode_archive(arrays);
  Manifest m;
  m.name = name;
  m.kind = kind;
  m.checksum = sha256_hex(bytes);
  for (const auto& p : parents)
    if (p.checksum == m.checksum) throw ProvenanceError(fmt::format("'{}' lists itself as a parent", name));
  m.parents = std::move(parents);
  m.config = std::move(config);
  m.meta = std::move(meta);
  m.created = {{"tool", "memora_lab"}, {"archive_format", "MLARCH01"}};
  // Archive first, so a manifest never points at a missing payload.
  write_file_atomic(archive_path(name), bytes);
  write_file_atomic(manifest_path(name), m.to_json().dump(2) + "\n");
  return m;
}

Manifest Store::manifest(const std::string& name) const {
  const fs::path path = manifest_path(name);
  if (!fs::exists(path)) throw std::runtime_error(fmt::format("missing artifact '{}' ({})", name, path.string()));
  try {
    return Manifest::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumError(fmt::format("manifest of '{}' is unreadable: {}", name, e.what()));
  }
}

NamedArrays Store::get(const std::string& name, const std::string& kind, Manifest* out) const {
  Manifest m = manifest(name);
  if (m.kind != kind)
    throw std::runtime_error(fmt::format("artifact '{}' is a {}, expected a {}", name, m.kind, kind));
  const std::string bytes = read_file(archive_path(name));
  const std::string sum = sha256_hex(bytes);
  if (sum != m.checksum)
    throw ChecksumError(fmt::format("checksum mismatch for artifact '{}': manifest {} but archive {}", name,
                                    m.checksum.substr(0, 12), sum.substr(0, 12)));
  NamedArrays arrays = decode_archive(bytes);
  if (out) *out = std::move(m);
  return arrays;
}

void Store::put_text(const std::string& relative, const std::string& content) {
  const fs::path path = root_ / relative;
  check_writable(path);
  write_file_atomic(path, content);
}

ParentRef parent_of(const Manifest& m) { return {m.name, m.kind, m.checksum}; }

Manifest save_dataset(Store& s, const std::string& name, const ConceptDataset& d, std::vector<ParentRef> parents,
                      const nlohmann::json& config) {
  NamedArrays a{{"images", d.images}, {"labels", row_vector_of(d.labels)}};
  nlohmann::json meta{{"n_concepts", d.n_concepts}, {"n_per_class", d.n_per_class},
                      {"image_size", d.shape.height}, {"seed", d.seed}};
  return s.put(name, "dataset", a, std::move(parents), config, std::move(meta));
}

ConceptDataset load_dataset(const Store& s, const std::string& name, Manifest* out) {
  Manifest m;
  NamedArrays a = s.get(name, "dataset", &m);
  ConceptDataset d;
  d.images = a.at("images");
  const Matrix& labels = a.at("labels");
  for (Eigen::Index i = 0; i < labels.cols(); ++i) d.labels.push_back(static_cast<int>(labels(0, i)));
  d.n_concepts = m.meta.at("n_concepts");
  d.n_per_class = m.meta.at("n_per_class");
  const int size = m.meta.at("image_size");
  d.shape = LatentShape{1, size, size};
  d.render = default_render_spec(d.n_concepts);
  d.seed = m.meta.at("seed");
  if (out) *out = std::move(m);
  return d;
}

Manifest save_denoiser(Store& s, const std::string& name, const Denoiser& model, std::vector<ParentRef> parents,
                       const nlohmann::json& config, nlohmann::json meta) {
  meta["spec"] = spec_json(model.spec());
  meta["param_checksum"] = model.checksum();
  return s.put(name, "denoiser", arrays_of(model.params()), std::move(parents), config, std::move(meta));
}

Denoiser load_denoiser(const Store& s, const std::string& name, Manifest* out) {
  Manifest m;
  NamedArrays a = s.get(name, "denoiser", &m);
  Denoiser model(spec_from(m.meta.at("spec")), params_of(a));
  if (out) *out = std::move(m);
  return model;
}

Manifest save_classifier(Store& s, const std::string& name, const ConceptClassifier& clf,
                         std::vector<ParentRef> parents, const nlohmann::json& config) {
  const ClassifierSpec& sp = clf.spec();
  nlohmann::json meta{{"input_dim", sp.input_dim},
                      {"hidden", sp.hidden},
                      {"feature_dim", sp.feature_dim},
                      {"n_concepts", sp.n_concepts},
                      {"heldout_accuracy", clf.heldout_accuracy()}};
  return s.put(name, "classifier", arrays_of(clf.params()), std::move(parents), config, std::move(meta));
}

ConceptClassifier load_classifier(const Store& s, const std::string& name, Manifest* out) {
  Manifest m;
  NamedArrays a = s.get(name, "classifier", &m);
  ClassifierSpec sp{m.meta.at("input_dim"), m.meta.at("hidden"), m.meta.at("feature_dim"), m.meta.at("n_concepts")};
  ConceptClassifier clf(sp, params_of(a), m.meta.at("heldout_accuracy").get<double>());
  if (out) *out = std::move(m);
  return clf;
}

Manifest save_adapter(Store& s, const std::string& name, const LoraAdapter& adapter, std::vector<ParentRef> parents,
                      const nlohmann::json& config, nlohmann::json meta) {
  NamedArrays a;
  nlohmann::json layers = nlohmann::json::array();
  for (const LoraLayer& l : adapter.layers) {
    a.emplace(l.name + ".A", l.A);
    a.emplace(l.name + ".B", l.B);
    layers.push_back(l.name);
  }
  meta["rank"] = adapter.rank;
  meta["beta"] = adapter.beta;
  meta["host_checksum"] = adapter.host_checksum;
  meta["layers"] = layers;
  meta["erased_concept"] = adapter.erased_concept ? nlohmann::json(*adapter.erased_concept) : nlohmann::json();
  return s.put(name, "adapter", a, std::move(parents), config, std::move(meta));
}

LoraAdapter load_adapter(const Store& s, const std::string& name, Manifest* out) {
  Manifest m;
  NamedArrays a = s.get(name, "adapter", &m);
  LoraAdapter adapter;
  adapter.rank = m.meta.at("rank");
  adapter.beta = m.meta.at("beta");
  adapter.host_checksum = m.meta.at("host_checksum");
  if (!m.meta.at("erased_concept").is_null()) adapter.erased_concept = m.meta.at("erased_concept").get<int>();
  for (const auto& layer : m.meta.at("layers")) {
    const std::string n = layer;
    adapter.layers.push_back({n, a.at(n + ".A"), a.at(n + ".B")});
  }
  if (out) *out = std::move(m);
  return adapter;
}

LoraAdapter load_adapter_for(const Store& s, const std::string& name, const Denoiser& host) {
  LoraAdapter adapter = load_adapter(s, name);
  const std::string sum = host.checksum();
  if (adapter.host_checksum != sum)
    throw ProvenanceError(fmt::format("adapter '{}' was trained on host {} but the supplied model is {}", name,
                                      adapter.host_checksum.substr(0, 12), sum.substr(0, 12)));
  check_adapter(host, adapter);
  return adapter;
}

}  // namespace memora::harness
