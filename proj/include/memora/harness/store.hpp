#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "memora/eval.hpp"
#include "memora/lora.hpp"
#include "memora/toy_world.hpp"

namespace memora::harness {

using NamedArrays = std::map<std::string, Matrix>;

// Archive layout, all integers little-endian:
//   "MLARCH01" | u32 count | count x { u32 name_len | name | u8 dtype (1 = f64)
//   | u32 ndim | i64 dims[ndim] | row-major data }
std::string encode_archive(const NamedArrays& arrays);
NamedArrays decode_archive(const std::string& bytes);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

struct ParentRef {
  std::string name;
  std::string kind;
  std::string checksum;
};

struct Manifest {
  std::string name;
  std::string kind;
  std::string checksum;  // SHA-256 of the archive bytes
  std::vector<ParentRef> parents;
  nlohmann::json config;
  nlohmann::json meta;
  nlohmann::json created;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct ChecksumError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ExistsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A directory of artifacts, each stored as <name>.bin plus <name>.json.
// Names may contain '/' to group artifacts in subdirectories.
class Store {
 public:
  explicit Store(std::filesystem::path root, bool force = false);

  const std::filesystem::path& root() const { return root_; }
  bool exists(const std::string& name) const;
  std::filesystem::path archive_path(const std::string& name) const;
  std::filesystem::path manifest_path(const std::string& name) const;

  // Refuses to overwrite unless the store was opened with force.
  Manifest put(const std::string& name, const std::string& kind, const NamedArrays& arrays,
               std::vector<ParentRef> parents, nlohmann::json config, nlohmann::json meta);
  // Verifies the archive checksum and the recorded kind.
  NamedArrays get(const std::string& name, const std::string& kind, Manifest* manifest = nullptr) const;
  Manifest manifest(const std::string& name) const;

  // Plain files (CSV, SVG, PGM, JSON) written atomically under the root.
  void put_text(const std::string& relative, const std::string& content);

 private:
  void check_writable(const std::filesystem::path& path) const;

  std::filesystem::path root_;
  bool force_;
};

ParentRef parent_of(const Manifest& m);

// Typed (de)serialisation. Loads verify checksums; adapters also verify the
// recorded host checksum against the model they will be applied to.
Manifest save_dataset(Store& s, const std::string& name, const ConceptDataset& d, std::vector<ParentRef> parents,
                      const nlohmann::json& config);
ConceptDataset load_dataset(const Store& s, const std::string& name, Manifest* m = nullptr);

Manifest save_denoiser(Store& s, const std::string& name, const Denoiser& model, std::vector<ParentRef> parents,
                       const nlohmann::json& config, nlohmann::json meta = nlohmann::json::object());
Denoiser load_denoiser(const Store& s, const std::string& name, Manifest* m = nullptr);

Manifest save_classifier(Store& s, const std::string& name, const ConceptClassifier& clf,
                         std::vector<ParentRef> parents, const nlohmann::json& config);
ConceptClassifier load_classifier(const Store& s, const std::string& name, Manifest* m = nullptr);

Manifest save_adapter(Store& s, const std::string& name, const LoraAdapter& adapter, std::vector<ParentRef> parents,
                      const nlohmann::json& config, nlohmann::json meta = nlohmann::json::object());
LoraAdapter load_adapter(const Store& s, const std::string& name, Manifest* m = nullptr);
// Throws ProvenanceError when the adapter was trained against another host.
LoraAdapter load_adapter_for(const Store& s, const std::string& name, const Denoiser& host);

}  // namespace memora::harness
