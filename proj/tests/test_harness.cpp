#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "memora/harness/config.hpp"
#include "memora/harness/plots.hpp"
#include "memora/harness/store.hpp"
#include "memora/harness/table.hpp"
#include "memora/lora.hpp"
#include "memora/rng.hpp"

using namespace memora;
using namespace memora::harness;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("memora_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Denoiser small_model(std::uint64_t seed) {
  DenoiserSpec spec;
  spec.latent = LatentShape{1, 4, 4};
  spec.hidden = 16;
  spec.bottleneck = 8;
  return Denoiser(spec, seed);
}

void flip_byte(const fs::path& p, std::size_t offset) {
  std::string bytes = read_file(p);
  bytes[offset] = static_cast<char>(bytes[offset] ^ 0x01);
  write_file_atomic(p, bytes);
}

}  // namespace

TEST_CASE("archives round trip bit for bit") {
  Rng rng(1);
  Matrix odd(2, 3);
  odd << -0.0, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::denorm_min(),
      std::numeric_limits<double>::quiet_NaN(), 1e308, -1.0 / 3.0;
  const NamedArrays in{{"a", rng.normal_matrix(5, 7)}, {"layer.weight", odd}, {"empty", Matrix(0, 4)}};
  const std::string bytes = encode_archive(in);
  CHECK(bytes.substr(0, 8) == "MLARCH01");
  const NamedArrays out = decode_archive(bytes);
  REQUIRE(out.size() == 3);
  for (const auto& [name, m] : in) {
    REQUIRE(out.at(name).rows() == m.rows());
    REQUIRE(out.at(name).cols() == m.cols());
    CHECK(std::memcmp(out.at(name).data(), m.data(), sizeof(double) * m.size()) == 0);
  }
  CHECK(encode_archive(out) == bytes);
  CHECK_THROWS(decode_archive(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(decode_archive("MLARCH02" + bytes.substr(8)));
}

TEST_CASE("store refuses overwrites and detects corruption") {
  TempDir dir("store");
  Store store(dir.path);
  const Denoiser m = small_model(1);
  const Manifest mm = save_denoiser(store, "models/m", m, {}, nlohmann::json::object());
  CHECK(mm.checksum.size() == 64);
  CHECK(load_denoiser(store, "models/m").params() == m.params());
  CHECK_THROWS_AS(save_denoiser(store, "models/m", m, {}, nlohmann::json::object()), ExistsError);
  Store forced(dir.path, true);
  CHECK_NOTHROW(save_denoiser(forced, "models/m", m, {}, nlohmann::json::object()));

  // Same content, same checksum.
  CHECK(save_denoiser(forced, "models/m2", m, {}, nlohmann::json::object()).checksum == mm.checksum);

  flip_byte(store.archive_path("models/m"), read_file(store.archive_path("models/m")).size() - 5);
  try {
    load_denoiser(store, "models/m");
    FAIL("corruption was not detected");
  } catch (const ChecksumError& e) {
    CHECK(std::string(e.what()).find("models/m") != std::string::npos);
  }
  CHECK_THROWS_AS(store.get("models/m2", "classifier"), std::exception);
  CHECK_THROWS(load_denoiser(store, "models/missing"));
}

TEST_CASE("adapters are refused on a foreign host") {
  TempDir dir("provenance");
  Store store(dir.path);
  const Denoiser host = small_model(1), other = small_model(2);
  const Manifest hm = save_denoiser(store, "models/host", host, {}, nlohmann::json::object());
  LoraAdapter a = init_adapter(host, 2, 1.0, 3);
  Rng rng(4);
  for (auto& l : a.layers) l.B = rng.normal_matrix(l.B.rows(), l.B.cols());
  a.erased_concept = 2;
  save_adapter(store, "relearn/x/final", a, {parent_of(hm)}, nlohmann::json::object());
  const LoraAdapter back = load_adapter_for(store, "relearn/x/final", host);
  CHECK(back.rank == 2);
  CHECK(back.erased_concept == 2);
  for (const auto& [name, d] : dense_delta(a)) CHECK(dense_delta(back).at(name) == d);
  CHECK_THROWS_AS(load_adapter_for(store, "relearn/x/final", other), ProvenanceError);
  CHECK(store.manifest("relearn/x/final").parents.at(0).checksum == hm.checksum);
}

TEST_CASE("provenance must be well formed") {
  TempDir dir("parents");
  Store store(dir.path);
  const NamedArrays arrays{{"images", Matrix::Ones(1, 1)}};
  CHECK_THROWS_AS(store.put("a", "images", arrays, {{"p", "images", ""}}, {}, {}), ProvenanceError);
  const Manifest m = store.put("a", "images", arrays, {}, {}, {});
  CHECK_THROWS_AS(store.put("b", "images", arrays, {parent_of(m)}, {}, {}), ProvenanceError);
}

TEST_CASE("manifests round trip through json") {
  Manifest m;
  m.name = "models/x";
  m.kind = "denoiser";
  m.checksum = std::string(64, 'a');
  m.parents = {{"world/dataset", "dataset", std::string(64, 'b')}};
  m.config = {{"k", 1}};
  m.meta = {{"stage", "unlearn"}};
  m.created = {{"tool", "memora_lab"}};
  const Manifest back = Manifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
}

TEST_CASE("config defaults, overrides and errors") {
  const RunConfig d = parse_config("");
  CHECK(d.world.n_concepts == 4);
  CHECK(d.schedule.n_infer_steps == 50);
  CHECK(d.memora.restart_step == 35);
  CHECK(d.memora.lora.rank == 4);
  CHECK(d.memora.lora.steps == 500);
  CHECK(d.memora.expansion.total_count == 33);
  CHECK(d.eval.guidance == 7.5);
  CHECK(d.eval.automemora_w == 0.5);

  const RunConfig c = parse_config("[run]\nseed = 9\n\n[lora]\nrank = 2\n[retrain]\nsteer = no\n");
  CHECK(c.seed == 9);
  CHECK(c.memora.lora.rank == 2);
  CHECK(!c.unlearn.retrain.steer);
  CHECK(c.stage_seed(kSeedBase) != d.stage_seed(kSeedBase));
  CHECK(c.stage_seed(kSeedBase) != c.stage_seed(kSeedEval));

  CHECK_THROWS(parse_config("[lora]\nrnak = 2\n"));
  CHECK_THROWS(parse_config("[nope]\nx = 1\n"));
  CHECK_THROWS(parse_config("[lora]\nrank = two\n"));
  CHECK_THROWS(parse_config("[unlearn]\nconcept = 9\n"));
  CHECK_THROWS(parse_config("[memora]\nrestart_step = 60\n"));
}

TEST_CASE("config survives its own ini form") {
  RunConfig c = parse_config("[run]\nseed = 123\n[eval]\ntau = 0.4\n[lora]\nlr = 0.00123\n");
  const std::string text = to_ini(c);
  CHECK(to_ini(parse_config(text)) == text);
  CHECK(to_json(parse_config(text)) == to_json(c));
}

TEST_CASE("csv tables") {
  Table t({"a", "b"});
  t.add({"x", num(0.1)});
  t.add({"y", ""});
  const Table back = Table::parse(t.csv());
  CHECK(back.csv() == t.csv());
  CHECK(back.rows()[1][1].empty());
  CHECK(back.column("b") == 1);
  CHECK_THROWS(t.add({"only one"}));
  CHECK_THROWS(t.add({"a,b", "c"}));
  CHECK(std::stod(num(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(num(std::nan("")) == "nan");
}

TEST_CASE("static plots") {
  const std::string svg = line_chart_svg("t", "x", "y", {{"a<b", {0, 50, 100}, {0.1, 0.5, 0.9}}}, 0.0, 1.0, 0.5);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("a&lt;b") != std::string::npos);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
  CHECK_THROWS(line_chart_svg("t", "x", "y", {{"r", {0, 1}, {0}}}, 0.0, 1.0));

  const std::string pgm = pgm_grid(Matrix::Constant(3, 16, 1.0), 4, 2, 2);
  // Two columns and two rows of 8-pixel cells with 1-pixel gaps.
  const std::string head = "P5\n19 19\n255\n";
  REQUIRE(pgm.rfind(head, 0) == 0);
  CHECK(pgm.size() == head.size() + 19 * 19);
  CHECK(static_cast<unsigned char>(pgm[head.size() + 19 + 1]) == 255);
  CHECK(histogram_svg("h", {1, 2, 3}, -1.0, 1.0).find("<rect") != std::string::npos);
}
