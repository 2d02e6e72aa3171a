#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "cds/cli.hpp"
#include "cds/io.hpp"

using namespace cds;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cds");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cds_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 16x16 toy setup with a short run; returns the config path.
fs::path small_setup(const fs::path& dir, int steps = 4) {
  REQUIRE(cli({"toy-scene", "--word", "cat", "--seed", "1", "--size", "16", "--out", (dir / "src.png").string()}).code == 0);
  const json cfg = {
      {"backend", {{"name", "toy"}, {"params", {{"latent_shape", {3, 16, 16}}}}}},
      {"patch", {{"num_patches", 32}}},
      {"edit", {{"lambda_con", 3.0}, {"steps", steps}, {"step_size", 0.1}, {"log_every", 2}}},
      {"input", {{"source", "src.png"}, {"prompt_ref", "a photo of a cat"}, {"prompt_tgt", "a photo of a dog"}}},
      {"output", {{"root", (dir / "runs").string()}, {"tag", "t"}}}};
  write_file_atomic(dir / "cfg.json", cfg.dump(2));
  return dir / "cfg.json";
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("cli: missing input is a config error with one line") {
  const fs::path dir = fresh_dir("missing");
  const Run r = cli({"edit", "--source", (dir / "nope.png").string(), "--prompt-ref", "cat", "--prompt-tgt", "dog",
                     "--out", (dir / "run").string()});
  CHECK(r.code == 2);
  CHECK(count_lines(r.err) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli: edit writes the run directory") {
  const fs::path dir = fresh_dir("edit");
  const fs::path cfg = small_setup(dir);
  const fs::path out = dir / "run";
  const Run r = cli({"edit", "--config", cfg.string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"output.png", "source.png", "output.latent", "loss.csv", "summary.json", "manifest.json",
                        "checkpoint.state", "heatmaps/step_0000.png", "heatmaps/step_0002.png", "heatmaps/step_0003.png"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const std::string csv = read_file(out / "loss.csv");
  CHECK(csv.rfind("step,t,dds_norm,con_loss,update_norm\n", 0) == 0);
  CHECK(count_lines(csv) == 5);

  const json m = json::parse(read_file(out / "manifest.json"));
  CHECK(m["method"] == "cds");
  CHECK(m["status"] == "ok");
  CHECK(m["seed"] == 0);
  std::vector<std::string> listed;
  for (const auto& e : m["inventory"]) {
    listed.push_back(e["path"]);
    if (e["path"] != "manifest.json") CHECK(e["sha1"] == git_blob_sha1(read_file(out / e["path"].get<std::string>())));
  }
  std::vector<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file()) on_disk.push_back(fs::relative(e.path(), out).generic_string());
  std::sort(on_disk.begin(), on_disk.end());
  std::sort(listed.begin(), listed.end());
  CHECK(listed == on_disk);

  // refuses to overwrite
  CHECK(cli({"edit", "--config", cfg.string(), "--out", out.string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: lambda 0 is labeled dds and flags override the config") {
  const fs::path dir = fresh_dir("dds");
  const fs::path cfg = small_setup(dir, 2);
  const fs::path out = dir / "run";
  REQUIRE(cli({"edit", "--config", cfg.string(), "--out", out.string(), "--lambda-con", "0", "--seed", "5"}).code == 0);
  const json m = json::parse(read_file(out / "manifest.json"));
  CHECK(m["method"] == "dds");
  CHECK(m["seed"] == 5);
  CHECK(m["config"]["edit"]["lambda_con"] == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("cli: resume finishes a shortened run identically") {
  const fs::path dir = fresh_dir("resume");
  const fs::path cfg = small_setup(dir, 4);
  REQUIRE(cli({"edit", "--config", cfg.string(), "--out", (dir / "full").string()}).code == 0);
  REQUIRE(cli({"edit", "--config", cfg.string(), "--out", (dir / "part").string(), "--steps", "2"}).code == 0);
  REQUIRE(cli({"edit", "--config", cfg.string(), "--out", (dir / "part").string(), "--resume"}).code == 0);
  CHECK(read_file(dir / "full" / "loss.csv") == read_file(dir / "part" / "loss.csv"));
  CHECK(read_file(dir / "full" / "output.latent") == read_file(dir / "part" / "output.latent"));
  fs::remove_all(dir);
}

TEST_CASE("cli: config errors") {
  const fs::path dir = fresh_dir("badcfg");
  small_setup(dir);
  write_file_atomic(dir / "bad.json", R"({"edit": {"lamda": 3}})");
  CHECK(cli({"edit", "--config", (dir / "bad.json").string(), "--out", (dir / "r").string()}).code == 2);
  write_file_atomic(dir / "bad2.json", "{not json");
  CHECK(cli({"edit", "--config", (dir / "bad2.json").string(), "--out", (dir / "r").string()}).code == 2);
  CHECK(cli({"edit", "--config", (dir / "cfg.json").string(), "--out", (dir / "r").string(), "--backend", "sd15"}).code == 3);
  CHECK(cli({"edit", "--config", (dir / "cfg.json").string(), "--out", (dir / "r2").string(), "--prompt-tgt", "zebra"}).code == 2);
  CHECK(cli({"edit", "--config", (dir / "cfg.json").string(), "--out", (dir / "r3").string(), "--loss-location", "nowhere"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: schedule dump") {
  const Run r = cli({"schedule", "dump", "--kind", "scaled_linear", "--steps", "1000"});
  REQUIRE(r.code == 0);
  CHECK(count_lines(r.out) == 1001);
  std::istringstream is(r.out);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "t,a_t,b_t");
  const double a0 = std::stod(row.substr(row.find(',') + 1));
  // tests/oracles/scalar_oracles.py
  CHECK(std::abs(a0 - 0.99957490964909678449) <= 1e-9);
  CHECK(cli({"schedule", "dump", "--kind", "nope"}).code == 2);
}

TEST_CASE("cli: backends list") {
  const Run r = cli({"backends", "list"});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  REQUIRE(j.is_array());
  CHECK(j.size() == 1);
  CHECK(j[0]["name"] == "toy");
}

TEST_CASE("cli: ablate sweeps lambda and records the shared seeds") {
  const fs::path dir = fresh_dir("ablate");
  const fs::path cfg = small_setup(dir, 3);
  const fs::path out = dir / "abl";
  REQUIRE(cli({"ablate", "--config", cfg.string(), "--out", out.string(), "--axis", "lambda", "--values", "0,3,10",
               "--seeds", "0,1"}).code == 0);
  const std::string csv = read_file(out / "ablation.csv");
  CHECK(csv.rfind("axis,value,seed,", 0) == 0);
  std::size_t median_rows = 0, rows = 0;
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    ++rows;
    if (line.find("median") != std::string::npos) ++median_rows;
  }
  CHECK(rows == 9);
  CHECK(median_rows == 3);
  CHECK(fs::exists(out / "panel.png"));
  const json m = json::parse(read_file(out / "manifest.json"));
  CHECK(m["sweep"]["seeds"] == json({0, 1}));

  const fs::path out2 = dir / "abl2";
  REQUIRE(cli({"ablate", "--config", cfg.string(), "--out", out2.string(), "--axis", "num_patches", "--values",
               "64,256"}).code == 0);
  CHECK(count_lines(read_file(out2 / "ablation.csv")) == 1 + 2 + 2);
  const fs::path out3 = dir / "abl3";
  REQUIRE(cli({"ablate", "--config", cfg.string(), "--out", out3.string(), "--axis", "loss_location", "--values",
               "self_attention,score_output"}).code == 0);
  CHECK(cli({"ablate", "--config", cfg.string(), "--out", (dir / "abl4").string(), "--axis", "colour", "--values",
             "1"}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: panel and toy-scene") {
  const fs::path dir = fresh_dir("panel");
  const fs::path cfg = small_setup(dir, 2);
  REQUIRE(cli({"edit", "--config", cfg.string(), "--out", (dir / "run").string()}).code == 0);
  REQUIRE(cli({"panel", "--run", (dir / "run").string()}).code == 0);
  CHECK(fs::exists(dir / "run" / "panel.png"));
  REQUIRE(cli({"toy-scene", "--word", "dog", "--size", "8", "--out", (dir / "d.latent").string()}).code == 0);
  CHECK(read_latent(dir / "d.latent").shape().height == 8);
  CHECK(cli({"toy-scene", "--word", "zebra", "--out", (dir / "z.png").string()}).code == 2);
  fs::remove_all(dir);
}
