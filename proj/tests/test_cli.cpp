#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <snse/cli.hpp>

using namespace snse;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"snse"};
  argv.insert(argv.end(), args);
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("snse_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSmokeConfig = SNSE_SOURCE_DIR "/configs/smoke.ini";

}  // namespace

TEST_CASE("unknown commands and bad flags fail with nonzero exit") {
  CHECK(run({"--command", "fly"}) == 2);
  CHECK(run({}) == 2);  // --command is required
  auto dir = fresh_dir("badcfg");
  std::string out = dir.string();
  CHECK(run({"--command", "mesh-info", "--config", "/nonexistent.ini", "--out",
             out.c_str()}) == 1);
}

TEST_CASE("mesh-info reports the level hierarchy and writes a manifest") {
  auto dir = fresh_dir("meshinfo");
  std::string out = dir.string();
  CHECK(run({"--command", "mesh-info", "--config", kSmokeConfig, "--out", out.c_str()}) == 0);
  CHECK(fs::exists(dir / "manifest.json"));
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["command"] == "mesh-info");
  CHECK(manifest["seed"] == 12345);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
}

TEST_CASE("single-run writes the diagnostics stream") {
  auto dir = fresh_dir("singlerun");
  std::string out = dir.string();
  CHECK(run({"--command", "single-run", "--config", kSmokeConfig, "--out", out.c_str()}) == 0);
  std::string csv = slurp(dir / "diagnostics.csv");
  CHECK(csv.rfind("m,t,energy,gradnorm,div_residual,energy_identity_residual\n", 0) == 0);
  // header + steps + initial state
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 16 + 1);
}

TEST_CASE("seed override changes the manifest seed") {
  auto dir = fresh_dir("seed");
  std::string out = dir.string();
  CHECK(run({"--command", "mesh-info", "--config", kSmokeConfig, "--out", out.c_str(),
             "--seed", "999"}) == 0);
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["seed"] == 999);
}

TEST_CASE("shipped configs round-trip through serialize(parse(.))") {
  for (const char* name : {"smoke.ini", "default.ini"}) {
    std::ifstream in(fs::path(SNSE_SOURCE_DIR) / "configs" / name);
    REQUIRE(in);
    Config cfg = parse_config(in);
    std::string normalized = serialize_config(cfg);
    Config back = parse_config_string(normalized);
    CHECK(serialize_config(back) == normalized);
  }
}

TEST_CASE("convergence smoke run writes all declared artifacts deterministically") {
  auto dir1 = fresh_dir("conv1");
  std::string out1 = dir1.string();
  CHECK(run({"--command", "convergence", "--config", kSmokeConfig, "--out", out1.c_str(),
             "--workers", "2"}) == 0);
  for (const char* f : {"records.csv", "rates.csv", "exceedance.csv", "rates.svg",
                        "manifest.json"})
    CHECK(fs::exists(dir1 / f));

  // rerunning with a different worker count reproduces records.csv bytewise
  auto dir2 = fresh_dir("conv2");
  std::string out2 = dir2.string();
  CHECK(run({"--command", "convergence", "--config", kSmokeConfig, "--out", out2.c_str(),
             "--workers", "1"}) == 0);
  CHECK(slurp(dir1 / "records.csv") == slurp(dir2 / "records.csv"));
  CHECK(slurp(dir1 / "rates.csv") == slurp(dir2 / "rates.csv"));

  // project-rates regenerates the fit from records.csv alone
  fs::remove(dir1 / "rates.csv");
  CHECK(run({"--command", "project-rates", "--config", kSmokeConfig, "--out",
             out1.c_str()}) == 0);
  CHECK(slurp(dir1 / "rates.csv") == slurp(dir2 / "rates.csv"));
}
