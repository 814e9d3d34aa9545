// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "lcl/error.hpp"
#include "lcl/pipeline.hpp"
#include "tiny_run.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "lcl_test_pipeline" / name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void full_run(const RunConfig& cfg, const fs::path& dir) {
  cmd_gen(cfg, dir, false);
  for (const char* s : {"pretrain", "2way", "2way-random", "2way-weight", "mix"}) cmd_train(cfg, dir, s);
  RunPaths paths{dir};
  for (const char* s : {"pretrain", "2way", "2way-random", "2way-weight", "mix"}) {
    cmd_eval(cfg, dir, stage_model(paths, s), {});
  }
  cmd_ablate(cfg, dir, stage_model(paths, "2way"), "false-rate");
  cmd_ablate(cfg, dir, stage_model(paths, "2way"), "position");
  cmd_report(dir);
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(LCL_CLI_PATH) + " " + args + " -q 2>/dev/null";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_overrides() {
  std::string s;
  for (const auto& o : test::tiny_overrides()) s += " -s '" + o + "'";
  return s;
}

}  // namespace

TEST_CASE("stage dependencies") {
  CHECK(stage_prerequisite("pretrain").empty());
  CHECK(stage_prerequisite("2way") == "pretrain");
  CHECK(stage_prerequisite("mix") == "pretrain");
  CHECK(stage_prerequisite("2way-random") == "2way");
  CHECK(stage_prerequisite("2way-weight") == "2way");

  RunConfig cfg = test::tiny_config();
  auto dir = fresh_dir("deps");
  CHECK_THROWS_AS(cmd_train(cfg, dir, "pretrain"), DependencyError);
  cmd_gen(cfg, dir, false);
  try {
    cmd_train(cfg, dir, "2way-random");
    FAIL("expected a dependency error");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("2way") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_gen(cfg, dir, false), Error);
  cmd_gen(cfg, dir, true);

  RunConfig other = cfg;
  other.apply_override("universe.seed=99");
  CHECK_THROWS_AS(cmd_train(other, dir, "pretrain"), ConfigError);
  CHECK_THROWS_AS(cmd_report(dir), DependencyError);
}

TEST_CASE("lock file excludes a second writer") {
  auto dir = fresh_dir("lock");
  fs::create_directories(dir);
  {
    RunLock a(dir);
    CHECK(fs::exists(RunPaths{dir}.lock()));
    CHECK_THROWS_AS(RunLock{dir}, Error);
  }
  CHECK_FALSE(fs::exists(RunPaths{dir}.lock()));
}

TEST_CASE("run directory resolution") {
  RunConfig cfg = test::tiny_config();
  CHECK(resolve_run_dir(cfg, fs::path("x/y")) == fs::path("x/y"));
  cfg.output_dir = "/abs/out";
  CHECK(resolve_run_dir(cfg, std::nullopt) == fs::path("/abs/out"));
  cfg.output_dir = "rel";
  ::setenv("LCL_RUN_ROOT", "/some/root", 1);
  CHECK(resolve_run_dir(cfg, std::nullopt) == fs::path("/some/root/rel"));
  ::unsetenv("LCL_RUN_ROOT");
  CHECK(resolve_run_dir(cfg, std::nullopt) == fs::path("runs/rel"));
}

TEST_CASE("end-to-end run is reproducible byte for byte") {
  RunConfig cfg = test::tiny_config();
  auto a = fresh_dir("a"), b = fresh_dir("b");
  full_run(cfg, a);
  full_run(cfg, b);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), a);
    // Stage summaries carry wall-clock time.
    if (rel.string().find(".summary.json") != std::string::npos) continue;
    REQUIRE(fs::exists(b / rel));
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b / rel), rel.string());
    ++compared;
  }
  CHECK(compared > 20);

  RunPaths p{a};
  for (const char* plot : {"shots", "false_rate", "position"}) CHECK(fs::exists(p.plot(plot)));
  std::string summary = slurp(p.summary());
  CHECK(summary.find("stage,protocol,shots,condition,accuracy,stderr,n") != std::string::npos);
  CHECK(summary.find("config_hash=" + cfg.hash()) != std::string::npos);
  CHECK(slurp(p.checkpoint("2way").string() + ".meta").find(cfg.hash()) != std::string::npos);
  auto pos = read_report_csv(p.report("2way", "position"));
  CHECK(pos.rows.size() == 1 + 8);
}

TEST_CASE("command-line exit codes") {
  auto dir = fresh_dir("cli");
  const std::string r = " -r " + dir.string();
  CHECK(run_cli("pretrain" + r) == 3);
  CHECK(run_cli("gen" + r + " -s universe.nope=1") == 2);
  CHECK(run_cli("gen" + r + " -s universe.dim=0") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen" + r + cli_overrides()) == 0);
  CHECK(run_cli("gen" + r) == 1);
  CHECK(run_cli("train 2way" + r) == 3);
  CHECK(run_cli("pretrain" + r + " -s train.pretrain.lr=1e300") == 4);
  CHECK(run_cli("pretrain" + r) == 0);
  CHECK(run_cli("eval --stage pretrain" + r) == 0);
  CHECK(fs::exists(RunPaths{dir}.report("pretrain", "zeroshot")));
  CHECK(run_cli("report" + r) == 3);
  CHECK(run_cli("ablate false-rate --stage pretrain" + r) == 0);
  CHECK(run_cli("ablate position --checkpoint " + RunPaths{dir}.checkpoint("pretrain").string() +
                " --label base" + r) == 0);
  CHECK(run_cli("report" + r) == 0);
  CHECK(fs::exists(RunPaths{dir}.report("base", "position")));
}
