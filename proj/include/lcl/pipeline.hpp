// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lcl/config.hpp"

namespace lcl {

/// Fixed layout of a run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path universe() const { return root / "universe.lclu"; }
  std::filesystem::path neighbors() const { return root / "neighbors.csv"; }
  std::filesystem::path checkpoint(const std::string& stage) const {
    return root / "checkpoints" / (stage + ".lclc");
  }
  std::filesystem::path metrics(const std::string& stage) const {
    return root / "metrics" / (stage + ".csv");
  }
  std::filesystem::path intervals(const std::string& stage) const {
    return root / "metrics" / (stage + ".intervals.csv");
  }
  std::filesystem::path stage_summary(const std::string& stage) const {
    return root / "metrics" / (stage + ".summary.json");
  }
  std::filesystem::path report(const std::string& label, const std::string& kind) const {
    return root / "reports" / (label + "." + kind + ".csv");
  }
  std::filesystem::path summary() const { return root / "summary.csv"; }
  std::filesystem::path plot(const std::string& name) const {
    return root / "plots" / (name + ".svg");
  }
  std::filesystem::path lock() const { return root / ".lock"; }
};

/// `explicit_dir` if given, else cfg.output_dir; relative paths resolve under
/// $LCL_RUN_ROOT (default "runs").
std::filesystem::path resolve_run_dir(const RunConfig& cfg,
                                      const std::optional<std::filesystem::path>& explicit_dir);

/// Exclusive writer lock on a run directory, released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// "config_hash=<hex> seed=<n>" header line shared by every text artifact.
std::string provenance_line(const std::string& config_hash, std::uint64_t seed);
/// Sidecar `<artifact>.meta` for binary files.
void write_meta(const std::filesystem::path& artifact, const std::string& config_hash,
                std::uint64_t seed, const std::string& format);

/// Training stage prerequisite, or empty for pretrain.
std::string stage_prerequisite(const std::string& stage);

/// Loads the run's universe with the split and seed of `cfg`.
ClassUniverse load_run_universe(const RunConfig& cfg, const RunPaths& paths);

/// Rejects a config whose universe, neighbor or model sections differ from
/// the run's snapshot.
void check_compatible(const RunConfig& cfg, const RunPaths& paths);

void cmd_gen(const RunConfig& cfg, const std::filesystem::path& run_dir, bool force,
             std::ostream* log = nullptr);
void cmd_train(const RunConfig& cfg, const std::filesystem::path& run_dir, const std::string& stage,
               std::ostream* log = nullptr);

/// Model under evaluation: a stage of the run or an explicit checkpoint file.
struct ModelRef {
  std::string label;
  std::filesystem::path checkpoint;
};
ModelRef stage_model(const RunPaths& paths, const std::string& stage);

/// Shot sweep per protocol plus zero-shot accuracy. Returns the files written.
std::vector<std::filesystem::path> cmd_eval(const RunConfig& cfg,
                                            const std::filesystem::path& run_dir,
                                            const ModelRef& model,
                                            const std::vector<std::string>& protocols,
                                            std::ostream* log = nullptr);
/// which: false-rate | position | shots. Uses the first configured protocol.
std::filesystem::path cmd_ablate(const RunConfig& cfg, const std::filesystem::path& run_dir,
                                 const ModelRef& model, const std::string& which,
                                 std::ostream* log = nullptr);
/// Summary CSV plus shot, false-rate and position SVG plots. Pure in the
/// run directory's reports.
std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& run_dir);

}  // namespace lcl
