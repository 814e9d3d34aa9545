// SPDX-License-Identifier: Apache-2.0
// lcl: command-line driver for the link-context learning pipeline.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lcl/config.hpp"
#include "lcl/error.hpp"
#include "lcl/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string run_dir;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config file");
  cmd->add_option("-r,--run-dir", c.run_dir,
                  "Run directory (default: $LCL_RUN_ROOT/<output_dir>, LCL_RUN_ROOT defaults to runs)");
  cmd->add_option("-s,--set", c.overrides, "Override a config key, e.g. train.2way.iterations=500");
  cmd->add_flag("-q,--quiet", c.quiet, "Only print errors");
}

/// Explicit --config wins, then the run's snapshot, then built-in defaults.
lcl::RunConfig resolve_config(const Common& c, bool prefer_snapshot, fs::path& run_dir) {
  lcl::RunConfig cfg = c.config.empty() ? lcl::RunConfig::defaults() : lcl::RunConfig::load(c.config);
  std::optional<fs::path> explicit_dir;
  if (!c.run_dir.empty()) explicit_dir = fs::path(c.run_dir);
  run_dir = lcl::resolve_run_dir(cfg, explicit_dir);
  if (c.config.empty() && prefer_snapshot) {
    lcl::RunPaths paths{run_dir};
    if (fs::exists(paths.config())) cfg = lcl::RunConfig::load(paths.config());
  }
  for (const auto& o : c.overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Link-context learning on synthetic class embeddings"};
  app.require_subcommand(1);

  Common common;
  bool force = false;
  std::string import_path;
  auto* gen = app.add_subcommand("gen", "Create the class universe and neighbor cache");
  add_common(gen, common);
  gen->add_flag("--force", force, "Overwrite an existing run directory");
  gen->add_option("--import", import_path, "Ingest an embedding file instead of generating");

  auto* pre = app.add_subcommand("pretrain", "Train the zero-shot base model");
  add_common(pre, common);

  std::string stage;
  auto* train = app.add_subcommand("train", "Run a fine-tuning stage");
  add_common(train, common);
  train->add_option("stage", stage, "2way | 2way-random | 2way-weight | mix")
      ->required()
      ->check(CLI::IsMember({"pretrain", "2way", "2way-random", "2way-weight", "mix"}));

  std::string eval_stage, checkpoint, label;
  std::vector<std::string> protocols;
  auto* eval = app.add_subcommand("eval", "Shot sweep and zero-shot accuracy of a checkpoint");
  add_common(eval, common);
  auto add_model = [&](CLI::App* cmd) {
    auto* st = cmd->add_option("--stage", eval_stage, "Evaluate this stage's checkpoint");
    auto* ck = cmd->add_option("--checkpoint", checkpoint, "Evaluate a checkpoint file");
    st->excludes(ck);
    cmd->add_option("--label", label, "Report label for --checkpoint (default: file stem)");
  };
  add_model(eval);
  eval->add_option("--protocol", protocols, "hard_pairs | all_pairs (default: config)")
      ->check(CLI::IsMember({"hard_pairs", "all_pairs"}));

  std::string which;
  auto* ablate = app.add_subcommand("ablate", "False-rate, position or shot ablation");
  add_common(ablate, common);
  add_model(ablate);
  ablate->add_option("which", which, "false-rate | position | shots")
      ->required()
      ->check(CLI::IsMember({"false-rate", "position", "shots"}));

  auto* report = app.add_subcommand("report", "Summary table and plots for a run directory");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(lcl::ExitCode::kConfig);
  }

  try {
    std::ostream* log = common.quiet ? nullptr : &std::cerr;
    fs::path run_dir;
    auto model_ref = [&](const lcl::RunPaths& paths) {
      if (!checkpoint.empty()) {
        std::string l = label.empty() ? fs::path(checkpoint).stem().string() : label;
        if (l.find('.') != std::string::npos || l.find('/') != std::string::npos) {
          throw lcl::ConfigError("label '" + l + "' must not contain '.' or '/'");
        }
        return lcl::ModelRef{l, checkpoint};
      }
      return lcl::stage_model(paths, eval_stage.empty() ? "2way" : eval_stage);
    };

    if (app.got_subcommand(gen)) {
      lcl::RunConfig cfg = resolve_config(common, false, run_dir);
      if (!import_path.empty()) cfg.universe_import = import_path;
      lcl::cmd_gen(cfg, run_dir, force, log);
    } else if (app.got_subcommand(pre)) {
      lcl::RunConfig cfg = resolve_config(common, true, run_dir);
      lcl::cmd_train(cfg, run_dir, "pretrain", log);
    } else if (app.got_subcommand(train)) {
      lcl::RunConfig cfg = resolve_config(common, true, run_dir);
      lcl::cmd_train(cfg, run_dir, stage, log);
    } else if (app.got_subcommand(eval)) {
      lcl::RunConfig cfg = resolve_config(common, true, run_dir);
      for (const auto& p : lcl::cmd_eval(cfg, run_dir, model_ref(lcl::RunPaths{run_dir}), protocols, log)) {
        if (log) *log << "wrote " << p.string() << "\n";
      }
    } else if (app.got_subcommand(ablate)) {
      lcl::RunConfig cfg = resolve_config(common, true, run_dir);
      auto p = lcl::cmd_ablate(cfg, run_dir, model_ref(lcl::RunPaths{run_dir}), which, log);
      if (log) *log << "wrote " << p.string() << "\n";
    } else if (app.got_subcommand(report)) {
      resolve_config(common, true, run_dir);
      for (const auto& p : lcl::cmd_report(run_dir)) {
        if (log) *log << "wrote " << p.string() << "\n";
      }
    }
  } catch (const lcl::Error& e) {
    std::cerr << "lcl: error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "lcl: error: " << e.what() << "\n";
    return static_cast<int>(lcl::ExitCode::kFailure);
  }
  return 0;
}
