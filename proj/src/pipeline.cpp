// SPDX-License-Identifier: Apache-2.0
#include "lcl/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <ostream>

#include "json.hpp"
#include "lcl/error.hpp"
#include "textio.hpp"

namespace lcl {

namespace fs = std::filesystem;

fs::path resolve_run_dir(const RunConfig& cfg, const std::optional<fs::path>& explicit_dir) {
  fs::path dir = explicit_dir ? *explicit_dir : fs::path(cfg.output_dir);
  if (dir.is_absolute() || explicit_dir) return dir;
  const char* root = std::getenv("LCL_RUN_ROOT");
  return fs::path(root && *root ? root : "runs") / dir;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  fs::create_directories(run_dir);
  int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw Error("run directory " + run_dir.string() + " is locked by another writer (" +
                  path_.string() + ")");
    }
    throw Error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string provenance_line(const std::string& config_hash, std::uint64_t seed) {
  return "config_hash=" + config_hash + " seed=" + std::to_string(seed);
}

void write_meta(const fs::path& artifact, const std::string& config_hash, std::uint64_t seed,
                const std::string& format) {
  auto meta = artifact;
  meta += ".meta";
  textio::write_atomic(meta, "format=" + format + "\nconfig_hash=" + config_hash +
                                 "\nseed=" + std::to_string(seed) + "\n");
}

std::string stage_prerequisite(const std::string& stage) {
  parse_strategy(stage);
  if (stage == "pretrain") return "";
  if (stage == "2way" || stage == "mix") return "pretrain";
  return "2way";
}

ClassUniverse load_run_universe(const RunConfig& cfg, const RunPaths& paths) {
  if (!fs::exists(paths.universe())) {
    throw DependencyError("missing universe " + paths.universe().string() + " (run `lcl gen` first)");
  }
  ClassUniverse u = import_universe(paths.universe(), cfg.universe.n_holdout, cfg.universe.seed);
  if (u.n_train() != cfg.universe.n_train || u.dim() != cfg.universe.dim) {
    throw ConfigError("universe file does not match the config's sizes");
  }
  return u;
}

void check_compatible(const RunConfig& cfg, const RunPaths& paths) {
  if (!fs::exists(paths.config())) {
    throw DependencyError("missing config snapshot " + paths.config().string() +
                          " (run `lcl gen` first)");
  }
  auto snap = nlohmann::json::parse(textio::read_all(paths.config()));
  auto mine = nlohmann::json::parse(cfg.to_json());
  for (const char* section : {"universe", "neighbors", "model"}) {
    if (snap.at(section) != mine.at(section)) {
      throw ConfigError(std::string("config section '") + section +
                        "' differs from the run snapshot " + paths.config().string());
    }
  }
}

namespace {

std::vector<std::string> header(const RunConfig& cfg, std::uint64_t seed) {
  return {provenance_line(cfg.hash(), seed)};
}

std::vector<NeighborSet> load_neighbors(const RunPaths& paths, const ClassUniverse& u) {
  auto sets = read_neighbor_cache(paths.neighbors());
  std::vector<NeighborSet> by_owner(u.n_classes());
  std::vector<bool> seen(u.n_classes(), false);
  for (auto& s : sets) {
    if (s.owner >= u.n_classes()) throw ParseError("neighbor cache owner out of range");
    seen[s.owner] = true;
    by_owner[s.owner] = std::move(s);
  }
  for (ClassId c = 0; c < u.n_classes(); ++c) {
    if (!seen[c]) {
      throw DependencyError("neighbor cache has no entry for class " + std::to_string(c));
    }
  }
  return by_owner;
}

Params load_params(const fs::path& path, const ModelConfig& expect) {
  if (!fs::exists(path)) throw DependencyError("missing checkpoint " + path.string());
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.cfg == expect)) {
    throw ConfigError("checkpoint " + path.string() + " has a different model config");
  }
  return std::move(ck.params);
}

}  // namespace

void cmd_gen(const RunConfig& cfg, const fs::path& run_dir, bool force, std::ostream* log) {
  cfg.validate();
  RunPaths paths{run_dir};
  if (fs::exists(paths.config()) && !force) {
    throw Error("run directory " + run_dir.string() + " already exists (use --force)");
  }
  RunLock lock(run_dir);
  ClassUniverse u = [&] {
    if (cfg.universe_import.empty()) return create_universe(cfg.universe);
    ClassUniverse imp =
        import_universe(cfg.universe_import, cfg.universe.n_holdout, cfg.universe.seed);
    if (imp.n_train() != cfg.universe.n_train || imp.dim() != cfg.universe.dim) {
      throw ConfigError("imported universe has " + std::to_string(imp.n_classes()) +
                        " classes of dim " + std::to_string(imp.dim()) +
                        ", config expects n_train " + std::to_string(cfg.universe.n_train) +
                        " + n_holdout " + std::to_string(cfg.universe.n_holdout) + ", dim " +
                        std::to_string(cfg.universe.dim));
    }
    return imp;
  }();
  const std::string hash = cfg.hash();
  textio::write_atomic(paths.config(), cfg.to_json());
  export_universe(u, paths.universe());
  write_meta(paths.universe(), hash, cfg.universe.seed, "LCLU v1");
  if (log) *log << "universe: " << u.n_classes() << " classes, dim " << u.dim() << "\n";

  auto sets = build_all_neighbor_sets(u, cfg.neighbors, Rng(cfg.neighbor_seed).split("neighbors"));
  write_neighbor_cache(sets, paths.neighbors(), header(cfg, cfg.neighbor_seed));
  if (log) *log << "neighbors: " << sets.size() << " owners -> " << paths.neighbors() << "\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& run_dir, const std::string& stage,
               std::ostream* log) {
  cfg.validate();
  const TrainConfig& tc = cfg.stage(stage);
  RunPaths paths{run_dir};
  check_compatible(cfg, paths);
  const std::string prereq = stage_prerequisite(stage);
  if (!prereq.empty() && !fs::exists(paths.checkpoint(prereq))) {
    throw DependencyError("stage '" + stage + "' needs the '" + prereq + "' checkpoint " +
                          paths.checkpoint(prereq).string() + " (run `lcl " +
                          (prereq == "pretrain" ? std::string("pretrain") : "train " + prereq) +
                          "` first)");
  }
  RunLock lock(run_dir);
  const ModelConfig mc = cfg.model_config();
  ClassUniverse u = load_run_universe(cfg, paths);
  std::vector<NeighborSet> neighbors;
  if (stage != "pretrain") {
    if (!fs::exists(paths.neighbors())) {
      throw DependencyError("missing neighbor cache " + paths.neighbors().string());
    }
    neighbors = load_neighbors(paths, u);
  }
  Params init = prereq.empty() ? init_params(mc, cfg.model.init_seed)
                               : load_params(paths.checkpoint(prereq), mc);

  EvalHook hook;
  if (cfg.eval.snapshot_episodes > 0) {
    if (stage == "pretrain") {
      hook = [&](const Params& p) {
        return eval_zeroshot(p, u, cfg.eval.snapshot_episodes, cfg.eval.seed + 1).rows[0].accuracy;
      };
    } else {
      hook = [&](const Params& p) {
        EvalOptions opt;
        opt.protocol = cfg.protocol(cfg.eval.protocols.front());
        opt.n_episodes = cfg.eval.snapshot_episodes;
        opt.seed = cfg.eval.seed + 1;
        opt.with_oracle = false;
        return eval_nshot(p, u, cfg.eval.ablation_shots, opt).rows[0].accuracy;
      };
    }
  }
  EvalHook logged = hook;
  if (log) {
    logged = [&](const Params& p) {
      double acc = hook ? hook(p) : -1.0;
      *log << stage << ": snapshot accuracy " << acc << "\n" << std::flush;
      return acc;
    };
  }
  TrainConfig run = tc;
  run.strategy = parse_strategy(stage);
  if (log) *log << stage << ": " << run.iterations << " iterations, batch " << run.batch_size << "\n";
  TrainResult res = train_stage(init, u, neighbors.empty() ? nullptr : &neighbors, run, logged);

  const std::string hash = cfg.hash();
  save_checkpoint(res.params, &res.optimizer, paths.checkpoint(stage));
  write_meta(paths.checkpoint(stage), hash, run.seed, "LCLC v1");
  write_metrics_csv(res.log, paths.metrics(stage), header(cfg, run.seed));
  write_interval_csv(res.log, paths.intervals(stage), header(cfg, run.seed));
  nlohmann::json summary = {{"stage", stage},
                            {"config_hash", hash},
                            {"seed", run.seed},
                            {"iterations", run.iterations},
                            {"final_loss", res.log.final_loss},
                            {"wall_seconds", res.log.wall_seconds}};
  if (!res.log.intervals.empty() && res.log.intervals.back().eval_accuracy >= 0.0) {
    summary["final_snapshot_accuracy"] = res.log.intervals.back().eval_accuracy;
  }
  textio::write_atomic(paths.stage_summary(stage), summary.dump(2) + "\n");
  if (log) {
    *log << stage << ": final loss " << res.log.final_loss << ", " << res.log.wall_seconds
         << " s -> " << paths.checkpoint(stage) << "\n";
  }
}

ModelRef stage_model(const RunPaths& paths, const std::string& stage) {
  parse_strategy(stage);
  return ModelRef{stage, paths.checkpoint(stage)};
}

std::vector<fs::path> cmd_eval(const RunConfig& cfg, const fs::path& run_dir, const ModelRef& model,
                               const std::vector<std::string>& protocols, std::ostream* log) {
  cfg.validate();
  RunPaths paths{run_dir};
  check_compatible(cfg, paths);
  RunLock lock(run_dir);
  ClassUniverse u = load_run_universe(cfg, paths);
  Params p = load_params(model.checkpoint, cfg.model_config());
  std::vector<fs::path> written;
  for (const auto& name : protocols.empty() ? cfg.eval.protocols : protocols) {
    EvalOptions opt;
    opt.protocol = cfg.protocol(name);
    opt.n_episodes = cfg.eval.n_episodes;
    opt.seed = cfg.eval.seed;
    EvalReport rep = shot_sweep(p, u, cfg.eval.shot_list, opt);
    auto path = paths.report(model.label, name);
    write_report_csv(rep, path, header(cfg, cfg.eval.seed));
    written.push_back(path);
    if (log) {
      for (const auto& r : rep.rows) {
        *log << model.label << " " << r.protocol << " " << r.shots << "-shot " << r.condition
             << ": " << r.accuracy << "\n";
      }
    }
  }
  EvalReport zs = eval_zeroshot(p, u, cfg.eval.zeroshot_episodes, cfg.eval.seed);
  auto path = paths.report(model.label, "zeroshot");
  write_report_csv(zs, path, header(cfg, cfg.eval.seed));
  written.push_back(path);
  if (log) *log << model.label << " zero-shot: " << zs.rows[0].accuracy << "\n";
  return written;
}

fs::path cmd_ablate(const RunConfig& cfg, const fs::path& run_dir, const ModelRef& model,
                    const std::string& which, std::ostream* log) {
  cfg.validate();
  if (which != "false-rate" && which != "position" && which != "shots") {
    throw ConfigError("unknown ablation '" + which + "' (expected false-rate, position or shots)");
  }
  RunPaths paths{run_dir};
  check_compatible(cfg, paths);
  RunLock lock(run_dir);
  ClassUniverse u = load_run_universe(cfg, paths);
  Params p = load_params(model.checkpoint, cfg.model_config());
  EvalOptions opt;
  const std::string proto = cfg.eval.protocols.front();
  opt.protocol = cfg.protocol(proto);
  opt.n_episodes = cfg.eval.n_episodes;
  opt.seed = cfg.eval.seed;
  EvalReport rep;
  fs::path path;
  if (which == "false-rate") {
    rep = ablate_false_rate(p, u, cfg.eval.ablation_shots, cfg.eval.false_rates, opt);
    path = paths.report(model.label, "false_rate");
  } else if (which == "position") {
    rep = ablate_position(p, u, cfg.eval.ablation_shots, opt);
    path = paths.report(model.label, "position");
  } else {
    rep = shot_sweep(p, u, cfg.eval.shot_list, opt);
    path = paths.report(model.label, proto);
  }
  write_report_csv(rep, path, header(cfg, cfg.eval.seed));
  if (log) {
    for (const auto& r : rep.rows) {
      *log << model.label << " " << r.condition << " " << r.shots << "-shot: " << r.accuracy << "\n";
    }
  }
  return path;
}

}  // namespace lcl
