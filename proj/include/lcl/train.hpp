// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lcl/episodes.hpp"
#include "lcl/neighbors.hpp"
#include "lcl/net.hpp"
#include "lcl/universe.hpp"

namespace lcl {

enum class Strategy { kPretrain, kTwoWay, kTwoWayRandom, kTwoWayWeight, kMix };

/// Stage names as used on the command line and in the run directory.
std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::kTwoWay;
  int iterations = 1500;
  int batch_size = 32;
  double lr = 1e-3;
  /// Cosine decay to zero over `iterations`.
  bool lr_decay = true;
  /// Linear warmup steps before the cosine schedule.
  int warmup = 100;
  std::uint64_t seed = 1;
  ShotStrategy shots = ShotStrategy::fixed(16);
  /// Fraction of each batch drawn from the original (zero-shot) task; used by kMix.
  double mix_ratio = 0.5;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Also supervise each support embedding position with its label.
  bool supervise_support = false;
  /// Interval for MetricsLog snapshots.
  int log_every = 100;

  void validate() const;
};

/// Per-episode training record.
struct EpisodeRecord {
  int iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  int shots = 0;     // 0 for original-task episodes
  int neg_rank = 0;  // 1-based hard-negative rank, 0 for original-task episodes
  bool lcl = true;   // false: original (zero-shot) task
};

struct IntervalRecord {
  int iteration = 0;
  double mean_loss = 0.0;
  /// Snapshot from the eval callback, negative when none was run.
  double eval_accuracy = -1.0;
  double wall_seconds = 0.0;
};

struct MetricsLog {
  std::vector<EpisodeRecord> episodes;
  std::vector<IntervalRecord> intervals;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Params params;
  OptimizerState optimizer;
  MetricsLog log;
};

/// Snapshot evaluator invoked every `log_every` iterations and at the end.
using EvalHook = std::function<double(const Params&)>;

/// Learning rate at `iteration` (0-based).
double learning_rate(const TrainConfig& cfg, int iteration);

/// Assembles the batch for `iteration`. Pure in (universe, neighbors, cfg, iteration).
std::vector<TokenSeq> make_batch(const ClassUniverse& u, const std::vector<NeighborSet>* neighbors,
                                 const Vocabulary& vocab, const ModelConfig& model,
                                 const TrainConfig& cfg, int iteration,
                                 std::vector<EpisodeRecord>* records = nullptr);

/// Runs one training stage from `init` with a fresh optimizer state. Throws
/// NumericalError on a non-finite loss.
TrainResult train_stage(const Params& init, const ClassUniverse& u,
                        const std::vector<NeighborSet>* neighbors, const TrainConfig& cfg,
                        const EvalHook& hook = {});

/// Original-task training: single-query episodes over train classes mapped to
/// their global symbols.
TrainResult pretrain_zeroshot(const Params& fresh, const ClassUniverse& u, TrainConfig cfg,
                              const EvalHook& hook = {});
/// Fixed-shot 2-way link-context training with hard negatives.
TrainResult train_2way(const Params& base, const ClassUniverse& u,
                       const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                       const EvalHook& hook = {});
/// Continues from a 2-way checkpoint with shots uniform on [2, 16].
TrainResult finetune_random(const Params& ckpt, const ClassUniverse& u,
                            const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                            const EvalHook& hook = {});
/// Continues from a 2-way checkpoint with shots weighted by e^j.
TrainResult finetune_weighted(const Params& ckpt, const ClassUniverse& u,
                              const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                              const EvalHook& hook = {});
/// From the zero-shot base, each batch mixes original-task and 2-way episodes.
TrainResult train_mix(const Params& base, const ClassUniverse& u,
                      const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                      const EvalHook& hook = {});

/// Metrics CSV: iteration,loss,lr,shots,neg_rank,task_kind (one row per episode).
void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path,
                       const std::vector<std::string>& header_comment = {});
/// Interval CSV: iteration,mean_loss,eval_accuracy.
void write_interval_csv(const MetricsLog& log, const std::filesystem::path& path,
                        const std::vector<std::string>& header_comment = {});

}  // namespace lcl
