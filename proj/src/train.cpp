// SPDX-License-Identifier: Apache-2.0
#include "lcl/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lcl/error.hpp"
#include "textio.hpp"

namespace lcl {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kPretrain:
      return "pretrain";
    case Strategy::kTwoWay:
      return "2way";
    case Strategy::kTwoWayRandom:
      return "2way-random";
    case Strategy::kTwoWayWeight:
      return "2way-weight";
    case Strategy::kMix:
      return "mix";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::kPretrain, Strategy::kTwoWay, Strategy::kTwoWayRandom,
                 Strategy::kTwoWayWeight, Strategy::kMix}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown training strategy '" + name +
                    "' (expected pretrain, 2way, 2way-random, 2way-weight or mix)");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix_ratio must be in [0, 1]");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (strategy != Strategy::kPretrain) {
    shots.validate();
    if (shots.lo < 1) throw ConfigError("2-way training needs at least one shot");
  }
}

double learning_rate(const TrainConfig& cfg, int iteration) {
  double lr = cfg.lr;
  if (cfg.warmup > 0 && iteration < cfg.warmup) {
    lr *= static_cast<double>(iteration + 1) / static_cast<double>(cfg.warmup);
  }
  if (cfg.lr_decay && cfg.iterations > 0) {
    double t = static_cast<double>(iteration) / static_cast<double>(cfg.iterations);
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  return lr;
}

namespace {

Vocabulary vocab_for(const ModelConfig& m) {
  return Vocabulary{m.n_episodic, m.vocab - m.n_episodic};
}

void check_model_fits(const ClassUniverse& u, const ModelConfig& m) {
  if (m.dim_in != u.dim()) {
    throw ConfigError("model dim_in " + std::to_string(m.dim_in) + " != universe dim " +
                      std::to_string(u.dim()));
  }
  if (m.vocab - m.n_episodic < u.n_train()) {
    throw ConfigError("model vocabulary has no global symbol for every train class");
  }
}

}  // namespace

std::vector<TokenSeq> make_batch(const ClassUniverse& u, const std::vector<NeighborSet>* neighbors,
                                 const Vocabulary& vocab, const ModelConfig& model,
                                 const TrainConfig& cfg, int iteration,
                                 std::vector<EpisodeRecord>* records) {
  const auto train = u.train_ids();
  if (train.size() < 2) throw ConfigError("training needs at least two train classes");
  const bool needs_neighbors = cfg.strategy != Strategy::kPretrain;
  if (needs_neighbors && (neighbors == nullptr || neighbors->size() < u.n_classes())) {
    throw DependencyError("2-way training needs a neighbor set for every class");
  }

  std::size_t n_orig = 0;
  if (cfg.strategy == Strategy::kPretrain) {
    n_orig = static_cast<std::size_t>(cfg.batch_size);
  } else if (cfg.strategy == Strategy::kMix) {
    n_orig = static_cast<std::size_t>(std::lround(cfg.mix_ratio * cfg.batch_size));
  }

  const Rng it_rng = Rng(cfg.seed).split("train").split(static_cast<std::uint64_t>(iteration));
  const double lr = learning_rate(cfg, iteration);
  std::vector<TokenSeq> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.batch_size); ++i) {
    Rng r = it_rng.split(i);
    EpisodeRecord rec;
    rec.iteration = iteration;
    rec.lr = lr;
    Episode e;
    if (i < n_orig) {
      ClassId cls = train[r.below(train.size())];
      e = build_zeroshot_episode(u, cls, vocab, r);
      rec.lcl = false;
    } else {
      ClassId pos = train[r.below(train.size())];
      const NeighborSet& ns = (*neighbors)[pos];
      if (ns.size() == 0) throw DependencyError("class " + std::to_string(pos) + " has no neighbors");
      std::size_t rank = sample_hard_negative_rank(ns.size(), r);
      ClassId neg = ns.members[rank - 1];
      int shots = sample_shot_count(cfg.shots, r);
      LabelBinding b = bind_labels(pos, neg, model.n_episodic, r);
      e = build_2way_episode(u, pos, neg, shots, b, r);
      rec.shots = shots;
      rec.neg_rank = static_cast<int>(rank);
    }
    batch.push_back(episode_to_tokens(e, model.max_seq, cfg.supervise_support && rec.lcl));
    if (records) records->push_back(rec);
  }
  return batch;
}

TrainResult train_stage(const Params& init, const ClassUniverse& u,
                        const std::vector<NeighborSet>* neighbors, const TrainConfig& cfg,
                        const EvalHook& hook) {
  cfg.validate();
  init.cfg.validate();
  check_model_fits(u, init.cfg);
  const Vocabulary vocab = vocab_for(init.cfg);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  TrainResult out{init, OptimizerState::zeros(init.cfg), {}};
  out.log.episodes.reserve(static_cast<std::size_t>(cfg.iterations) *
                           static_cast<std::size_t>(cfg.batch_size));
  Params grad;
  double interval_sum = 0.0;
  int interval_n = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<EpisodeRecord> recs;
    auto batch = make_batch(u, neighbors, vocab, init.cfg, cfg, it, &recs);
    LossResult res = backward(out.params, batch, grad);
    if (!std::isfinite(res.loss)) {
      std::ostringstream msg;
      msg << strategy_name(cfg.strategy) << ": non-finite loss at iteration " << it << " (lr "
          << recs.front().lr << ")";
      throw NumericalError(msg.str());
    }
    if (cfg.grad_clip > 0.0) {
      double norm = clip_grad_norm(grad, cfg.grad_clip);
      if (!std::isfinite(norm)) {
        throw NumericalError(strategy_name(cfg.strategy) + ": non-finite gradient at iteration " +
                             std::to_string(it));
      }
    }
    adam_step(out.params, grad, out.optimizer, recs.front().lr);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].loss = res.per_sequence[i];
      out.log.episodes.push_back(recs[i]);
    }
    interval_sum += res.loss;
    ++interval_n;
    out.log.final_loss = res.loss;
    if ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      IntervalRecord r;
      r.iteration = it + 1;
      r.mean_loss = interval_sum / interval_n;
      if (hook) r.eval_accuracy = hook(out.params);
      r.wall_seconds = elapsed();
      out.log.intervals.push_back(r);
      interval_sum = 0.0;
      interval_n = 0;
    }
  }
  if (!out.params.all_finite()) {
    throw NumericalError(strategy_name(cfg.strategy) + ": parameters became non-finite");
  }
  out.log.wall_seconds = elapsed();
  return out;
}

TrainResult pretrain_zeroshot(const Params& fresh, const ClassUniverse& u, TrainConfig cfg,
                              const EvalHook& hook) {
  cfg.strategy = Strategy::kPretrain;
  return train_stage(fresh, u, nullptr, cfg, hook);
}

TrainResult train_2way(const Params& base, const ClassUniverse& u,
                       const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                       const EvalHook& hook) {
  cfg.strategy = Strategy::kTwoWay;
  return train_stage(base, u, &neighbors, cfg, hook);
}

TrainResult finetune_random(const Params& ckpt, const ClassUniverse& u,
                            const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                            const EvalHook& hook) {
  cfg.strategy = Strategy::kTwoWayRandom;
  if (cfg.shots.kind != ShotStrategy::Kind::kUniform) cfg.shots = ShotStrategy::uniform(2, 16);
  return train_stage(ckpt, u, &neighbors, cfg, hook);
}

TrainResult finetune_weighted(const Params& ckpt, const ClassUniverse& u,
                              const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                              const EvalHook& hook) {
  cfg.strategy = Strategy::kTwoWayWeight;
  if (cfg.shots.kind != ShotStrategy::Kind::kWeighted) cfg.shots = ShotStrategy::weighted(2, 16);
  return train_stage(ckpt, u, &neighbors, cfg, hook);
}

TrainResult train_mix(const Params& base, const ClassUniverse& u,
                      const std::vector<NeighborSet>& neighbors, TrainConfig cfg,
                      const EvalHook& hook) {
  cfg.strategy = Strategy::kMix;
  return train_stage(base, u, &neighbors, cfg, hook);
}

using textio::fmt;

void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path,
                       const std::vector<std::string>& header_comment) {
  std::string out;
  out.reserve(log.episodes.size() * 40 + 128);
  for (const auto& line : header_comment) out += "# " + line + "\n";
  out += "iteration,loss,lr,shots,neg_rank,task_kind\n";
  for (const auto& r : log.episodes) {
    out += std::to_string(r.iteration);
    out += ',' + fmt("%.6f", r.loss);
    out += ',' + fmt("%.6e", r.lr);
    out += ',' + std::to_string(r.shots);
    out += ',' + std::to_string(r.neg_rank);
    out += r.lcl ? ",lcl\n" : ",original\n";
  }
  textio::write_atomic(path, out);
}

void write_interval_csv(const MetricsLog& log, const std::filesystem::path& path,
                        const std::vector<std::string>& header_comment) {
  std::string out;
  for (const auto& line : header_comment) out += "# " + line + "\n";
  out += "iteration,mean_loss,eval_accuracy\n";
  for (const auto& r : log.intervals) {
    out += std::to_string(r.iteration) + ',' + fmt("%.6f", r.mean_loss) + ',' +
           (r.eval_accuracy < 0.0 ? std::string() : fmt("%.4f", r.eval_accuracy)) + '\n';
  }
  textio::write_atomic(path, out);
}

}  // namespace lcl
