// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "lcl/error.hpp"
#include "lcl/train.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

struct World {
  ClassUniverse u;
  std::vector<NeighborSet> neighbors;
  ModelConfig model;
};

World make_world() {
  UniverseConfig uc;
  uc.n_train = 24;
  uc.n_holdout = 6;
  uc.dim = 8;
  World w{create_universe(uc), {}, {}};
  NeighborConfig nc;
  nc.n = 5;
  nc.feature_samples = 5;
  w.neighbors = build_all_neighbor_sets(w.u, nc, Rng(2));
  w.model.d_model = 16;
  w.model.n_layers = 1;
  w.model.n_heads = 2;
  w.model.d_ff = 32;
  w.model.max_seq = 17;
  w.model.n_episodic = 4;
  w.model.vocab = 4 + 24;
  w.model.dim_in = 8;
  return w;
}

TrainConfig small(Strategy s) {
  TrainConfig c;
  c.strategy = s;
  c.iterations = 30;
  c.batch_size = 8;
  c.warmup = 5;
  c.shots = ShotStrategy::fixed(4);
  c.log_every = 10;
  return c;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("strategy names") {
  for (Strategy s : {Strategy::kPretrain, Strategy::kTwoWay, Strategy::kTwoWayRandom,
                     Strategy::kTwoWayWeight, Strategy::kMix}) {
    CHECK(parse_strategy(strategy_name(s)) == s);
  }
  CHECK(strategy_name(Strategy::kTwoWayWeight) == "2way-weight");
  CHECK_THROWS_AS(parse_strategy("3way"), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.mix_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.lr = 1e-3;
  c.iterations = 100;
  c.warmup = 10;
  CHECK(learning_rate(c, 0) == doctest::Approx(1e-4));
  double t = 9.0 / 100.0;
  CHECK(learning_rate(c, 9) == doctest::Approx(1e-3 * 0.5 * (1 + std::cos(std::numbers::pi * t))));
  CHECK(learning_rate(c, 50) == doctest::Approx(0.5e-3));
  for (int i = 10; i < 99; ++i) CHECK(learning_rate(c, i + 1) <= learning_rate(c, i));
  c.lr_decay = false;
  c.warmup = 0;
  CHECK(learning_rate(c, 77) == 1e-3);
}

TEST_CASE("batch composition") {
  World w = make_world();
  Vocabulary vocab{w.model.n_episodic, w.u.n_train()};

  SUBCASE("pretrain is all original-task episodes") {
    std::vector<EpisodeRecord> rec;
    auto b = make_batch(w.u, nullptr, vocab, w.model, small(Strategy::kPretrain), 0, &rec);
    REQUIRE(b.size() == 8);
    REQUIRE(rec.size() == 8);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(b[i].size() == 1);
      CHECK_FALSE(rec[i].lcl);
      CHECK(b[i].targets[0].symbol >= 4);
    }
  }
  SUBCASE("2-way episodes use episodic symbols and ranked negatives") {
    std::vector<EpisodeRecord> rec;
    auto c = small(Strategy::kTwoWay);
    auto b = make_batch(w.u, &w.neighbors, vocab, w.model, c, 3, &rec);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(b[i].size() == 17);
      CHECK(b[i].targets.size() == 1);
      CHECK(b[i].targets[0].symbol < 4);
      CHECK(rec[i].lcl);
      CHECK(rec[i].shots == 4);
      CHECK(rec[i].neg_rank >= 1);
      CHECK(rec[i].neg_rank <= 5);
    }
    CHECK(make_batch(w.u, &w.neighbors, vocab, w.model, c, 3) == b);
    CHECK_FALSE(make_batch(w.u, &w.neighbors, vocab, w.model, c, 4) == b);
    CHECK_THROWS_AS(make_batch(w.u, nullptr, vocab, w.model, c, 0), DependencyError);
  }
  SUBCASE("mix splits by ratio") {
    auto c = small(Strategy::kMix);
    c.mix_ratio = 0.25;
    std::vector<EpisodeRecord> rec;
    make_batch(w.u, &w.neighbors, vocab, w.model, c, 0, &rec);
    int orig = 0;
    for (const auto& r : rec) orig += !r.lcl;
    CHECK(orig == 2);
  }
}

TEST_CASE("training reduces loss and replays exactly") {
  World w = make_world();
  Params init = init_params(w.model, 1);
  auto c = small(Strategy::kPretrain);
  c.iterations = 60;
  c.lr = 3e-3;
  int hook_calls = 0;
  TrainResult a = pretrain_zeroshot(init, w.u, c, [&](const Params&) {
    ++hook_calls;
    return 0.5;
  });
  CHECK(hook_calls == 6);
  REQUIRE(a.log.intervals.size() == 6);
  CHECK(a.log.intervals.back().mean_loss < a.log.intervals.front().mean_loss);
  CHECK(a.log.intervals.back().eval_accuracy == 0.5);
  CHECK(a.log.episodes.size() == 60u * 8u);
  CHECK(a.optimizer.step == 60);

  TrainResult b = pretrain_zeroshot(init, w.u, c);
  CHECK(a.params == b.params);
  CHECK(a.optimizer == b.optimizer);

  auto rc = small(Strategy::kTwoWay);
  rc.shots = ShotStrategy::uniform(2, 4);
  auto r = finetune_random(a.params, w.u, w.neighbors, rc);
  int lo = 100, hi = 0;
  for (const auto& e : r.log.episodes) {
    lo = std::min(lo, e.shots);
    hi = std::max(hi, e.shots);
  }
  CHECK(lo == 2);
  CHECK(hi == 4);
  // A fixed-shot config falls back to the full 2-16 range.
  CHECK_THROWS_AS(finetune_random(a.params, w.u, w.neighbors, small(Strategy::kTwoWay)), ConfigError);
}

TEST_CASE("non-finite parameters are a numerical failure") {
  World w = make_world();
  Params p = init_params(w.model, 1);
  p.b_out(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(pretrain_zeroshot(p, w.u, small(Strategy::kPretrain)), NumericalError);
}

TEST_CASE("metrics files") {
  World w = make_world();
  auto c = small(Strategy::kMix);
  c.iterations = 3;
  c.log_every = 2;
  TrainResult r = train_mix(init_params(w.model, 1), w.u, w.neighbors, c);
  auto dir = fs::temp_directory_path() / "lcl_test_train";
  write_metrics_csv(r.log, dir / "m.csv", {"config_hash=x seed=1"});
  write_interval_csv(r.log, dir / "i.csv");
  auto m = read_lines(dir / "m.csv");
  REQUIRE(m.size() == 2 + 3 * 8);
  CHECK(m[0] == "# config_hash=x seed=1");
  CHECK(m[1] == "iteration,loss,lr,shots,neg_rank,task_kind");
  CHECK(m[2].rfind("0,", 0) == 0);
  CHECK(m[2].find(",original") != std::string::npos);
  CHECK(m.back().find(",lcl") != std::string::npos);
  auto i = read_lines(dir / "i.csv");
  REQUIRE(i.size() == 3);
  CHECK(i[0] == "iteration,mean_loss,eval_accuracy");
}
