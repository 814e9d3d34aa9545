// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lcl/error.hpp"
#include "lcl/neighbors.hpp"
#include "stats.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

Embedding unit(Rng& r, std::size_t d) {
  Embedding v(d);
  for (auto& x : v) x = r.normal();
  normalize(v);
  return v;
}

ClassUniverse small_universe(std::uint32_t n_train = 30, std::uint32_t n_holdout = 10) {
  UniverseConfig c;
  c.n_train = n_train;
  c.n_holdout = n_holdout;
  c.dim = 16;
  return create_universe(c);
}

}  // namespace

TEST_CASE("class similarity basics") {
  Rng r(1);
  SimilarityWeights w;
  Embedding v = unit(r, 8);
  ClassFeatures a{v, v};
  CHECK(class_similarity(a, a, w) == doctest::Approx(1.0).epsilon(1e-12));
  // Distinct views: the cross term is their cosine.
  ClassFeatures b{unit(r, 8), unit(r, 8)};
  double cross = dot(b.proto_img, b.proto_txt);
  CHECK(class_similarity(b, b, w) == doctest::Approx(w.w_ii + w.w_it * cross + w.w_tt).epsilon(1e-12));

  // Orthogonal views, image-only weights.
  ClassFeatures x{{1, 0, 0, 0}, {0, 1, 0, 0}};
  ClassFeatures y{{0.6, 0, 0.8, 0}, {0, 0, 0, 1}};
  CHECK(class_similarity(x, y, SimilarityWeights{1, 0, 0}) == 0.6);

  for (int i = 0; i < 100; ++i) {
    ClassFeatures p{unit(r, 8), unit(r, 8)}, q{unit(r, 8), unit(r, 8)};
    double s = class_similarity(p, q, w);
    CHECK(std::abs(s - class_similarity(q, p, w)) < 1e-12);
    CHECK(s <= 1.0 + 1e-12);
    CHECK(s >= -1.0 - 1e-12);
  }
  CHECK_THROWS_AS((SimilarityWeights{0.5, 0.5, 0.5}.validate()), ConfigError);
  CHECK_THROWS_AS((SimilarityWeights{1.2, -0.2, 0.0}.validate()), ConfigError);
}

TEST_CASE("interval partition arithmetic") {
  auto s = interval_sizes(899, 100);
  std::vector<std::size_t> expect(99, 9);
  expect.push_back(8);
  CHECK(s == expect);
  for (std::size_t c : {1u, 7u, 50u, 99u, 1000u}) {
    for (std::size_t n : {1u, 3u, 7u}) {
      if (n > c) continue;
      auto v = interval_sizes(c, n);
      std::size_t total = 0;
      for (auto x : v) total += x;
      CHECK(total == c);
      CHECK(*std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()) <= 1);
      CHECK(std::is_sorted(v.rbegin(), v.rend()));
    }
  }
}

TEST_CASE("neighbor set construction") {
  ClassUniverse u = small_universe();
  Rng fr(3);
  auto features = compute_class_features(u, 20, fr);
  auto train = u.train_ids();
  SimilarityWeights w;

  SUBCASE("N equal to candidate count gives the sorted list") {
    Rng r(1);
    auto ns = build_neighbor_set(features, 0, train.size() - 1, w, r, train);
    auto ranked = rank_candidates(features, 0, train, w);
    CHECK(ns.members == ranked);
    for (std::size_t i = 1; i < ns.size(); ++i) CHECK(ns.similarity[i - 1] >= ns.similarity[i]);
  }
  SUBCASE("N = 1 draws uniformly from all candidates") {
    std::vector<std::size_t> counts(u.n_classes(), 0);
    Rng r(2);
    for (int i = 0; i < 29000; ++i) {
      auto ns = build_neighbor_set(features, 0, 1, w, r, train);
      REQUIRE(ns.size() == 1);
      ++counts[ns.members[0]];
    }
    CHECK(counts[0] == 0);
    std::vector<std::size_t> obs(counts.begin() + 1, counts.begin() + 30);
    CHECK(test::chi_square_p(obs, std::vector<double>(29, 1.0 / 29)) > 0.01);
  }
  SUBCASE("members are distinct, exclude the owner and follow interval order") {
    Rng r(4);
    auto ns = build_neighbor_set(features, 5, 7, w, r, train);
    std::set<ClassId> uniq(ns.members.begin(), ns.members.end());
    CHECK(uniq.size() == 7);
    CHECK(uniq.count(5) == 0);
    CHECK(ns.similarity.front() >= ns.similarity.back());
  }
  SUBCASE("too few candidates") {
    Rng r(5);
    CHECK_THROWS_AS(build_neighbor_set(features, 0, 30, w, r, train), ConfigError);
  }
}

TEST_CASE("hard-negative law") {
  double total = 0;
  for (std::size_t j = 1; j <= 100; ++j) total += hard_negative_probability(100, j);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hard_negative_probability(100, 1) == doctest::Approx(100.0 / 5050.0).epsilon(1e-15));
  CHECK(hard_negative_probability(100, 100) == doctest::Approx(1.0 / 5050.0).epsilon(1e-15));
  CHECK(hard_negative_probability(100, 1) == doctest::Approx(0.0198020).epsilon(1e-6));

  Rng r(8);
  std::vector<std::size_t> counts(100, 0);
  for (int i = 0; i < 100000; ++i) {
    auto j = sample_hard_negative_rank(100, r);
    REQUIRE(j >= 1);
    REQUIRE(j <= 100);
    ++counts[j - 1];
  }
  std::vector<double> p(100);
  for (int j = 1; j <= 100; ++j) p[j - 1] = (101.0 - j) / 5050.0;
  CHECK(test::chi_square_p(counts, p) > 0.01);

  NeighborSet empty;
  CHECK_THROWS_AS(sample_hard_negative(empty, r), ConfigError);
}

TEST_CASE("all neighbor sets and cache round trip") {
  ClassUniverse u = small_universe(40, 12);
  NeighborConfig cfg;
  cfg.n = 10;
  cfg.feature_samples = 10;
  auto sets = build_all_neighbor_sets(u, cfg, Rng(3));
  REQUIRE(sets.size() == u.n_classes());
  for (const auto& s : sets) {
    CHECK(s.size() == 10);
    for (ClassId m : s.members) CHECK(u.is_train(m) == u.is_train(s.owner));
  }
  CHECK(sets == build_all_neighbor_sets(u, cfg, Rng(3)));

  auto dir = fs::temp_directory_path() / "lcl_test_neighbors";
  fs::create_directories(dir);
  write_neighbor_cache(sets, dir / "a.csv", {"hello"});
  write_neighbor_cache(sets, dir / "b.csv", {"hello"});
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(sa.rfind("# hello\nowner_id,rank,member_id,similarity\n", 0) == 0);

  auto back = read_neighbor_cache(dir / "a.csv");
  REQUIRE(back.size() == sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    CHECK(back[i].owner == sets[i].owner);
    CHECK(back[i].members == sets[i].members);
    for (std::size_t k = 0; k < sets[i].size(); ++k) {
      CHECK(std::abs(back[i].similarity[k] - sets[i].similarity[k]) <= 5e-7);
    }
  }
  CHECK_THROWS_AS(read_neighbor_cache(dir / "missing.csv"), DependencyError);
  {
    std::ofstream f(dir / "bad.csv");
    f << "owner_id,rank,member_id,similarity\n1,2,x,0.5\n";
  }
  CHECK_THROWS_AS(read_neighbor_cache(dir / "bad.csv"), ParseError);
}
