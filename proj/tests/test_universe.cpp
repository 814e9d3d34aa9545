// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lcl/error.hpp"
#include "lcl/universe.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

double norm(const Embedding& v) { return std::sqrt(dot(v, v)); }

fs::path tmp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "lcl_test_universe";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default universe shape and split") {
  ClassUniverse u = create_universe(UniverseConfig{});
  CHECK(u.n_classes() == 1000);
  CHECK(u.n_train() == 900);
  CHECK(u.n_holdout() == 100);
  CHECK(u.dim() == 64);
  auto tr = u.train_ids(), ho = u.holdout_ids();
  CHECK(tr.size() + ho.size() == 1000);
  CHECK(tr.back() == 899);
  CHECK(ho.front() == 900);
  for (const auto& c : u.classes()) {
    CHECK(std::abs(norm(c.proto_img) - 1.0) < 1e-9);
    CHECK(std::abs(norm(c.proto_txt) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(u.spec(1000), LookupError);
}

TEST_CASE("universe is a pure function of its config") {
  UniverseConfig c;
  c.n_train = 20;
  c.n_holdout = 5;
  CHECK(create_universe(c) == create_universe(c));
  UniverseConfig d = c;
  d.seed = 8;
  CHECK_FALSE(create_universe(c) == create_universe(d));
}

TEST_CASE("zero noise edge cases") {
  UniverseConfig c;
  c.n_train = 6;
  c.n_holdout = 2;
  c.sigma_txt = 0.0;
  c.sigma_img = 0.0;
  ClassUniverse u = create_universe(c);
  for (const auto& s : u.classes()) CHECK(s.proto_txt == s.proto_img);
  Rng r(1);
  CHECK(draw_sample(u, 3, r) == u.spec(3).proto_img);
  CHECK(class_mean_feature(u, 3, 17, r) == u.spec(3).proto_img);
}

TEST_CASE("invalid sizes are configuration errors") {
  UniverseConfig c;
  c.n_train = 1;
  CHECK_THROWS_AS(create_universe(c), ConfigError);
  c = UniverseConfig{};
  c.dim = 1;
  CHECK_THROWS_AS(create_universe(c), ConfigError);
  c = UniverseConfig{};
  c.sigma_img = -0.1;
  CHECK_THROWS_AS(create_universe(c), ConfigError);
}

TEST_CASE("samples are unit norm and closest on average to their own prototype") {
  UniverseConfig c;
  c.n_train = 8;
  c.n_holdout = 2;
  ClassUniverse u = create_universe(c);
  Rng r(11);
  std::vector<double> mean_cos(u.n_classes(), 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto s = draw_sample(u, 0, r);
    REQUIRE(std::abs(norm(s) - 1.0) < 1e-9);
    for (ClassId k = 0; k < u.n_classes(); ++k) mean_cos[k] += cosine(s, u.spec(k).proto_img) / n;
  }
  for (ClassId k = 1; k < u.n_classes(); ++k) CHECK(mean_cos[0] > mean_cos[k]);
}

TEST_CASE("class mean feature beats a single sample") {
  ClassUniverse u = create_universe(UniverseConfig{});
  Rng r(4);
  double mean100 = 0, single = 0;
  for (int t = 0; t < 1000; ++t) {
    ClassId c = static_cast<ClassId>(t % 1000);
    mean100 += cosine(class_mean_feature(u, c, 100, r), u.spec(c).proto_img);
    single += cosine(class_mean_feature(u, c, 1, r), u.spec(c).proto_img);
  }
  CHECK(mean100 > single);
  // n = 1 is one normalized sample: same stream, same draw.
  Rng a(99), b(99);
  CHECK(class_mean_feature(u, 5, 1, a) == draw_sample(u, 5, b));
}

TEST_CASE("export/import round trip and malformed files") {
  UniverseConfig c;
  c.n_train = 2;
  c.n_holdout = 2;
  c.dim = 8;
  ClassUniverse u = create_universe(c);
  auto path = tmp_path("u4.lclu");
  export_universe(u, path);
  ClassUniverse back = import_universe(path, 2, c.seed);
  CHECK(back.n_classes() == 4);
  CHECK(back.dim() == 8);
  CHECK(back.sigma_img() == u.sigma_img());
  CHECK(back.classes() == u.classes());

  // Truncated payload.
  auto size = fs::file_size(path);
  auto trunc = tmp_path("trunc.lclu");
  fs::copy_file(path, trunc, fs::copy_options::overwrite_existing);
  fs::resize_file(trunc, size - 3);
  CHECK_THROWS_AS(import_universe(trunc, 2, 1), ParseError);
  try {
    import_universe(trunc, 2, 1);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  // Bad magic.
  auto bad = tmp_path("bad.lclu");
  {
    std::ofstream f(bad, std::ios::binary);
    f << "NOPE0000000000000000000000";
  }
  CHECK_THROWS_AS(import_universe(bad, 2, 1), ParseError);
  CHECK_THROWS(import_universe(tmp_path("missing.lclu"), 2, 1));
}

TEST_CASE("import renormalizes off-sphere rows") {
  EmbeddingTable t;
  t.dim = 2;
  t.sigma_img = 0.5;
  t.rows = {{{3.0, 4.0}, {0.0, 2.0}},
            {{1.0, 0.0}, {0.0, 1.0}},
            {{0.0, 1.0}, {1.0, 0.0}},
            {{-1.0, 0.0}, {0.0, -1.0}}};
  auto path = tmp_path("raw.lclu");
  write_embedding_table(t, path);
  ClassUniverse u = import_universe(path, 2, 3);
  CHECK(u.spec(0).proto_img[0] == doctest::Approx(0.6));
  CHECK(u.spec(0).proto_img[1] == doctest::Approx(0.8));
  CHECK(u.spec(0).proto_txt[1] == doctest::Approx(1.0));
  CHECK(u.n_train() == 2);
  CHECK(u.sigma_img() == 0.5);
  t.rows.pop_back();
  write_embedding_table(t, path);
  CHECK_THROWS_AS(import_universe(path, 1, 3), ConfigError);
}
