// SPDX-License-Identifier: Apache-2.0
#include "lcl/universe.hpp"

#include <cmath>
#include <string>

#include "binio.hpp"
#include "lcl/error.hpp"

namespace lcl {
namespace {

constexpr std::string_view kUniverseMagic = "LCLU";
constexpr std::uint32_t kUniverseVersion = 1;

// Rows already unit norm to this tolerance are kept bit-exact on import.
constexpr double kRenormTolerance = 1e-12;

Embedding gaussian_direction(std::uint32_t dim, Rng& rng) {
  Embedding v(dim);
  for (auto& x : v) x = rng.normal();
  normalize(v);
  return v;
}

// normalize(base + sigma * eta), eta ~ N(0, I/dim). sigma == 0 returns base.
Embedding perturb(const Embedding& base, double sigma, Rng& rng) {
  if (sigma == 0.0) return base;
  Embedding v(base);
  double scale = sigma / std::sqrt(static_cast<double>(base.size()));
  for (auto& x : v) x += scale * rng.normal();
  normalize(v);
  return v;
}

}  // namespace

void normalize(std::span<double> v) {
  double n = std::sqrt(dot(v, v));
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("cannot normalize a zero or non-finite vector");
  for (auto& x : v) x /= n;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

ClassUniverse::ClassUniverse(std::uint32_t dim, std::vector<ClassSpec> classes, double sigma_img,
                             std::uint64_t seed, std::uint32_t n_train)
    : dim_(dim), classes_(std::move(classes)), sigma_img_(sigma_img), seed_(seed), n_train_(n_train) {
  if (n_train_ > classes_.size()) throw ConfigError("n_train exceeds class count");
  for (const auto& c : classes_) {
    if (c.proto_img.size() != dim_ || c.proto_txt.size() != dim_) {
      throw ConfigError("prototype dimension does not match universe dim");
    }
  }
}

const ClassSpec& ClassUniverse::spec(ClassId id) const {
  if (id >= classes_.size()) throw LookupError("unknown class id " + std::to_string(id));
  return classes_[id];
}

std::vector<ClassId> ClassUniverse::train_ids() const {
  std::vector<ClassId> ids(n_train_);
  for (ClassId i = 0; i < n_train_; ++i) ids[i] = i;
  return ids;
}

std::vector<ClassId> ClassUniverse::holdout_ids() const {
  std::vector<ClassId> ids;
  ids.reserve(n_holdout());
  for (ClassId i = n_train_; i < n_classes(); ++i) ids.push_back(i);
  return ids;
}

ClassUniverse create_universe(const UniverseConfig& cfg) {
  if (cfg.n_train < 2) throw ConfigError("n_train must be >= 2");
  if (cfg.n_holdout < 2) throw ConfigError("n_holdout must be >= 2");
  if (cfg.dim < 2) throw ConfigError("dim must be >= 2");
  if (!(cfg.sigma_img >= 0.0) || !(cfg.sigma_txt >= 0.0)) {
    throw ConfigError("sigma_img and sigma_txt must be >= 0");
  }
  Rng root = Rng(cfg.seed).split("universe");
  std::uint32_t n = cfg.n_train + cfg.n_holdout;
  std::vector<ClassSpec> classes(n);
  for (ClassId c = 0; c < n; ++c) {
    Rng rng = root.split(c);
    classes[c].proto_img = gaussian_direction(cfg.dim, rng);
    Rng txt = rng.split("txt");
    classes[c].proto_txt = perturb(classes[c].proto_img, cfg.sigma_txt, txt);
  }
  return ClassUniverse(cfg.dim, std::move(classes), cfg.sigma_img, cfg.seed, cfg.n_train);
}

Embedding draw_sample(const ClassUniverse& u, ClassId id, Rng& rng) {
  return perturb(u.spec(id).proto_img, u.sigma_img(), rng);
}

Embedding class_mean_feature(const ClassUniverse& u, ClassId id, int n_samples, Rng& rng) {
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  const auto& spec = u.spec(id);
  if (u.sigma_img() == 0.0) return spec.proto_img;
  Embedding mean(u.dim(), 0.0);
  for (int i = 0; i < n_samples; ++i) {
    Embedding s = draw_sample(u, id, rng);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += s[k];
  }
  normalize(mean);
  return mean;
}

void write_embedding_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kUniverseMagic);
  w.u32(kUniverseVersion);
  w.u32(static_cast<std::uint32_t>(table.rows.size()));
  w.u32(table.dim);
  w.f64(table.sigma_img);
  for (const auto& row : table.rows) {
    for (double x : row.proto_img) w.f64(x);
    for (double x : row.proto_txt) w.f64(x);
  }
  w.save(path);
}

EmbeddingTable read_embedding_table(const std::filesystem::path& path) {
  auto r = binio::Reader::from_file(path);
  if (r.bytes(4, "magic") != kUniverseMagic) {
    r.fail("bad magic, expected \"LCLU\"");
  }
  std::uint32_t version = r.u32("version");
  if (version != kUniverseVersion) r.fail("unsupported version " + std::to_string(version));
  EmbeddingTable t;
  std::uint32_t n = r.u32("n_classes");
  t.dim = r.u32("dim");
  t.sigma_img = r.f64("sigma_img");
  if (t.dim == 0) r.fail("dim must be positive");
  std::size_t need = static_cast<std::size_t>(n) * t.dim * 2 * 8;
  if (r.remaining() != need) {
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
           std::to_string(need));
  }
  t.rows.resize(n);
  for (auto& row : t.rows) {
    row.proto_img.resize(t.dim);
    row.proto_txt.resize(t.dim);
    for (auto& x : row.proto_img) x = r.f64("proto_img");
    for (auto& x : row.proto_txt) x = r.f64("proto_txt");
  }
  return t;
}

void export_universe(const ClassUniverse& u, const std::filesystem::path& path) {
  write_embedding_table({u.dim(), u.sigma_img(), u.classes()}, path);
}

ClassUniverse import_universe(const std::filesystem::path& path, std::uint32_t n_holdout,
                              std::uint64_t seed) {
  EmbeddingTable t = read_embedding_table(path);
  if (t.rows.size() < 4) throw ConfigError("imported universe needs at least 4 classes");
  if (n_holdout < 2 || n_holdout + 2 > t.rows.size()) {
    throw ConfigError("n_holdout must leave at least 2 classes in each split");
  }
  for (auto& row : t.rows) {
    for (Embedding* v : {&row.proto_img, &row.proto_txt}) {
      if (std::abs(std::sqrt(dot(*v, *v)) - 1.0) > kRenormTolerance) normalize(*v);
    }
  }
  auto n_train = static_cast<std::uint32_t>(t.rows.size()) - n_holdout;
  return ClassUniverse(t.dim, std::move(t.rows), t.sigma_img, seed, n_train);
}

}  // namespace lcl
