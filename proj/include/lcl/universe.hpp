// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lcl/rng.hpp"

namespace lcl {

using ClassId = std::uint32_t;

/// Unit-norm real vector.
using Embedding = std::vector<double>;

struct ClassSpec {
  Embedding proto_img;
  Embedding proto_txt;

  bool operator==(const ClassSpec&) const = default;
};

struct UniverseConfig {
  std::uint64_t seed = 7;
  std::uint32_t n_train = 900;
  std::uint32_t n_holdout = 100;
  std::uint32_t dim = 64;
  double sigma_img = 0.25;
  double sigma_txt = 0.10;
};

/// World of class prototypes with a train/holdout split.
///
/// Class ids are dense in [0, n_classes); the first `n_train` ids form the
/// train split and the rest the holdout split. Immutable after construction.
class ClassUniverse {
 public:
  ClassUniverse(std::uint32_t dim, std::vector<ClassSpec> classes, double sigma_img,
                std::uint64_t seed, std::uint32_t n_train);

  std::uint32_t dim() const noexcept { return dim_; }
  std::uint32_t n_classes() const noexcept { return static_cast<std::uint32_t>(classes_.size()); }
  std::uint32_t n_train() const noexcept { return n_train_; }
  std::uint32_t n_holdout() const noexcept { return n_classes() - n_train_; }
  double sigma_img() const noexcept { return sigma_img_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const ClassSpec& spec(ClassId id) const;
  const std::vector<ClassSpec>& classes() const noexcept { return classes_; }

  bool is_train(ClassId id) const noexcept { return id < n_train_; }
  std::vector<ClassId> train_ids() const;
  std::vector<ClassId> holdout_ids() const;

  bool operator==(const ClassUniverse&) const = default;

 private:
  std::uint32_t dim_;
  std::vector<ClassSpec> classes_;
  double sigma_img_;
  std::uint64_t seed_;
  std::uint32_t n_train_;
};

/// Scales `v` to unit Euclidean norm in place. Throws on a zero vector.
void normalize(std::span<double> v);
double dot(std::span<const double> a, std::span<const double> b) noexcept;
/// Cosine of two vectors that are already unit norm.
inline double cosine(std::span<const double> a, std::span<const double> b) noexcept {
  return dot(a, b);
}

/// Builds a synthetic universe. Image prototypes are uniform on the sphere;
/// each text prototype is a noisy second view of its image prototype.
///
/// Noise is isotropic gaussian scaled so that `sigma` is its RMS norm, i.e.
/// each coordinate has standard deviation sigma/sqrt(dim).
ClassUniverse create_universe(const UniverseConfig& cfg);

/// One noisy sample of `id`: normalize(proto_img + sigma_img * eta).
Embedding draw_sample(const ClassUniverse& u, ClassId id, Rng& rng);

/// Normalized mean of `n_samples` draws.
Embedding class_mean_feature(const ClassUniverse& u, ClassId id, int n_samples, Rng& rng);

/// Binary import/export (magic "LCLU", little-endian, version 1).
///
/// The file carries no split; the last `n_holdout` classes form the holdout
/// split of an imported universe.
void export_universe(const ClassUniverse& u, const std::filesystem::path& path);
ClassUniverse import_universe(const std::filesystem::path& path, std::uint32_t n_holdout,
                              std::uint64_t seed);

/// Raw record form of the binary format, shared with the episode exporter.
struct EmbeddingTable {
  std::uint32_t dim = 0;
  double sigma_img = 0.0;
  std::vector<ClassSpec> rows;
};
void write_embedding_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embedding_table(const std::filesystem::path& path);

}  // namespace lcl
