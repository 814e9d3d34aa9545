// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lcl/rng.hpp"
#include "lcl/universe.hpp"

namespace lcl {

struct SimilarityWeights {
  double w_ii = 1.0 / 3.0;  // image-image
  double w_it = 1.0 / 3.0;  // image-text (symmetrized)
  double w_tt = 1.0 / 3.0;  // text-text

  /// Throws ConfigError unless all weights are >= 0 and sum to 1 within 1e-12.
  void validate() const;
};

/// Per-class features used for similarity: `proto_img` holds the class mean
/// image feature and `proto_txt` the text feature.
using ClassFeatures = ClassSpec;

struct NeighborSet {
  ClassId owner = 0;
  /// members[0] is the most similar interval's draw.
  std::vector<ClassId> members;
  /// class_similarity(owner, members[i]).
  std::vector<double> similarity;

  std::size_t size() const noexcept { return members.size(); }
  bool operator==(const NeighborSet&) const = default;
};

double class_similarity(const ClassFeatures& a, const ClassFeatures& b, const SimilarityWeights& w);

/// Mean image feature (n_samples draws) plus text prototype for every class.
/// Class c uses stream rng.split(c).
std::vector<ClassFeatures> compute_class_features(const ClassUniverse& u, int n_samples,
                                                  const Rng& rng);

/// Sizes of `n_intervals` contiguous intervals covering `n_candidates` items;
/// sizes differ by at most one and larger intervals come first.
std::vector<std::size_t> interval_sizes(std::size_t n_candidates, std::size_t n_intervals);

/// Candidates sorted by descending similarity to `owner`, ties by ascending id.
std::vector<ClassId> rank_candidates(const std::vector<ClassFeatures>& features, ClassId owner,
                                     const std::vector<ClassId>& restrict_to,
                                     const SimilarityWeights& w);

/// Sorts candidates by similarity, splits them into `n` intervals and draws
/// one member uniformly from each.
NeighborSet build_neighbor_set(const std::vector<ClassFeatures>& features, ClassId owner,
                               std::size_t n, const SimilarityWeights& w, Rng& rng,
                               const std::vector<ClassId>& restrict_to);

/// Convenience overload computing class features with 100 draws per class.
NeighborSet build_neighbor_set(const ClassUniverse& u, ClassId owner, std::size_t n,
                               const SimilarityWeights& w, Rng& rng,
                               const std::vector<ClassId>& restrict_to);

/// Probability of drawing rank j (1-based) from a set of size n:
/// (n + 1 - j) / (n (n + 1) / 2).
double hard_negative_probability(std::size_t n, std::size_t rank);

/// Rank (1-based) drawn from the hard-negative law. Exact integer sampling.
std::size_t sample_hard_negative_rank(std::size_t n, Rng& rng);
ClassId sample_hard_negative(const NeighborSet& ns, Rng& rng);

struct NeighborConfig {
  std::size_t n = 100;
  SimilarityWeights weights;
  int feature_samples = 100;
};

/// One set per class. Train owners draw from the train split, holdout owners
/// from the holdout split; each uses min(n, split size - 1) intervals. Owner c
/// uses stream rng.split(c).
std::vector<NeighborSet> build_all_neighbor_sets(const ClassUniverse& u, const NeighborConfig& cfg,
                                                 const Rng& rng);

/// CSV cache: owner_id,rank,member_id,similarity. `header_comment` lines are
/// written first, each prefixed with "# ".
void write_neighbor_cache(const std::vector<NeighborSet>& sets, const std::filesystem::path& path,
                          const std::vector<std::string>& header_comment = {});
std::vector<NeighborSet> read_neighbor_cache(const std::filesystem::path& path);

}  // namespace lcl
