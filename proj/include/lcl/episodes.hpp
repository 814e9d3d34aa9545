// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "lcl/rng.hpp"
#include "lcl/tokens.hpp"
#include "lcl/universe.hpp"

namespace lcl {

enum class SymbolRegion { kEpisodic, kGlobal };

/// Label vocabulary layout: ids [0, n_episodic) are episode-local symbols,
/// ids [n_episodic, n_episodic + n_train) are persistent per-class symbols.
struct Vocabulary {
  std::uint32_t n_episodic = 16;
  std::uint32_t n_global = 900;

  std::uint32_t size() const noexcept { return n_episodic + n_global; }
  SymbolRegion region(SymbolId id) const;
  SymbolId global_symbol(ClassId train_class) const;
};

/// Episode-local class -> symbol mapping for a 2-way episode.
struct LabelBinding {
  ClassId pos = 0;
  ClassId neg = 0;
  SymbolId pos_symbol = 0;
  SymbolId neg_symbol = 1;

  SymbolId symbol_for(ClassId c) const;
  /// The other bound symbol.
  SymbolId swap(SymbolId s) const;
  bool operator==(const LabelBinding&) const = default;
};

struct SupportPair {
  Embedding embedding;
  SymbolId symbol = 0;
  ClassId source_class = 0;
  bool corrupted = false;

  bool operator==(const SupportPair&) const = default;
};

struct Episode {
  std::vector<SupportPair> support;
  Embedding query_embedding;
  ClassId query_class = 0;
  SymbolId true_symbol = 0;
  /// Empty for zero-shot episodes.
  std::vector<SymbolId> candidates;
  LabelBinding binding;

  bool operator==(const Episode&) const = default;
};

struct ShotStrategy {
  enum class Kind { kFixed, kUniform, kWeighted };

  static ShotStrategy fixed(int n) { return {Kind::kFixed, n, n}; }
  static ShotStrategy uniform(int lo = 2, int hi = 16) { return {Kind::kUniform, lo, hi}; }
  static ShotStrategy weighted(int lo = 2, int hi = 16) { return {Kind::kWeighted, lo, hi}; }

  Kind kind = Kind::kFixed;
  int lo = 16;
  int hi = 16;

  void validate() const;
  /// Probability of each shot count lo..hi.
  std::vector<double> probabilities() const;
  bool operator==(const ShotStrategy&) const = default;
};

/// Two distinct episodic symbols drawn without replacement; orientation uniform.
LabelBinding bind_labels(ClassId pos, ClassId neg, std::uint32_t n_episodic, Rng& rng);

int sample_shot_count(const ShotStrategy& s, Rng& rng);

/// 2-way episode with `n_shots` samples per class in shuffled order and a
/// fresh query from pos or neg with equal probability.
///
/// Draws are keyed by sub-streams of one value taken from `rng`, so the
/// support for n shots is a prefix (before shuffling) of the support for
/// n + 1 shots, and the query does not depend on n.
Episode build_2way_episode(const ClassUniverse& u, ClassId pos, ClassId neg, int n_shots,
                           const LabelBinding& binding, Rng& rng);

/// Single-query episode whose answer is the class's persistent symbol.
Episode build_zeroshot_episode(const ClassUniverse& u, ClassId cls, const Vocabulary& vocab,
                               Rng& rng);

/// Swaps round(false_rate * |support|) uniformly chosen support labels.
Episode corrupt_labels(const Episode& e, double false_rate, Rng& rng);

/// Swaps the label of support pair k only. An involution.
Episode perturb_position(const Episode& e, std::size_t k);

/// [E1 L1 ... E2n L2n Eq]. The last position is always a target; with
/// `supervise_support` each Ei position also predicts Li.
TokenSeq episode_to_tokens(const Episode& e, std::size_t max_seq, bool supervise_support = false);

/// Inverse of episode_to_tokens for the pair/query structure.
struct DecodedEpisode {
  std::vector<std::pair<Embedding, SymbolId>> pairs;
  Embedding query;
};
DecodedEpisode decode_tokens(const TokenSeq& seq);

/// Writes `manifest.csv` (episode_id,role,position,class_id,symbol_id,corrupted)
/// and `embeddings.lclu`, whose row k holds the embedding of manifest row k.
void export_episode_manifest(const std::vector<Episode>& episodes, double sigma_img,
                             const std::filesystem::path& dir,
                             const std::vector<std::string>& header_comment = {});

}  // namespace lcl
