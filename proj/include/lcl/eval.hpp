// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lcl/episodes.hpp"
#include "lcl/neighbors.hpp"
#include "lcl/net.hpp"
#include "lcl/universe.hpp"

namespace lcl {

/// Argmax over `candidates` of one logit row; ties go to the lower symbol id.
SymbolId predict_from_logits(const Eigen::Ref<const Matrix>& row,
                             const std::vector<SymbolId>& candidates);

/// Model prediction restricted to the episode's candidates (full vocabulary
/// for zero-shot episodes).
SymbolId predict(const Params& p, const Episode& e);
std::vector<SymbolId> predict_batch(const Params& p, const std::vector<Episode>& episodes);

/// Groups support embeddings by their (observed) symbol and returns the
/// candidate whose normalized group mean has the highest cosine with the
/// query; ties go to the lower id. Throws LookupError for a candidate with no
/// support pairs.
SymbolId oracle_nearest_prototype(const Episode& e);

struct EvalProtocol {
  enum class Kind { kHardPairs, kAllPairs };
  Kind kind = Kind::kHardPairs;
  /// Keep only the k most similar hard pairs; 0 keeps one per holdout class.
  std::size_t hard_pair_limit = 0;
  /// Max episodes per pair.
  std::size_t budget = 1000;
  /// Similarity weights and feature draws used to rank holdout classes.
  SimilarityWeights weights;
  int feature_samples = 100;

  std::string name() const;
};
EvalProtocol::Kind parse_protocol(const std::string& name);

/// Ordered (pos, neg) holdout pairs. Hard pairs join each holdout class to its
/// most similar other holdout class; all pairs lists every ordered pair.
std::vector<std::pair<ClassId, ClassId>> make_eval_pairs(const ClassUniverse& u,
                                                         const EvalProtocol& protocol);

/// Episode count actually run for `requested`: min(requested, budget * n_pairs).
std::size_t effective_episodes(const EvalProtocol& protocol, std::size_t n_pairs,
                               std::size_t requested);

/// Episode i uses pair floor(i * n_pairs / n) when n < n_pairs and i mod
/// n_pairs otherwise, and stream Rng(seed).split("eval").split(i). The label
/// binding and sample draws do not depend on the shot count.
std::vector<Episode> make_eval_episodes(const ClassUniverse& u,
                                        const std::vector<std::pair<ClassId, ClassId>>& pairs,
                                        int shots, std::size_t n, std::uint64_t seed,
                                        std::uint32_t n_episodic);

struct AccuracyRow {
  std::string protocol;
  int shots = 0;
  std::string condition;
  double accuracy = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

double binomial_stderr(double p, std::size_t n);
AccuracyRow make_row(std::string protocol, int shots, std::string condition, std::size_t correct,
                     std::size_t n);

struct EvalReport {
  std::vector<AccuracyRow> rows;
  const AccuracyRow* find(const std::string& protocol, int shots, const std::string& condition) const;
};

struct EvalOptions {
  EvalProtocol protocol;
  std::size_t n_episodes = 2000;
  std::uint64_t seed = 1234;
  /// Also score the nearest-prototype oracle on the same episodes.
  bool with_oracle = true;
};

/// Rows "model", "model_fullvocab" (argmax over the whole vocabulary) and,
/// with_oracle, "oracle" at one shot count.
EvalReport eval_nshot(const Params& p, const ClassUniverse& u, int shots, const EvalOptions& opt);
EvalReport shot_sweep(const Params& p, const ClassUniverse& u, const std::vector<int>& shots,
                      const EvalOptions& opt);
/// Rows "false_rate=<r>"; the same episodes are corrupted at each rate.
EvalReport ablate_false_rate(const Params& p, const ClassUniverse& u, int shots,
                             const std::vector<double>& rates, const EvalOptions& opt);
/// Row "baseline" plus "position=<k>" for every support position k.
EvalReport ablate_position(const Params& p, const ClassUniverse& u, int shots,
                           const EvalOptions& opt);
/// Original-task accuracy over train classes, full-vocabulary argmax. Row
/// protocol "zeroshot", shots 0, condition "model".
EvalReport eval_zeroshot(const Params& p, const ClassUniverse& u, std::size_t n_episodes,
                         std::uint64_t seed);

/// CSV: protocol,shots,condition,accuracy,stderr,n
void write_report_csv(const EvalReport& r, const std::filesystem::path& path,
                      const std::vector<std::string>& header_comment = {});
EvalReport read_report_csv(const std::filesystem::path& path);

}  // namespace lcl
