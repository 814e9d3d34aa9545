// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lcl/eval.hpp"
#include "lcl/neighbors.hpp"
#include "lcl/net.hpp"
#include "lcl/train.hpp"
#include "lcl/universe.hpp"

namespace lcl {

struct ModelSection {
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t max_seq = 65;
  std::uint32_t n_episodic = 16;
  std::uint64_t init_seed = 1;
};

struct EvalSection {
  std::vector<std::string> protocols = {"hard_pairs", "all_pairs"};
  std::size_t n_episodes = 2000;
  std::uint64_t seed = 1234;
  std::size_t budget = 1000;
  std::size_t hard_pair_limit = 0;
  std::vector<int> shot_list = {2, 4, 6, 8, 10, 12, 14, 16};
  std::vector<double> false_rates = {0.0, 0.25, 0.5, 0.75, 1.0};
  int ablation_shots = 16;
  std::size_t zeroshot_episodes = 2000;
  /// Episodes for the in-training accuracy snapshot; 0 disables it.
  std::size_t snapshot_episodes = 200;
};

struct RunConfig {
  UniverseConfig universe;
  /// Embedding file to ingest instead of generating; empty generates.
  std::string universe_import;
  NeighborConfig neighbors;
  std::uint64_t neighbor_seed = 11;
  ModelSection model;
  std::map<std::string, TrainConfig> train;
  EvalSection eval;
  std::string output_dir = "default";

  static RunConfig defaults();
  /// Parses JSON text. Every section must be present; keys inside a section
  /// are optional. Unknown keys throw ConfigError.
  static RunConfig parse(const std::string& json_text);
  static RunConfig load(const std::filesystem::path& path);

  /// Applies "section.key=value" (or "train.<stage>.key=value") overrides.
  void apply_override(const std::string& assignment);

  /// Canonical JSON (sorted keys, fixed formatting).
  std::string to_json() const;
  /// FNV-1a 64 of to_json(), as 16 hex digits.
  std::string hash() const;

  ModelConfig model_config() const;
  const TrainConfig& stage(const std::string& name) const;
  EvalProtocol protocol(const std::string& name) const;
  void validate() const;
};

std::string shots_to_string(const ShotStrategy& s);
ShotStrategy parse_shots(const std::string& text);

std::uint64_t fnv1a64(std::string_view data) noexcept;

}  // namespace lcl
