// SPDX-License-Identifier: Apache-2.0
#include "lcl/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lcl/error.hpp"

namespace lcl {

void SimilarityWeights::validate() const {
  if (w_ii < 0.0 || w_it < 0.0 || w_tt < 0.0) throw ConfigError("similarity weights must be >= 0");
  if (std::abs(w_ii + w_it + w_tt - 1.0) > 1e-12) {
    throw ConfigError("similarity weights must sum to 1");
  }
}

double class_similarity(const ClassFeatures& a, const ClassFeatures& b, const SimilarityWeights& w) {
  w.validate();
  double ii = cosine(a.proto_img, b.proto_img);
  double it = 0.5 * (cosine(a.proto_img, b.proto_txt) + cosine(a.proto_txt, b.proto_img));
  double tt = cosine(a.proto_txt, b.proto_txt);
  return w.w_ii * ii + w.w_it * it + w.w_tt * tt;
}

std::vector<ClassFeatures> compute_class_features(const ClassUniverse& u, int n_samples,
                                                  const Rng& rng) {
  std::vector<ClassFeatures> out(u.n_classes());
  for (ClassId c = 0; c < u.n_classes(); ++c) {
    Rng r = rng.split(c);
    out[c].proto_img = class_mean_feature(u, c, n_samples, r);
    out[c].proto_txt = u.spec(c).proto_txt;
  }
  return out;
}

std::vector<std::size_t> interval_sizes(std::size_t n_candidates, std::size_t n_intervals) {
  if (n_intervals == 0 || n_intervals > n_candidates) {
    throw ConfigError("need 1 <= intervals <= candidates");
  }
  std::size_t q = n_candidates / n_intervals;
  std::size_t r = n_candidates % n_intervals;
  std::vector<std::size_t> sizes(n_intervals, q);
  for (std::size_t i = 0; i < r; ++i) ++sizes[i];
  return sizes;
}

std::vector<ClassId> rank_candidates(const std::vector<ClassFeatures>& features, ClassId owner,
                                     const std::vector<ClassId>& restrict_to,
                                     const SimilarityWeights& w) {
  if (owner >= features.size()) throw LookupError("unknown class id " + std::to_string(owner));
  std::vector<std::pair<double, ClassId>> scored;
  scored.reserve(restrict_to.size());
  for (ClassId c : restrict_to) {
    if (c == owner) continue;
    if (c >= features.size()) throw LookupError("unknown class id " + std::to_string(c));
    scored.emplace_back(class_similarity(features[owner], features[c], w), c);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  scored.erase(std::unique(scored.begin(), scored.end(),
                           [](const auto& a, const auto& b) { return a.second == b.second; }),
               scored.end());
  std::vector<ClassId> ids(scored.size());
  std::transform(scored.begin(), scored.end(), ids.begin(), [](const auto& p) { return p.second; });
  return ids;
}

NeighborSet build_neighbor_set(const std::vector<ClassFeatures>& features, ClassId owner,
                               std::size_t n, const SimilarityWeights& w, Rng& rng,
                               const std::vector<ClassId>& restrict_to) {
  w.validate();
  auto ranked = rank_candidates(features, owner, restrict_to, w);
  if (n == 0 || ranked.size() < n) {
    throw ConfigError("class " + std::to_string(owner) + " has " + std::to_string(ranked.size()) +
                      " neighbor candidates, need " + std::to_string(n));
  }
  NeighborSet ns;
  ns.owner = owner;
  std::size_t start = 0;
  for (std::size_t size : interval_sizes(ranked.size(), n)) {
    ClassId pick = ranked[start + rng.below(size)];
    ns.members.push_back(pick);
    ns.similarity.push_back(class_similarity(features[owner], features[pick], w));
    start += size;
  }
  return ns;
}

NeighborSet build_neighbor_set(const ClassUniverse& u, ClassId owner, std::size_t n,
                               const SimilarityWeights& w, Rng& rng,
                               const std::vector<ClassId>& restrict_to) {
  Rng feature_rng = rng.split("features");
  auto features = compute_class_features(u, 100, feature_rng);
  return build_neighbor_set(features, owner, n, w, rng, restrict_to);
}

double hard_negative_probability(std::size_t n, std::size_t rank) {
  if (rank < 1 || rank > n) return 0.0;
  return static_cast<double>(n + 1 - rank) / (static_cast<double>(n) * (n + 1) / 2.0);
}

std::size_t sample_hard_negative_rank(std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("empty neighbor set");
  // Tickets: rank j owns (n + 1 - j) of the n(n+1)/2 tickets.
  std::uint64_t ticket = rng.below(static_cast<std::uint64_t>(n) * (n + 1) / 2);
  std::size_t rank = 1;
  std::uint64_t block = n;
  while (ticket >= block) {
    ticket -= block;
    --block;
    ++rank;
  }
  return rank;
}

ClassId sample_hard_negative(const NeighborSet& ns, Rng& rng) {
  return ns.members[sample_hard_negative_rank(ns.size(), rng) - 1];
}

std::vector<NeighborSet> build_all_neighbor_sets(const ClassUniverse& u, const NeighborConfig& cfg,
                                                 const Rng& rng) {
  cfg.weights.validate();
  auto features = compute_class_features(u, cfg.feature_samples, rng.split("features"));
  auto train = u.train_ids();
  auto holdout = u.holdout_ids();
  Rng owners = rng.split("owners");
  std::vector<NeighborSet> sets;
  sets.reserve(u.n_classes());
  for (ClassId c = 0; c < u.n_classes(); ++c) {
    const auto& pool = u.is_train(c) ? train : holdout;
    std::size_t n = std::min(cfg.n, pool.size() - 1);
    Rng r = owners.split(c);
    sets.push_back(build_neighbor_set(features, c, n, cfg.weights, r, pool));
  }
  return sets;
}

void write_neighbor_cache(const std::vector<NeighborSet>& sets, const std::filesystem::path& path,
                          const std::vector<std::string>& header_comment) {
  std::ostringstream out;
  for (const auto& line : header_comment) out << "# " << line << '\n';
  out << "owner_id,rank,member_id,similarity\n";
  char buf[64];
  for (const auto& ns : sets) {
    for (std::size_t i = 0; i < ns.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", ns.similarity[i]);
      out << ns.owner << ',' << (i + 1) << ',' << ns.members[i] << ',' << buf << '\n';
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << out.str();
}

std::vector<NeighborSet> read_neighbor_cache(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DependencyError("missing neighbor cache: " + path.string());
  std::vector<NeighborSet> sets;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "owner_id,rank,member_id,similarity") {
        throw ParseError("neighbor cache line " + std::to_string(line_no) + ": bad header");
      }
      header_seen = true;
      continue;
    }
    unsigned long owner = 0, rank = 0, member = 0;
    double sim = 0.0;
    if (std::sscanf(line.c_str(), "%lu,%lu,%lu,%lf", &owner, &rank, &member, &sim) != 4) {
      throw ParseError("neighbor cache line " + std::to_string(line_no) + ": malformed row");
    }
    if (sets.empty() || sets.back().owner != owner) {
      if (rank != 1) throw ParseError("neighbor cache line " + std::to_string(line_no) + ": rank gap");
      sets.push_back(NeighborSet{static_cast<ClassId>(owner), {}, {}});
    } else if (rank != sets.back().size() + 1) {
      throw ParseError("neighbor cache line " + std::to_string(line_no) + ": rank gap");
    }
    sets.back().members.push_back(static_cast<ClassId>(member));
    sets.back().similarity.push_back(sim);
  }
  if (!header_seen) throw ParseError("neighbor cache " + path.string() + " has no header");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].owner != i) throw ParseError("neighbor cache owners are not dense and ordered");
  }
  return sets;
}

}  // namespace lcl
