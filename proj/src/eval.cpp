// SPDX-License-Identifier: Apache-2.0
#include "lcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "lcl/error.hpp"
#include "textio.hpp"

namespace lcl {

using textio::fmt;

SymbolId predict_from_logits(const Eigen::Ref<const Matrix>& row,
                             const std::vector<SymbolId>& candidates) {
  if (candidates.empty()) throw ConfigError("no candidate symbols");
  SymbolId best = candidates.front();
  for (SymbolId c : candidates) {
    if (c >= row.cols()) throw LookupError("candidate " + std::to_string(c) + " outside vocabulary");
    double v = row(0, c), b = row(0, best);
    if (v > b || (v == b && c < best)) best = c;
  }
  return best;
}

namespace {

SymbolId full_argmax(const Eigen::Ref<const Matrix>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.cols(); ++j) {
    if (row(0, j) > row(0, best)) best = j;
  }
  return static_cast<SymbolId>(best);
}

constexpr std::size_t kChunk = 256;

}  // namespace

namespace {

/// Restricted and full-vocabulary predictions from one forward pass.
void score_batch(const Params& p, const std::vector<Episode>& episodes,
                 std::vector<SymbolId>& restricted, std::vector<SymbolId>* full) {
  restricted.clear();
  restricted.reserve(episodes.size());
  if (full) full->clear();
  for (std::size_t start = 0; start < episodes.size(); start += kChunk) {
    std::size_t end = std::min(episodes.size(), start + kChunk);
    std::vector<TokenSeq> seqs;
    seqs.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      seqs.push_back(episode_to_tokens(episodes[i], p.cfg.max_seq));
    }
    Matrix logits = final_logits(p, seqs);
    for (std::size_t i = start; i < end; ++i) {
      const auto& e = episodes[i];
      auto row = logits.row(static_cast<Eigen::Index>(i - start));
      SymbolId all = full_argmax(row);
      restricted.push_back(e.candidates.empty() ? all : predict_from_logits(row, e.candidates));
      if (full) full->push_back(all);
    }
  }
}

}  // namespace

std::vector<SymbolId> predict_batch(const Params& p, const std::vector<Episode>& episodes) {
  std::vector<SymbolId> out;
  score_batch(p, episodes, out, nullptr);
  return out;
}

SymbolId predict(const Params& p, const Episode& e) { return predict_batch(p, {e}).front(); }

SymbolId oracle_nearest_prototype(const Episode& e) {
  if (e.candidates.empty()) throw ConfigError("oracle needs a candidate set");
  const std::size_t dim = e.query_embedding.size();
  SymbolId best = 0;
  double best_cos = -2.0;
  bool have = false;
  auto sorted = e.candidates;
  std::sort(sorted.begin(), sorted.end());
  for (SymbolId c : sorted) {
    std::vector<double> mean(dim, 0.0);
    std::size_t count = 0;
    for (const auto& pair : e.support) {
      if (pair.symbol != c) continue;
      for (std::size_t d = 0; d < dim; ++d) mean[d] += pair.embedding[d];
      ++count;
    }
    if (count == 0) {
      throw LookupError("candidate symbol " + std::to_string(c) + " has no support pairs");
    }
    normalize(mean);
    double cs = dot(mean, e.query_embedding) / std::sqrt(dot(e.query_embedding, e.query_embedding));
    // Strict comparison over ascending ids keeps the lower id on ties.
    if (!have || cs > best_cos) {
      best = c;
      best_cos = cs;
      have = true;
    }
  }
  return best;
}

std::string EvalProtocol::name() const {
  if (kind == Kind::kAllPairs) return "all_pairs";
  if (hard_pair_limit > 0) return "hard_pairs_" + std::to_string(hard_pair_limit);
  return "hard_pairs";
}

EvalProtocol::Kind parse_protocol(const std::string& name) {
  if (name == "hard_pairs") return EvalProtocol::Kind::kHardPairs;
  if (name == "all_pairs") return EvalProtocol::Kind::kAllPairs;
  throw ConfigError("unknown protocol '" + name + "' (expected hard_pairs or all_pairs)");
}

std::vector<std::pair<ClassId, ClassId>> make_eval_pairs(const ClassUniverse& u,
                                                         const EvalProtocol& protocol) {
  const auto holdout = u.holdout_ids();
  if (holdout.size() < 2) throw ConfigError("evaluation needs at least 2 holdout classes");
  std::vector<std::pair<ClassId, ClassId>> pairs;
  if (protocol.kind == EvalProtocol::Kind::kAllPairs) {
    pairs.reserve(holdout.size() * (holdout.size() - 1));
    for (ClassId a : holdout)
      for (ClassId b : holdout)
        if (a != b) pairs.emplace_back(a, b);
    return pairs;
  }

  protocol.weights.validate();
  // Features for holdout classes only; other entries stay empty.
  const Rng frng = Rng(u.seed()).split("eval").split("features");
  std::vector<ClassFeatures> features(u.n_classes());
  for (ClassId c : holdout) {
    Rng r = frng.split(c);
    features[c].proto_img = class_mean_feature(u, c, protocol.feature_samples, r);
    features[c].proto_txt = u.spec(c).proto_txt;
  }
  struct Scored {
    ClassId a, b;
    double sim;
  };
  std::vector<Scored> scored;
  for (ClassId a : holdout) {
    auto ranked = rank_candidates(features, a, holdout, protocol.weights);
    ClassId b = ranked.front();
    scored.push_back({a, b, class_similarity(features[a], features[b], protocol.weights)});
  }
  if (protocol.hard_pair_limit == 0) {
    for (const auto& s : scored) pairs.emplace_back(s.a, s.b);
    return pairs;
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Scored& x, const Scored& y) { return x.sim > y.sim; });
  for (const auto& s : scored) {
    if (pairs.size() >= protocol.hard_pair_limit) break;
    bool dup = std::find(pairs.begin(), pairs.end(), std::make_pair(s.b, s.a)) != pairs.end();
    if (!dup) pairs.emplace_back(s.a, s.b);
  }
  return pairs;
}

std::size_t effective_episodes(const EvalProtocol& protocol, std::size_t n_pairs,
                               std::size_t requested) {
  if (protocol.budget < 1) throw ConfigError("protocol budget must be >= 1");
  return std::min(requested, protocol.budget * n_pairs);
}

std::vector<Episode> make_eval_episodes(const ClassUniverse& u,
                                        const std::vector<std::pair<ClassId, ClassId>>& pairs,
                                        int shots, std::size_t n, std::uint64_t seed,
                                        std::uint32_t n_episodic) {
  if (shots < 1) throw ConfigError("2-way evaluation needs shots >= 1");
  if (pairs.empty()) throw ConfigError("no evaluation pairs");
  const Rng base = Rng(seed).split("eval");
  std::vector<Episode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = n < pairs.size() ? i * pairs.size() / n : i % pairs.size();
    auto [pos, neg] = pairs[k];
    Rng r = base.split(i);
    LabelBinding b = bind_labels(pos, neg, n_episodic, r);
    out.push_back(build_2way_episode(u, pos, neg, shots, b, r));
  }
  return out;
}

double binomial_stderr(double p, std::size_t n) {
  if (n == 0) return 0.0;
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

AccuracyRow make_row(std::string protocol, int shots, std::string condition, std::size_t correct,
                     std::size_t n) {
  AccuracyRow r;
  r.protocol = std::move(protocol);
  r.shots = shots;
  r.condition = std::move(condition);
  r.n = n;
  r.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  r.stderr_ = binomial_stderr(r.accuracy, n);
  return r;
}

const AccuracyRow* EvalReport::find(const std::string& protocol, int shots,
                                    const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.protocol == protocol && r.shots == shots && r.condition == condition) return &r;
  }
  return nullptr;
}

namespace {

std::size_t count_correct(const std::vector<SymbolId>& pred, const std::vector<Episode>& eps) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) ok += pred[i] == eps[i].true_symbol;
  return ok;
}

std::vector<Episode> episodes_for(const ClassUniverse& u, const Params& p, int shots,
                                  const EvalOptions& opt, std::size_t* n_out = nullptr) {
  auto pairs = make_eval_pairs(u, opt.protocol);
  std::size_t n = effective_episodes(opt.protocol, pairs.size(), opt.n_episodes);
  if (n_out) *n_out = n;
  return make_eval_episodes(u, pairs, shots, n, opt.seed, p.cfg.n_episodic);
}


}  // namespace

EvalReport eval_nshot(const Params& p, const ClassUniverse& u, int shots, const EvalOptions& opt) {
  if (shots == 0) return eval_zeroshot(p, u, opt.n_episodes, opt.seed);
  auto eps = episodes_for(u, p, shots, opt);
  EvalReport rep;
  const std::string proto = opt.protocol.name();
  std::vector<SymbolId> restricted, full;
  score_batch(p, eps, restricted, &full);
  rep.rows.push_back(make_row(proto, shots, "model", count_correct(restricted, eps), eps.size()));
  rep.rows.push_back(
      make_row(proto, shots, "model_fullvocab", count_correct(full, eps), eps.size()));
  if (opt.with_oracle) {
    std::vector<SymbolId> oracle;
    oracle.reserve(eps.size());
    for (const auto& e : eps) oracle.push_back(oracle_nearest_prototype(e));
    rep.rows.push_back(make_row(proto, shots, "oracle", count_correct(oracle, eps), eps.size()));
  }
  return rep;
}

EvalReport shot_sweep(const Params& p, const ClassUniverse& u, const std::vector<int>& shots,
                      const EvalOptions& opt) {
  EvalReport rep;
  for (int s : shots) {
    auto one = eval_nshot(p, u, s, opt);
    rep.rows.insert(rep.rows.end(), one.rows.begin(), one.rows.end());
  }
  return rep;
}

EvalReport ablate_false_rate(const Params& p, const ClassUniverse& u, int shots,
                             const std::vector<double>& rates, const EvalOptions& opt) {
  auto eps = episodes_for(u, p, shots, opt);
  const Rng crng = Rng(opt.seed).split("corrupt");
  EvalReport rep;
  for (double rate : rates) {
    std::vector<Episode> corrupted;
    corrupted.reserve(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
      Rng r = crng.split(i);
      corrupted.push_back(corrupt_labels(eps[i], rate, r));
    }
    // true_symbol is untouched by corruption, so accuracy is against the true label.
    rep.rows.push_back(make_row(opt.protocol.name(), shots, "false_rate=" + fmt("%g", rate),
                                count_correct(predict_batch(p, corrupted), corrupted),
                                corrupted.size()));
  }
  return rep;
}

EvalReport ablate_position(const Params& p, const ClassUniverse& u, int shots,
                           const EvalOptions& opt) {
  auto eps = episodes_for(u, p, shots, opt);
  EvalReport rep;
  const std::string proto = opt.protocol.name();
  rep.rows.push_back(make_row(proto, shots, "baseline", count_correct(predict_batch(p, eps), eps),
                              eps.size()));
  const std::size_t n_pos = 2 * static_cast<std::size_t>(shots);
  for (std::size_t k = 0; k < n_pos; ++k) {
    std::vector<Episode> perturbed;
    perturbed.reserve(eps.size());
    for (const auto& e : eps) perturbed.push_back(perturb_position(e, k));
    rep.rows.push_back(make_row(proto, shots, "position=" + std::to_string(k),
                                count_correct(predict_batch(p, perturbed), perturbed),
                                perturbed.size()));
  }
  return rep;
}

EvalReport eval_zeroshot(const Params& p, const ClassUniverse& u, std::size_t n_episodes,
                         std::uint64_t seed) {
  const auto train = u.train_ids();
  if (train.empty()) throw ConfigError("zero-shot evaluation needs train classes");
  Vocabulary vocab{p.cfg.n_episodic, p.cfg.vocab - p.cfg.n_episodic};
  const Rng base = Rng(seed).split("zeroshot");
  std::vector<Episode> eps;
  eps.reserve(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    Rng r = base.split(i);
    ClassId c = train[r.below(train.size())];
    eps.push_back(build_zeroshot_episode(u, c, vocab, r));
  }
  EvalReport rep;
  rep.rows.push_back(make_row("zeroshot", 0, "model", count_correct(predict_batch(p, eps), eps),
                              eps.size()));
  return rep;
}

void write_report_csv(const EvalReport& r, const std::filesystem::path& path,
                      const std::vector<std::string>& header_comment) {
  std::ostringstream out;
  for (const auto& line : header_comment) out << "# " << line << '\n';
  out << "protocol,shots,condition,accuracy,stderr,n\n";
  for (const auto& row : r.rows) {
    out << row.protocol << ',' << row.shots << ',' << row.condition << ','
        << fmt("%.6f", row.accuracy) << ',' << fmt("%.6f", row.stderr_) << ',' << row.n << '\n';
  }
  textio::write_atomic(path, out.str());
}

EvalReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DependencyError("missing report " + path.string());
  EvalReport rep;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "protocol,shots,condition,accuracy,stderr,n") {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": unexpected header");
      }
      header = true;
      continue;
    }
    std::vector<std::string> f6;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f6.push_back(cell);
    if (f6.size() != 6) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    try {
      AccuracyRow row;
      row.protocol = f6[0];
      row.shots = std::stoi(f6[1]);
      row.condition = f6[2];
      row.accuracy = std::stod(f6[3]);
      row.stderr_ = std::stod(f6[4]);
      row.n = static_cast<std::size_t>(std::stoull(f6[5]));
      rep.rows.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (!header) throw ParseError(path.string() + ": no header row");
  return rep;
}

}  // namespace lcl
