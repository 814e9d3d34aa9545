// SPDX-License-Identifier: Apache-2.0
#include "lcl/episodes.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lcl/error.hpp"

namespace lcl {

SymbolRegion Vocabulary::region(SymbolId id) const {
  if (id < n_episodic) return SymbolRegion::kEpisodic;
  if (id < size()) return SymbolRegion::kGlobal;
  throw LookupError("symbol " + std::to_string(id) + " outside vocabulary");
}

SymbolId Vocabulary::global_symbol(ClassId train_class) const {
  if (train_class >= n_global) {
    throw LookupError("class " + std::to_string(train_class) + " has no global symbol");
  }
  return n_episodic + train_class;
}

SymbolId LabelBinding::symbol_for(ClassId c) const {
  if (c == pos) return pos_symbol;
  if (c == neg) return neg_symbol;
  throw LookupError("class " + std::to_string(c) + " is not bound in this episode");
}

SymbolId LabelBinding::swap(SymbolId s) const {
  if (s == pos_symbol) return neg_symbol;
  if (s == neg_symbol) return pos_symbol;
  throw LookupError("symbol " + std::to_string(s) + " is not bound in this episode");
}

void ShotStrategy::validate() const {
  if (kind == Kind::kFixed) {
    if (lo < 0 || lo != hi) throw ConfigError("fixed shot strategy needs lo == hi >= 0");
    return;
  }
  if (lo < 2 || hi < lo) throw ConfigError("shot strategy needs 2 <= lo <= hi");
}

std::vector<double> ShotStrategy::probabilities() const {
  validate();
  std::size_t n = static_cast<std::size_t>(hi - lo + 1);
  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  if (kind == Kind::kWeighted) {
    // e^j / sum_m e^m, evaluated relative to e^hi.
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::exp(static_cast<double>(lo + static_cast<int>(i) - hi));
      total += p[i];
    }
    for (auto& x : p) x /= total;
  }
  return p;
}

LabelBinding bind_labels(ClassId pos, ClassId neg, std::uint32_t n_episodic, Rng& rng) {
  if (n_episodic < 2) throw ConfigError("need at least 2 episodic symbols");
  if (pos == neg) throw ConfigError("positive and negative class must differ");
  auto a = static_cast<SymbolId>(rng.below(n_episodic));
  auto b = static_cast<SymbolId>(rng.below(n_episodic - 1));
  if (b >= a) ++b;
  return LabelBinding{pos, neg, a, b};
}

int sample_shot_count(const ShotStrategy& s, Rng& rng) {
  s.validate();
  switch (s.kind) {
    case ShotStrategy::Kind::kFixed:
      return s.lo;
    case ShotStrategy::Kind::kUniform:
      return static_cast<int>(rng.between(s.lo, s.hi));
    case ShotStrategy::Kind::kWeighted: {
      auto p = s.probabilities();
      return s.lo + static_cast<int>(rng.categorical(p));
    }
  }
  return s.lo;
}

Episode build_2way_episode(const ClassUniverse& u, ClassId pos, ClassId neg, int n_shots,
                           const LabelBinding& binding, Rng& rng) {
  if (n_shots < 1) throw ConfigError("n_shots must be >= 1");
  if (pos == neg) throw ConfigError("positive and negative class must differ");
  u.spec(pos);
  u.spec(neg);
  Rng base = rng.split(rng.next_u64());

  Episode e;
  e.binding = binding;
  e.candidates = {binding.pos_symbol, binding.neg_symbol};
  Rng pos_rng = base.split("pos");
  Rng neg_rng = base.split("neg");
  e.support.reserve(2 * static_cast<std::size_t>(n_shots));
  for (int k = 0; k < n_shots; ++k) {
    Rng pr = pos_rng.split(static_cast<std::uint64_t>(k));
    Rng nr = neg_rng.split(static_cast<std::uint64_t>(k));
    e.support.push_back({draw_sample(u, pos, pr), binding.pos_symbol, pos, false});
    e.support.push_back({draw_sample(u, neg, nr), binding.neg_symbol, neg, false});
  }
  Rng order = base.split("order").split(static_cast<std::uint64_t>(n_shots));
  order.shuffle(std::span<SupportPair>(e.support));

  Rng query = base.split("query");
  e.query_class = query.uniform() < 0.5 ? pos : neg;
  e.query_embedding = draw_sample(u, e.query_class, query);
  e.true_symbol = binding.symbol_for(e.query_class);
  return e;
}

Episode build_zeroshot_episode(const ClassUniverse& u, ClassId cls, const Vocabulary& vocab,
                               Rng& rng) {
  Episode e;
  e.query_class = cls;
  e.query_embedding = draw_sample(u, cls, rng);
  e.true_symbol = vocab.global_symbol(cls);
  return e;
}

Episode corrupt_labels(const Episode& e, double false_rate, Rng& rng) {
  if (!(false_rate >= 0.0 && false_rate <= 1.0)) throw ConfigError("false_rate must be in [0, 1]");
  Episode out = e;
  std::size_t n = out.support.size();
  auto count = static_cast<std::size_t>(std::lround(false_rate * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `count` slots are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
    auto& pair = out.support[idx[i]];
    pair.symbol = out.binding.swap(pair.symbol);
    pair.corrupted = !pair.corrupted;
  }
  return out;
}

Episode perturb_position(const Episode& e, std::size_t k) {
  if (k >= e.support.size()) {
    throw IndexError("support position " + std::to_string(k) + " out of range [0, " +
                     std::to_string(e.support.size()) + ")");
  }
  Episode out = e;
  auto& pair = out.support[k];
  pair.symbol = out.binding.swap(pair.symbol);
  pair.corrupted = !pair.corrupted;
  return out;
}

TokenSeq episode_to_tokens(const Episode& e, std::size_t max_seq, bool supervise_support) {
  std::size_t len = 2 * e.support.size() + 1;
  if (len > max_seq) {
    throw ConfigError("episode needs " + std::to_string(len) + " tokens, model max_seq is " +
                      std::to_string(max_seq));
  }
  TokenSeq seq;
  seq.tokens.reserve(len);
  for (const auto& pair : e.support) {
    if (supervise_support) seq.targets.push_back({seq.tokens.size(), pair.symbol});
    seq.tokens.push_back(Token::continuous(pair.embedding));
    seq.tokens.push_back(Token::symbol_token(pair.symbol));
  }
  seq.targets.push_back({seq.tokens.size(), e.true_symbol});
  seq.tokens.push_back(Token::continuous(e.query_embedding));
  return seq;
}

DecodedEpisode decode_tokens(const TokenSeq& seq) {
  const auto& t = seq.tokens;
  if (t.empty() || t.size() % 2 == 0) throw ParseError("token sequence must have odd length");
  DecodedEpisode d;
  for (std::size_t i = 0; i + 1 < t.size(); i += 2) {
    if (t[i].is_symbol || !t[i + 1].is_symbol) {
      throw ParseError("token " + std::to_string(i) + " breaks the embedding/label alternation");
    }
    d.pairs.emplace_back(t[i].values, t[i + 1].symbol);
  }
  if (t.back().is_symbol) throw ParseError("final token must be the query embedding");
  d.query = t.back().values;
  return d;
}

void export_episode_manifest(const std::vector<Episode>& episodes, double sigma_img,
                             const std::filesystem::path& dir,
                             const std::vector<std::string>& header_comment) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  for (const auto& line : header_comment) csv << "# " << line << '\n';
  csv << "episode_id,role,position,class_id,symbol_id,corrupted\n";
  EmbeddingTable table;
  table.sigma_img = sigma_img;
  for (std::size_t id = 0; id < episodes.size(); ++id) {
    const auto& e = episodes[id];
    if (table.dim == 0) table.dim = static_cast<std::uint32_t>(e.query_embedding.size());
    for (std::size_t k = 0; k < e.support.size(); ++k) {
      const auto& p = e.support[k];
      csv << id << ",support," << k << ',' << p.source_class << ',' << p.symbol << ','
          << (p.corrupted ? 1 : 0) << '\n';
      table.rows.push_back({p.embedding, p.embedding});
    }
    csv << id << ",query," << e.support.size() << ',' << e.query_class << ',' << e.true_symbol
        << ",0\n";
    table.rows.push_back({e.query_embedding, e.query_embedding});
  }
  std::ofstream f(dir / "manifest.csv", std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + (dir / "manifest.csv").string());
  f << csv.str();
  write_embedding_table(table, dir / "embeddings.lclu");
}

}  // namespace lcl
