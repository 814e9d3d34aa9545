// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lcl/error.hpp"
#include "lcl/net.hpp"
#include "lcl/rng.hpp"

using namespace lcl;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq = 9;
  c.vocab = 20;
  c.n_episodic = 4;
  c.dim_in = 8;
  return c;
}

TokenSeq random_seq(Rng& r, const ModelConfig& c, std::size_t len) {
  TokenSeq s;
  for (std::size_t t = 0; t < len; ++t) {
    if (t % 2 == 0) {
      Embedding e(c.dim_in);
      for (auto& x : e) x = r.normal();
      s.tokens.push_back(Token::continuous(e));
    } else {
      s.tokens.push_back(Token::symbol_token(static_cast<SymbolId>(r.below(c.vocab))));
    }
  }
  s.targets.push_back({len - 1, static_cast<SymbolId>(r.below(c.vocab))});
  return s;
}

/// Perturbs every tensor so no gradient path is trivially zero.
Params random_params(const ModelConfig& c, std::uint64_t seed) {
  Params p = init_params(c, seed);
  Rng r(seed + 100);
  p.for_each([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.3 * r.normal();
  });
  return p;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.n_episodic = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("initialization") {
  ModelConfig c = tiny();
  CHECK(init_params(c, 5) == init_params(c, 5));
  CHECK_FALSE(init_params(c, 5) == init_params(c, 6));
  Params p = init_params(c, 5);
  CHECK(p.w_out.isZero(0));
  CHECK(p.b_out.isZero(0));
  CHECK(p.lnf_g.isOnes(0));
  CHECK(p.layers[0].b_ff1.isZero(0));

  Rng r(1);
  TokenSeq one = random_seq(r, c, 1);
  Matrix probs = softmax_rows(forward(p, one));
  for (Eigen::Index j = 0; j < probs.cols(); ++j) CHECK(probs(0, j) == doctest::Approx(1.0 / 20));
}

TEST_CASE("parameter count matches shape arithmetic") {
  ModelConfig c;
  c.d_model = 128;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_ff = 512;
  c.vocab = 916;
  c.dim_in = 64;
  c.max_seq = 65;
  const std::size_t d = 128, ff = 512, V = 916, din = 64, T = 65, H = 4, L = 4;
  const std::size_t per_layer = 2 * d + 4 * d * d + d + H + 2 * d + (d * ff + ff) + (ff * d + d);
  const std::size_t expect = din * d + d + V * d + T * d + L * per_layer + 2 * d + d * V + V;
  CHECK(Params::zeros(c).parameter_count() == expect);
}

TEST_CASE("causality, normalization and batching") {
  ModelConfig c = tiny();
  Params p = random_params(c, 2);
  Rng r(3);
  TokenSeq s = random_seq(r, c, 9);
  Matrix base = forward(p, s);
  for (std::size_t t = 0; t + 1 < s.size(); ++t) {
    TokenSeq alt = s;
    for (std::size_t k = t + 1; k < alt.size(); ++k) {
      if (alt.tokens[k].is_symbol) {
        alt.tokens[k].symbol = (alt.tokens[k].symbol + 3) % c.vocab;
      } else {
        for (auto& x : alt.tokens[k].values) x = -x + 0.5;
      }
    }
    Matrix changed = forward(p, alt);
    CHECK(changed.topRows(static_cast<Eigen::Index>(t + 1)) ==
          base.topRows(static_cast<Eigen::Index>(t + 1)));
  }
  Matrix probs = softmax_rows(base);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) CHECK(std::abs(probs.row(i).sum() - 1.0) < 1e-12);

  std::vector<TokenSeq> same = {s, s, s};
  Matrix last = final_logits(p, same);
  CHECK((last.row(0) - last.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((last.row(0) - last.row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((last.row(0) - base.row(8)).cwiseAbs().maxCoeff() < 1e-12);

  TokenSeq too_long = random_seq(r, c, 10);
  CHECK_THROWS_AS(forward(p, too_long), ConfigError);
  CHECK_THROWS_AS(lcl_loss(p, std::vector<TokenSeq>{}), ConfigError);
}

TEST_CASE("loss values") {
  ModelConfig c = tiny();
  c.n_episodic = 16;
  Params p = init_params(c, 1);
  Rng r(4);
  TokenSeq s = random_seq(r, c, 5);
  s.targets = {{4, 3}};
  std::vector<TokenSeq> b = {s};
  CHECK(lcl_loss(p, b, LossOptions{true}).loss == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(lcl_loss(p, b).loss == doctest::Approx(std::log(20.0)).epsilon(1e-12));

  // Overwhelming bias on the target drives the loss to zero.
  p.b_out(0, 3) = 1000.0;
  CHECK(lcl_loss(p, b).loss < 1e-12);

  Params q = random_params(c, 9);
  std::vector<TokenSeq> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(random_seq(r, c, 1 + 2 * static_cast<std::size_t>(r.below(5))));
  double mean = 0;
  for (const auto& one : batch) mean += lcl_loss(q, std::vector<TokenSeq>{one}).loss / 5.0;
  auto res = lcl_loss(q, batch);
  CHECK(std::abs(res.loss - mean) < 1e-9);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(res.per_sequence[i] - lcl_loss(q, std::vector<TokenSeq>{batch[i]}).loss) < 1e-12);
  }
}

TEST_CASE("gradients agree with central differences") {
  ModelConfig c = tiny();
  Params p = random_params(c, 7);
  Rng r(8);
  std::vector<TokenSeq> batch = {random_seq(r, c, 5), random_seq(r, c, 5)};
  batch[1].targets.push_back({2, 1});
  Params g;
  backward(p, batch, g);

  std::vector<Matrix*> ps, gs;
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, Matrix& m) {
    ps.push_back(&m);
    names.push_back(n);
  });
  g.for_each([&](const std::string&, Matrix& m) { gs.push_back(&m); });

  const double h = 1e-5;
  double worst = 0;
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    std::size_t t = r.below(ps.size());
    // Rows of the position table beyond the sequence have no gradient path.
    if (names[t] == "pos_emb") continue;
    Matrix& m = *ps[t];
    auto i = static_cast<Eigen::Index>(r.below(static_cast<std::uint64_t>(m.size())));
    double orig = m.data()[i];
    m.data()[i] = orig + h;
    double lp = lcl_loss(p, batch).loss;
    m.data()[i] = orig - h;
    double lm = lcl_loss(p, batch).loss;
    m.data()[i] = orig;
    double fd = (lp - lm) / (2 * h), an = gs[t]->data()[i];
    double rel = std::abs(fd - an) / std::max(1e-7, std::abs(fd) + std::abs(an));
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(checked > 150);
  CHECK(worst < 1e-4);

  // Unused positional rows receive exactly zero gradient.
  CHECK(g.pos_emb.bottomRows(4).isZero(0));
  CHECK_FALSE(g.pos_emb.topRows(5).isZero(0));
}

TEST_CASE("adam") {
  ModelConfig c = tiny();
  Params p = init_params(c, 1);
  OptimizerState s = OptimizerState::zeros(c);
  Params zero = Params::zeros(c);
  Params before = p;
  adam_step(p, zero, s, 1e-3);
  CHECK(p == before);
  CHECK(s.step == 1);

  OptimizerState s2 = OptimizerState::zeros(c);
  Params g = Params::zeros(c);
  g.b_out(0, 2) = 0.37;
  Params q = before;
  adam_step(q, g, s2, 1e-3);
  CHECK(before.b_out(0, 2) - q.b_out(0, 2) == doctest::Approx(1e-3).epsilon(1e-6));

  Params a = before, b = before;
  OptimizerState sa = OptimizerState::zeros(c), sb = OptimizerState::zeros(c);
  adam_step(a, g, sa, 1e-3);
  adam_step(b, g, sb, 1e-3);
  CHECK(a == b);
  CHECK(sa == sb);

  Params big = Params::zeros(c);
  big.b_out(0, 0) = 3.0;
  big.b_out(0, 1) = 4.0;
  CHECK(clip_grad_norm(big, 1.0) == doctest::Approx(5.0));
  CHECK(big.b_out(0, 1) == doctest::Approx(0.8));
}

TEST_CASE("checkpoint round trip and corruption") {
  ModelConfig c = tiny();
  Params p = random_params(c, 3);
  OptimizerState s = OptimizerState::zeros(c);
  Rng r(2);
  std::vector<TokenSeq> batch = {random_seq(r, c, 5)};
  Params g;
  backward(p, batch, g);
  adam_step(p, g, s, 1e-3);

  auto dir = fs::temp_directory_path() / "lcl_test_net";
  fs::create_directories(dir);
  save_checkpoint(p, &s, dir / "a.lclc");
  Checkpoint ck = load_checkpoint(dir / "a.lclc");
  CHECK(ck.cfg == c);
  CHECK(ck.params == p);
  CHECK(ck.has_optimizer);
  CHECK(ck.optimizer == s);

  std::size_t header = 4 + 4 + 8 * 4 + 4;
  std::size_t names = 0;
  p.for_each([&](const std::string& n, const Matrix&) { names += 2 + n.size() + 4 + 8; });
  std::size_t P = p.parameter_count();
  CHECK(fs::file_size(dir / "a.lclc") == header + names + 8 * P + 1 + 8 + 16 * P);

  save_checkpoint(p, nullptr, dir / "b.lclc");
  CHECK_FALSE(load_checkpoint(dir / "b.lclc").has_optimizer);

  fs::copy_file(dir / "a.lclc", dir / "t.lclc", fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "t.lclc", fs::file_size(dir / "a.lclc") - 10);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.lclc"), ParseError);
  {
    std::FILE* f = std::fopen((dir / "t.lclc").c_str(), "r+b");
    std::fseek(f, 4, SEEK_SET);
    std::uint32_t v = 9;
    std::fwrite(&v, 4, 1, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "t.lclc"), ParseError);
}
