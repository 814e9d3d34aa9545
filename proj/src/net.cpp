// SPDX-License-Identifier: Apache-2.0
#include "lcl/net.hpp"

#include <cmath>
#include <numbers>

#include "binio.hpp"
#include "lcl/error.hpp"
#include "lcl/rng.hpp"

namespace lcl {
namespace {

using Vector = Eigen::VectorXd;

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitScale = 0.02;

// ---------------------------------------------------------------------------
// Layer norm over rows.

void layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& xhat,
                        Vector& rstd, Matrix& out) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = x.row(i).sum() / d;
    auto centered = x.row(i).array() - mean;
    double var = centered.square().sum() / d;
    rstd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * rstd[i];
  }
  out = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Accumulates into dgain/dbias and returns the input gradient.
Matrix layer_norm_backward(const Matrix& dout, const Matrix& xhat, const Vector& rstd,
                           const Matrix& gain, Matrix& dgain, Matrix& dbias) {
  dgain.row(0) += (dout.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dout.colwise().sum();
  Matrix dxhat = dout.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(xhat.cols());
  Matrix dx(xhat.rows(), xhat.cols());
  for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
    double mean_dxhat = dxhat.row(i).sum() / d;
    double mean_dxhat_xhat = dxhat.row(i).dot(xhat.row(i)) / d;
    dx.row(i) = rstd[i] * (dxhat.row(i).array() - mean_dxhat - xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation.

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// ---------------------------------------------------------------------------
// Forward trace.

struct LayerTrace {
  Matrix x;
  Matrix xhat1, a1;
  Vector rstd1;
  Matrix q, k, v;
  Matrix ks;  // smeared keys
  std::vector<Matrix> probs;  // [seq * n_heads + head]
  Matrix y;
  Matrix h;
  Matrix xhat2, a2;
  Vector rstd2;
  Matrix f1, g;
};

struct Trace {
  std::vector<Eigen::Index> offsets;
  std::vector<Eigen::Index> lengths;
  std::vector<Eigen::Index> cont_rows;
  Matrix cont_inputs;
  std::vector<std::pair<Eigen::Index, SymbolId>> sym_rows;
  std::vector<LayerTrace> layers;
  Matrix x_final, xhatf, af;
  Vector rstdf;
  std::vector<Eigen::Index> head_rows;
  Matrix logits;  // head_rows.size() x vocab
};

Eigen::Index total_tokens(std::span<const TokenSeq> batch) {
  Eigen::Index n = 0;
  for (const auto& s : batch) n += static_cast<Eigen::Index>(s.size());
  return n;
}

void check_sequence(const ModelConfig& cfg, const TokenSeq& seq) {
  if (seq.tokens.empty()) throw ConfigError("empty token sequence");
  if (seq.size() > cfg.max_seq) {
    throw ConfigError("sequence of " + std::to_string(seq.size()) + " tokens exceeds max_seq " +
                      std::to_string(cfg.max_seq));
  }
  for (const auto& t : seq.tokens) {
    if (t.is_symbol) {
      if (t.symbol >= cfg.vocab) throw LookupError("symbol " + std::to_string(t.symbol) + " outside vocabulary");
    } else if (t.values.size() != cfg.dim_in) {
      throw ConfigError("continuous token has dimension " + std::to_string(t.values.size()) +
                        ", model expects " + std::to_string(cfg.dim_in));
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Each head's key at t mixes in the key at t - 1 of the same sequence.
void smear_keys(const ModelConfig& cfg, const Trace& tr, const Matrix& smear, const Matrix& k,
                Matrix& ks) {
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  ks.resize(k.rows(), k.cols());
  for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
    const double a = sigmoid(smear(0, h));
    const Eigen::Index c = h * dh;
    for (std::size_t s = 0; s < tr.offsets.size(); ++s) {
      const Eigen::Index o = tr.offsets[s];
      ks.block(o, c, 1, dh) = a * k.block(o, c, 1, dh);
      for (Eigen::Index t = 1; t < tr.lengths[s]; ++t) {
        ks.block(o + t, c, 1, dh) = a * k.block(o + t, c, 1, dh) + (1.0 - a) * k.block(o + t - 1, c, 1, dh);
      }
    }
  }
}

// Maps the gradient w.r.t. smeared keys back to raw keys and the smear logits.
Matrix smear_keys_backward(const ModelConfig& cfg, const Trace& tr, const Matrix& smear,
                           const Matrix& k, const Matrix& dks, Matrix& dsmear) {
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  Matrix dk = Matrix::Zero(k.rows(), k.cols());
  for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
    const double a = sigmoid(smear(0, h));
    const Eigen::Index c = h * dh;
    double da = 0.0;
    for (std::size_t s = 0; s < tr.offsets.size(); ++s) {
      const Eigen::Index o = tr.offsets[s];
      da += dks.block(o, c, 1, dh).cwiseProduct(k.block(o, c, 1, dh)).sum();
      dk.block(o, c, 1, dh) += a * dks.block(o, c, 1, dh);
      for (Eigen::Index t = 1; t < tr.lengths[s]; ++t) {
        auto g = dks.block(o + t, c, 1, dh);
        da += g.cwiseProduct(k.block(o + t, c, 1, dh) - k.block(o + t - 1, c, 1, dh)).sum();
        dk.block(o + t, c, 1, dh) += a * g;
        dk.block(o + t - 1, c, 1, dh) += (1.0 - a) * g;
      }
    }
    dsmear(0, h) += da * a * (1.0 - a);
  }
  return dk;
}

void attention_forward(const ModelConfig& cfg, const Trace& tr, LayerTrace& lt) {
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  lt.y.setZero(lt.q.rows(), lt.q.cols());
  lt.probs.resize(tr.offsets.size() * cfg.n_heads);
  for (std::size_t s = 0; s < tr.offsets.size(); ++s) {
    const Eigen::Index o = tr.offsets[s];
    const Eigen::Index T = tr.lengths[s];
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index c = h * dh;
      Matrix& a = lt.probs[s * cfg.n_heads + h];
      a.noalias() = lt.q.block(o, c, T, dh) * lt.ks.block(o, c, T, dh).transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, a(i, j) * scale);
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(a(i, j) * scale - mx);
          sum += a(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) a(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < T; ++j) a(i, j) = 0.0;
      }
      lt.y.block(o, c, T, dh).noalias() = a * lt.v.block(o, c, T, dh);
    }
  }
}

enum class HeadRows { kTargets, kAll, kLast };

void run_forward(const Params& p, std::span<const TokenSeq> batch, HeadRows which, Trace& tr) {
  const auto& cfg = p.cfg;
  if (batch.empty()) throw ConfigError("empty batch");
  const Eigen::Index n = total_tokens(batch);
  const Eigen::Index d = cfg.d_model;

  tr.offsets.clear();
  tr.lengths.clear();
  tr.cont_rows.clear();
  tr.sym_rows.clear();
  tr.head_rows.clear();
  Eigen::Index n_cont = 0;
  {
    Eigen::Index off = 0;
    for (const auto& s : batch) {
      check_sequence(cfg, s);
      tr.offsets.push_back(off);
      tr.lengths.push_back(static_cast<Eigen::Index>(s.size()));
      for (const auto& t : s.tokens) n_cont += t.is_symbol ? 0 : 1;
      off += static_cast<Eigen::Index>(s.size());
    }
  }

  tr.cont_inputs.resize(n_cont, cfg.dim_in);
  Matrix x = Matrix::Zero(n, d);
  {
    Eigen::Index row = 0;
    Eigen::Index ci = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& seq = batch[s];
      for (std::size_t t = 0; t < seq.size(); ++t, ++row) {
        const auto& tok = seq.tokens[t];
        if (tok.is_symbol) {
          tr.sym_rows.emplace_back(row, tok.symbol);
          x.row(row) = p.sym_emb.row(tok.symbol);
        } else {
          tr.cont_rows.push_back(row);
          tr.cont_inputs.row(ci++) = Eigen::Map<const Eigen::RowVectorXd>(tok.values.data(), cfg.dim_in);
        }
        x.row(row) += p.pos_emb.row(static_cast<Eigen::Index>(t));
      }
      if (which == HeadRows::kAll) {
        for (std::size_t t = 0; t < seq.size(); ++t) {
          tr.head_rows.push_back(tr.offsets[s] + static_cast<Eigen::Index>(t));
        }
      } else if (which == HeadRows::kLast) {
        tr.head_rows.push_back(tr.offsets[s] + static_cast<Eigen::Index>(seq.size()) - 1);
      } else {
        for (const auto& tg : seq.targets) {
          if (tg.position >= seq.size()) throw IndexError("target position outside sequence");
          tr.head_rows.push_back(tr.offsets[s] + static_cast<Eigen::Index>(tg.position));
        }
      }
    }
    if (n_cont > 0) {
      Matrix proj = tr.cont_inputs * p.w_in;
      for (Eigen::Index i = 0; i < n_cont; ++i) {
        x.row(tr.cont_rows[i]) += proj.row(i) + p.b_in.row(0);
      }
    }
  }

  tr.layers.resize(cfg.n_layers);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lp = p.layers[l];
    auto& lt = tr.layers[l];
    lt.x = std::move(x);
    layer_norm_forward(lt.x, lp.ln1_g, lp.ln1_b, lt.xhat1, lt.rstd1, lt.a1);
    lt.q.noalias() = lt.a1 * lp.w_q;
    lt.k.noalias() = lt.a1 * lp.w_k;
    lt.v.noalias() = lt.a1 * lp.w_v;
    smear_keys(cfg, tr, lp.smear, lt.k, lt.ks);
    attention_forward(cfg, tr, lt);
    lt.h = lt.x;
    lt.h.noalias() += lt.y * lp.w_o;
    lt.h.rowwise() += lp.b_o.row(0);
    layer_norm_forward(lt.h, lp.ln2_g, lp.ln2_b, lt.xhat2, lt.rstd2, lt.a2);
    lt.f1.noalias() = lt.a2 * lp.w_ff1;
    lt.f1.rowwise() += lp.b_ff1.row(0);
    lt.g = lt.f1.unaryExpr([](double v) { return gelu(v); });
    x = lt.h;
    x.noalias() += lt.g * lp.w_ff2;
    x.rowwise() += lp.b_ff2.row(0);
  }
  tr.x_final = std::move(x);
  layer_norm_forward(tr.x_final, p.lnf_g, p.lnf_b, tr.xhatf, tr.rstdf, tr.af);

  Matrix sel(static_cast<Eigen::Index>(tr.head_rows.size()), d);
  for (std::size_t i = 0; i < tr.head_rows.size(); ++i) sel.row(i) = tr.af.row(tr.head_rows[i]);
  tr.logits.noalias() = sel * p.w_out;
  tr.logits.rowwise() += p.b_out.row(0);
}

// Loss over head rows (which follow target order). Fills dlogits when non-null.
LossResult target_loss(const ModelConfig& cfg, std::span<const TokenSeq> batch, const Matrix& logits,
                       const LossOptions& opt, Matrix* dlogits) {
  const Eigen::Index hi = opt.episodic_only ? cfg.n_episodic : cfg.vocab;
  LossResult res;
  res.per_sequence.assign(batch.size(), 0.0);
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    if (batch[s].targets.empty()) throw ConfigError("sequence has no target positions");
    for (const auto& tg : batch[s].targets) {
      if (static_cast<Eigen::Index>(tg.symbol) >= hi) {
        throw ConfigError("target symbol " + std::to_string(tg.symbol) + " outside the scored vocabulary");
      }
      auto r = logits.row(row).head(hi);
      double mx = r.maxCoeff();
      double sum = (r.array() - mx).exp().sum();
      double lse = mx + std::log(sum);
      res.per_sequence[s] += lse - r(tg.symbol);
      if (dlogits) {
        auto dr = dlogits->row(row).head(hi);
        dr = (r.array() - lse).exp() * inv_b;
        dr(tg.symbol) -= inv_b;
      }
      ++row;
    }
  }
  for (double v : res.per_sequence) res.loss += v;
  res.loss *= inv_b;
  return res;
}

void run_backward(const Params& p, const Trace& tr, const Matrix& dlogits, Params& g) {
  const auto& cfg = p.cfg;
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index n = tr.x_final.rows();

  Matrix sel(static_cast<Eigen::Index>(tr.head_rows.size()), d);
  for (std::size_t i = 0; i < tr.head_rows.size(); ++i) sel.row(i) = tr.af.row(tr.head_rows[i]);
  g.w_out.noalias() += sel.transpose() * dlogits;
  g.b_out.row(0) += dlogits.colwise().sum();
  Matrix dsel = dlogits * p.w_out.transpose();
  Matrix daf = Matrix::Zero(n, d);
  for (std::size_t i = 0; i < tr.head_rows.size(); ++i) daf.row(tr.head_rows[i]) += dsel.row(i);

  Matrix dx = layer_norm_backward(daf, tr.xhatf, tr.rstdf, p.lnf_g, g.lnf_g, g.lnf_b);

  const Eigen::Index dh = d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::uint32_t li = cfg.n_layers; li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lt = tr.layers[li];
    auto& lg = g.layers[li];

    // Feed-forward branch.
    lg.w_ff2.noalias() += lt.g.transpose() * dx;
    lg.b_ff2.row(0) += dx.colwise().sum();
    Matrix dgact = dx * lp.w_ff2.transpose();
    Matrix df1 = dgact.array() * lt.f1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    lg.w_ff1.noalias() += lt.a2.transpose() * df1;
    lg.b_ff1.row(0) += df1.colwise().sum();
    Matrix da2 = df1 * lp.w_ff1.transpose();
    Matrix dh_res = dx + layer_norm_backward(da2, lt.xhat2, lt.rstd2, lp.ln2_g, lg.ln2_g, lg.ln2_b);

    // Attention branch.
    lg.w_o.noalias() += lt.y.transpose() * dh_res;
    lg.b_o.row(0) += dh_res.colwise().sum();
    Matrix dy = dh_res * lp.w_o.transpose();
    Matrix dq = Matrix::Zero(n, d);
    Matrix dk = Matrix::Zero(n, d);
    Matrix dv = Matrix::Zero(n, d);
    for (std::size_t s = 0; s < tr.offsets.size(); ++s) {
      const Eigen::Index o = tr.offsets[s];
      const Eigen::Index T = tr.lengths[s];
      for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
        const Eigen::Index c = h * dh;
        const Matrix& a = lt.probs[s * cfg.n_heads + h];
        auto dyh = dy.block(o, c, T, dh);
        Matrix da = dyh * lt.v.block(o, c, T, dh).transpose();
        dv.block(o, c, T, dh).noalias() += a.transpose() * dyh;
        Vector rowdot = (a.array() * da.array()).rowwise().sum();
        Matrix ds = (a.array() * (da.array().colwise() - rowdot.array())) * scale;
        dq.block(o, c, T, dh).noalias() += ds * lt.ks.block(o, c, T, dh);
        dk.block(o, c, T, dh).noalias() += ds.transpose() * lt.q.block(o, c, T, dh);
      }
    }
    dk = smear_keys_backward(cfg, tr, lp.smear, lt.k, dk, lg.smear);
    lg.w_q.noalias() += lt.a1.transpose() * dq;
    lg.w_k.noalias() += lt.a1.transpose() * dk;
    lg.w_v.noalias() += lt.a1.transpose() * dv;
    Matrix da1 = dq * lp.w_q.transpose();
    da1.noalias() += dk * lp.w_k.transpose();
    da1.noalias() += dv * lp.w_v.transpose();
    dx = dh_res + layer_norm_backward(da1, lt.xhat1, lt.rstd1, lp.ln1_g, lg.ln1_g, lg.ln1_b);
  }

  // Input embeddings.
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < tr.offsets.size(); ++s) {
    for (Eigen::Index t = 0; t < tr.lengths[s]; ++t, ++row) g.pos_emb.row(t) += dx.row(row);
  }
  for (const auto& [r, sym] : tr.sym_rows) g.sym_emb.row(sym) += dx.row(r);
  if (!tr.cont_rows.empty()) {
    Matrix dcont(static_cast<Eigen::Index>(tr.cont_rows.size()), d);
    for (std::size_t i = 0; i < tr.cont_rows.size(); ++i) dcont.row(i) = dx.row(tr.cont_rows[i]);
    g.w_in.noalias() += tr.cont_inputs.transpose() * dcont;
    g.b_in.row(0) += dcont.colwise().sum();
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || dim_in == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (max_seq < 1) throw ConfigError("max_seq must be positive");
  if (n_episodic < 2 || n_episodic > vocab) throw ConfigError("need 2 <= n_episodic <= vocab");
}

Params Params::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index ff = cfg.d_ff;
  Params p;
  p.cfg = cfg;
  p.w_in = Matrix::Zero(cfg.dim_in, d);
  p.b_in = Matrix::Zero(1, d);
  p.sym_emb = Matrix::Zero(cfg.vocab, d);
  p.pos_emb = Matrix::Zero(cfg.max_seq, d);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g = Matrix::Zero(1, d);
    l.ln1_b = Matrix::Zero(1, d);
    l.w_q = Matrix::Zero(d, d);
    l.w_k = Matrix::Zero(d, d);
    l.w_v = Matrix::Zero(d, d);
    l.w_o = Matrix::Zero(d, d);
    l.b_o = Matrix::Zero(1, d);
    l.smear = Matrix::Zero(1, cfg.n_heads);
    l.ln2_g = Matrix::Zero(1, d);
    l.ln2_b = Matrix::Zero(1, d);
    l.w_ff1 = Matrix::Zero(d, ff);
    l.b_ff1 = Matrix::Zero(1, ff);
    l.w_ff2 = Matrix::Zero(ff, d);
    l.b_ff2 = Matrix::Zero(1, d);
  }
  p.lnf_g = Matrix::Zero(1, d);
  p.lnf_b = Matrix::Zero(1, d);
  p.w_out = Matrix::Zero(d, cfg.vocab);
  p.b_out = Matrix::Zero(1, cfg.vocab);
  return p;
}

std::size_t Params::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool Params::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool Params::operator==(const Params& other) const {
  if (!(cfg == other.cfg)) return false;
  std::vector<const Matrix*> mine;
  for_each([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
  std::size_t i = 0;
  bool eq = true;
  other.for_each([&](const std::string&, const Matrix& m) {
    const Matrix& a = *mine[i++];
    eq = eq && a.rows() == m.rows() && a.cols() == m.cols() && a == m;
  });
  return eq;
}

Params init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Params p = Params::zeros(cfg);
  Rng root = Rng(seed).split("init");
  p.for_each([&](const std::string& name, Matrix& m) {
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (name == "w_out" || name == "b_out" || ends_with(".smear")) return;  // zero head, even smear
    if (ends_with("_g")) {
      m.setOnes();
      return;
    }
    if (name.rfind("b_", 0) == 0 || name.find(".b_") != std::string::npos || ends_with("_b")) return;
    Rng r = root.split(name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = kInitScale * r.normal();
  });
  return p;
}

Matrix forward(const Params& p, const TokenSeq& seq) {
  Trace tr;
  run_forward(p, std::span<const TokenSeq>(&seq, 1), HeadRows::kAll, tr);
  return std::move(tr.logits);
}

Matrix final_logits(const Params& p, std::span<const TokenSeq> batch) {
  Matrix out(static_cast<Eigen::Index>(batch.size()), p.cfg.vocab);
  constexpr std::size_t kChunk = 64;
  Trace tr;
  for (std::size_t start = 0; start < batch.size(); start += kChunk) {
    std::size_t end = std::min(batch.size(), start + kChunk);
    run_forward(p, batch.subspan(start, end - start), HeadRows::kLast, tr);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = tr.logits;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

LossResult lcl_loss(const Params& p, std::span<const TokenSeq> batch, const LossOptions& opt) {
  Trace tr;
  run_forward(p, batch, HeadRows::kTargets, tr);
  return target_loss(p.cfg, batch, tr.logits, opt, nullptr);
}

LossResult backward(const Params& p, std::span<const TokenSeq> batch, Params& grad,
                    const LossOptions& opt) {
  Trace tr;
  run_forward(p, batch, HeadRows::kTargets, tr);
  Matrix dlogits;
  LossResult res = target_loss(p.cfg, batch, tr.logits, opt, &dlogits);
  grad = Params::zeros(p.cfg);
  run_backward(p, tr, dlogits, grad);
  return res;
}

OptimizerState OptimizerState::zeros(const ModelConfig& cfg) {
  return OptimizerState{Params::zeros(cfg), Params::zeros(cfg), 0};
}

void adam_step(Params& p, const Params& g, OptimizerState& s, double lr, const AdamHyper& h) {
  if (!(p.cfg == g.cfg) || !(p.cfg == s.m.cfg) || !(p.cfg == s.v.cfg)) {
    throw ConfigError("parameter, gradient and optimizer shapes differ");
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.step));
  std::vector<Matrix*> params, ms, vs;
  std::vector<const Matrix*> grads;
  p.for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
  s.m.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
  s.v.for_each([&](const std::string&, Matrix& m) { vs.push_back(&m); });
  g.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto gi = grads[i]->array();
    ms[i]->array() = h.beta1 * ms[i]->array() + (1.0 - h.beta1) * gi;
    vs[i]->array() = h.beta2 * vs[i]->array() + (1.0 - h.beta2) * gi.square();
    params[i]->array() -=
        lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + h.eps);
  }
}

double clip_grad_norm(Params& g, double max_norm) {
  double sq = 0.0;
  g.for_each([&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); });
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double f = max_norm / norm;
    g.for_each([&](const std::string&, Matrix& m) { m *= f; });
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint format:
//   "LCLC" u32 version
//   u32 x 8 config (d_model n_layers n_heads d_ff max_seq vocab n_episodic dim_in)
//   u32 tensor count, then per tensor: u16 name_len, name, u32 rank, u32 dims[rank], f64 data
//   u8 optimizer flag; if set: u64 step, f64 first moments, f64 second moments
//   (tensor order and shapes as above, data only)

namespace {
constexpr std::string_view kCheckpointMagic = "LCLC";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_data(binio::Writer& w, const Params& p) {
  p.for_each([&](const std::string&, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  });
}

void read_data(binio::Reader& r, Params& p, std::string_view what) {
  p.for_each([&](const std::string&, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64(what);
  });
}
}  // namespace

void save_checkpoint(const Params& p, const OptimizerState* s, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& c = p.cfg;
  for (std::uint32_t v : {c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq, c.vocab, c.n_episodic, c.dim_in}) {
    w.u32(v);
  }
  std::uint32_t count = 0;
  p.for_each([&](const std::string&, const Matrix&) { ++count; });
  w.u32(count);
  p.for_each([&](const std::string& name, const Matrix& m) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
  });
  w.u8(s ? 1 : 0);
  if (s) {
    w.u64(s->step);
    write_data(w, s->m);
    write_data(w, s->v);
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = binio::Reader::from_file(path);
  if (r.bytes(4, "magic") != kCheckpointMagic) r.fail("bad magic, expected \"LCLC\"");
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  auto& c = ck.cfg;
  for (std::uint32_t* f : {&c.d_model, &c.n_layers, &c.n_heads, &c.d_ff, &c.max_seq, &c.vocab, &c.n_episodic, &c.dim_in}) {
    *f = r.u32("model config");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid model config: ") + e.what());
  }
  ck.params = Params::zeros(c);
  std::uint32_t count = r.u32("tensor count");
  std::uint32_t expected = 0;
  ck.params.for_each([&](const std::string&, const Matrix&) { ++expected; });
  if (count != expected) {
    r.fail("tensor count " + std::to_string(count) + " does not match config (" + std::to_string(expected) + ")");
  }
  ck.params.for_each([&](const std::string& name, Matrix& m) {
    std::uint16_t len = r.u16("tensor name length");
    std::string got = r.bytes(len, "tensor name");
    if (got != name) r.fail("expected tensor \"" + name + "\", found \"" + got + "\"");
    std::uint32_t rank = r.u32("tensor rank");
    if (rank != 2) r.fail("tensor " + name + " has rank " + std::to_string(rank) + ", expected 2");
    std::uint32_t rows = r.u32("tensor dims");
    std::uint32_t cols = r.u32("tensor dims");
    if (rows != m.rows() || cols != m.cols()) r.fail("tensor " + name + " shape does not match config");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64(name);
  });
  std::uint8_t flag = r.u8("optimizer flag");
  if (flag > 1) r.fail("bad optimizer presence flag");
  ck.has_optimizer = flag == 1;
  if (ck.has_optimizer) {
    ck.optimizer = OptimizerState::zeros(c);
    ck.optimizer.step = r.u64("optimizer step");
    read_data(r, ck.optimizer.m, "first moments");
    read_data(r, ck.optimizer.v, "second moments");
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace lcl
