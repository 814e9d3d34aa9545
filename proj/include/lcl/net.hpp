// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lcl/tokens.hpp"

namespace lcl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t max_seq = 65;
  /// Label vocabulary size: episodic symbols plus one global symbol per train class.
  std::uint32_t vocab = 916;
  /// Leading vocabulary region reserved for episode-local symbols.
  std::uint32_t n_episodic = 16;
  /// Input embedding dimension.
  std::uint32_t dim_in = 64;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Matrix ln1_g, ln1_b;
  Matrix w_q, w_k, w_v, w_o, b_o;
  /// 1 x n_heads logits of the per-head key smear: key_t = a k_t + (1 - a) k_{t-1}, a = sigmoid(smear).
  Matrix smear;
  Matrix ln2_g, ln2_b;
  Matrix w_ff1, b_ff1, w_ff2, b_ff2;
};

/// All transformer weights. Row vectors (biases, norm gains) are 1 x n matrices
/// so every tensor shares one type.
struct Params {
  ModelConfig cfg;
  Matrix w_in, b_in;  // dim_in x d_model, 1 x d_model
  Matrix sym_emb;     // vocab x d_model
  Matrix pos_emb;     // max_seq x d_model
  std::vector<LayerParams> layers;
  Matrix lnf_g, lnf_b;
  Matrix w_out, b_out;  // d_model x vocab, 1 x vocab

  /// Zero tensors with the shapes implied by `cfg`.
  static Params zeros(const ModelConfig& cfg);

  /// Visits every tensor in canonical order with its dotted name.
  template <typename F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const Params& other) const;

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& self, F& f) {
    f("w_in", self.w_in);
    f("b_in", self.b_in);
    f("sym_emb", self.sym_emb);
    f("pos_emb", self.pos_emb);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      f(p + "ln1_g", l.ln1_g);
      f(p + "ln1_b", l.ln1_b);
      f(p + "w_q", l.w_q);
      f(p + "w_k", l.w_k);
      f(p + "smear", l.smear);
      f(p + "w_v", l.w_v);
      f(p + "w_o", l.w_o);
      f(p + "b_o", l.b_o);
      f(p + "ln2_g", l.ln2_g);
      f(p + "ln2_b", l.ln2_b);
      f(p + "w_ff1", l.w_ff1);
      f(p + "b_ff1", l.b_ff1);
      f(p + "w_ff2", l.w_ff2);
      f(p + "b_ff2", l.b_ff2);
    }
    f("lnf_g", self.lnf_g);
    f("lnf_b", self.lnf_b);
    f("w_out", self.w_out);
    f("b_out", self.b_out);
  }
};

/// Gaussian(0, 0.02) tables and projections, unit norm gains, zero biases,
/// zero output head. Deterministic in `seed`.
Params init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Logits for every position of one sequence (seq.size() x vocab). Strictly causal.
Matrix forward(const Params& p, const TokenSeq& seq);

/// Logits at the last position of each sequence (batch x vocab).
Matrix final_logits(const Params& p, std::span<const TokenSeq> batch);

/// Row-wise softmax, max-shifted.
Matrix softmax_rows(const Matrix& logits);

struct LossOptions {
  /// Restrict the softmax to the episodic symbol region.
  bool episodic_only = false;
};

struct LossResult {
  /// Mean over the batch of per-sequence summed target NLL.
  double loss = 0.0;
  std::vector<double> per_sequence;
};

LossResult lcl_loss(const Params& p, std::span<const TokenSeq> batch, const LossOptions& opt = {});

/// Loss and its gradient with respect to every parameter. `grad` is resized
/// and overwritten.
LossResult backward(const Params& p, std::span<const TokenSeq> batch, Params& grad,
                    const LossOptions& opt = {});

struct OptimizerState {
  Params m;
  Params v;
  std::uint64_t step = 0;

  static OptimizerState zeros(const ModelConfig& cfg);
  bool operator==(const OptimizerState&) const = default;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place.
void adam_step(Params& p, const Params& g, OptimizerState& s, double lr, const AdamHyper& h = {});

/// Scales `g` so its global L2 norm is at most `max_norm`. Returns the norm before scaling.
double clip_grad_norm(Params& g, double max_norm);

/// Binary checkpoint, magic "LCLC", version 1.
void save_checkpoint(const Params& p, const OptimizerState* s, const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig cfg;
  Params params;
  bool has_optimizer = false;
  OptimizerState optimizer;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lcl
