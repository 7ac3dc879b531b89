// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional mask predictor: token embedding, then per layer a pre-norm
// attention block (per-head RMS-normalized queries/keys, rotary positions, no
// causal mask) and a pre-norm sparse MoE block whose experts are SwiGLU
// feed-forwards, then a final RMSNorm and an untied vocabulary projection.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mdmoe/autodiff.hpp"
#include "mdmoe/masking.hpp"

namespace mdmoe {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_experts = 8;
  std::size_t n_active = 2;
  std::size_t d_expert = 64;
  double rope_base = 10000.0;
  std::size_t max_context = 2048;
  std::size_t vocab = 260;
  TokenId mask_id = 257;
  TokenId eos_id = 256;
  double norm_eps = 1e-6;
  double init_std = 0.02;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ConfigError on violated invariants.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct ParamCount {
  std::size_t total = 0;
  std::size_t active = 0;
  std::size_t embedding = 0;  // input embedding + output projection
  std::size_t expert_total = 0;
  std::size_t expert_active = 0;
  std::size_t non_embedding() const { return total - embedding; }
};

// Closed-form counts; no allocation, so billion-parameter configs are fine.
ParamCount count_parameters(const ModelConfig& cfg);

// Top-k routing of one micro-batch. Rows are tokens.
struct RouterDecision {
  std::size_t tokens = 0;
  std::size_t n_experts = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // [tokens x k], descending probability
  std::vector<double> weights;       // [tokens x k], probs at indices (not renormalized)
  std::vector<double> probs;         // [tokens x n_experts]
  std::vector<double> f;             // selection frequency: count_i / tokens, sums to k
  std::vector<double> P;             // mean routing probability, sums to 1

  std::span<const std::size_t> token_indices(std::size_t t) const {
    return std::span<const std::size_t>(indices).subspan(t * k, k);
  }
};

// Selects the k largest entries of each probability row (ties: lower expert
// index first) and fills the batch statistics.
RouterDecision decide_routing(std::span<const double> probs, std::size_t tokens,
                              std::size_t n_experts, std::size_t k);

// route(h) = decide_routing(softmax(h * router_weights)); h is [tokens x d],
// router_weights is [d x n_experts].
template <class T>
RouterDecision route(const Tensor<T>& h, const Tensor<T>& router_weights, std::size_t k);

// Per-layer routing record from a forward pass.
struct MoeTrace {
  Var router_logits;  // [tokens x n_experts]
  Var router_probs;   // [tokens x n_experts]
  RouterDecision decision;
};

struct ForwardResult {
  Var logits;                  // rows = requested output rows
  std::vector<MoeTrace> moe;   // one per layer
};

template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg);

  // Fresh parameters drawn from N(0, init_std^2); norm gains start at 1 and
  // residual output projections are scaled down by sqrt(2 * n_layers).
  void init(std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  // RoPE base and context length are not learned; they may change between
  // training stages.
  void set_rope_base(double base) { cfg_.rope_base = base; }
  void set_max_context(std::size_t n) { cfg_.max_context = n; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& param(std::string_view name);
  const Parameter<T>& param(std::string_view name) const;
  void zero_grad();

  // Binds every parameter into `g`, either as trainable leaves or as constants.
  std::vector<Var> bind_trainable(Graph<T>& g);
  std::vector<Var> bind_frozen(Graph<T>& g) const;

  // Forward over a micro-batch of independent sequences. Attention never
  // crosses sequence boundaries; the MoE router sees every token of every
  // sequence. `output_rows` index the stacked tokens (all rows when empty).
  ForwardResult forward(Graph<T>& g, std::span<const Var> bound,
                        std::span<const std::span<const TokenId>> sequences,
                        std::span<const std::size_t> output_rows = {}) const;

  // Pre-norm attention with residual. `h` is one sequence [len x d_model].
  // When `attention` is non-null the per-head attention matrices are appended.
  Var attention_block(Graph<T>& g, std::span<const Var> bound, std::size_t layer, Var h,
                      std::span<const std::int64_t> positions,
                      std::vector<Var>* attention = nullptr) const;

  // Pre-norm MoE feed-forward with residual over stacked tokens.
  Var moe_block(Graph<T>& g, std::span<const Var> bound, std::size_t layer, Var h,
                MoeTrace* trace = nullptr) const;

  // p(. | prompt, y_t) for every position of y_t.
  TokenDistributions predict(const NoisySeq& y_t, std::span<const TokenId> prompt = {}) const;
  // Distributions for positions [first, context.size()) of a full context.
  TokenDistributions predict_context(std::span<const TokenId> context, std::size_t first) const;

 private:
  struct ExpertSlots {
    std::size_t w_gate, w_up, w_down;
  };
  struct LayerSlots {
    std::size_t attn_norm, wq, wk, wv, wo, q_norm, k_norm, ffn_norm, router;
    std::vector<ExpertSlots> experts;
  };

  std::size_t add_param(std::string name, Shape shape, bool decay);

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::size_t embed_ = 0, final_norm_ = 0, unembed_ = 0;
  std::vector<LayerSlots> layers_;
};

}  // namespace mdmoe
