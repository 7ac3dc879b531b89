// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimizer, learning-rate schedule, single-stage training loop and held-out
// evaluation.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mdmoe/checkpoint.hpp"
#include "mdmoe/config_file.hpp"
#include "mdmoe/data.hpp"
#include "mdmoe/grad_check.hpp"
#include "mdmoe/model.hpp"
#include "mdmoe/objectives.hpp"
#include "mdmoe/rng.hpp"

namespace mdmoe {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// Adam with bias correction and decoupled weight decay:
//   p <- p * (1 - lr * wd)          (only parameters with decay = true)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Moments are kept in double regardless of the parameter precision.
template <class T>
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<Parameter<T>>& params);

  // Throws NonFiniteError if a gradient is NaN/Inf; parameters are then untouched.
  void step(std::vector<Parameter<T>>& params, double lr);

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<NamedTensor> export_moment(bool second, const std::vector<Parameter<T>>& params) const;
  void restore(const std::vector<NamedTensor>& m, const std::vector<NamedTensor>& v,
               std::uint64_t steps);

 private:
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

template <class T>
double global_grad_norm(const std::vector<Parameter<T>>& params);

// Rescales all gradients so their global L2 norm is at most max_norm
// (max_norm <= 0 disables clipping). Returns the norm before clipping and
// throws NonFiniteError when it is not finite.
template <class T>
double clip_gradients(std::vector<Parameter<T>>& params, double max_norm);

// Learning rate as a function of training progress in [0, 1]: linear warmup
// over warmup_fraction, then decay (cosine | linear | constant) from peak down
// to floor_fraction * peak at progress 1.
struct LrSchedule {
  double peak = 3e-3;
  double warmup_fraction = 0.05;
  std::string decay = "cosine";
  double floor_fraction = 0.1;

  double at(double progress) const;
};

struct StepMetrics {
  std::string stage;
  std::uint64_t step = 0;    // 1-based within the stage
  std::uint64_t tokens = 0;  // tokens seen in the stage after this step
  double task_loss = 0.0;    // per-token objective, batch mean
  double lb_loss = 0.0;      // mean over MoE layers
  double z_loss = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;    // before clipping
  double max_f = 0.0;        // largest expert selection frequency over layers
  std::size_t masked = 0;
  std::size_t length = 0;    // sequence length (pretrain) or longest sample (SFT)
  bool variable_length = false;
  std::vector<std::vector<double>> f;  // per layer, per expert
  std::optional<double> eval_bound;
  std::optional<double> eval_stderr;

  // One line of the metrics log (JSON object, no trailing newline).
  std::string to_json() const;
};

struct BoundEstimate {
  double mean = 0.0;    // nats per token
  double std_error = 0.0;  // standard error of the mean
  std::size_t samples = 0;
};

// Monte-Carlo estimate of the diffusion bound per token: for every held-out
// sequence, n_mc draws of (t ~ U[noise_floor, 1), forward mask), each scored
// as (1/t) * sum_masked -log p / length. Draws are seeded, so repeated calls
// return identical estimates.
template <class T>
BoundEstimate evaluate_bound(const Model<T>& model, std::span<const TokenSeq> heldout,
                             std::size_t n_mc, std::uint64_t seed, double noise_floor = 1e-3);

// Consecutive, non-overlapping windows of `length` tokens from the start of
// a packed corpus (at most `count`).
std::vector<TokenSeq> heldout_windows(const PackedCorpus& corpus, std::size_t length,
                                      std::size_t count);

struct RoutingStats {
  std::size_t tokens = 0;
  std::size_t n_experts = 0;
  std::size_t k = 0;
  std::vector<std::vector<double>> f;  // per layer: count_i / tokens, sums to k
  std::vector<std::vector<double>> P;  // per layer: mean routing probability

  double max_f() const;
};

// Router statistics pooled over all tokens of `sequences`. With mask_inputs
// every sequence is first forward-masked at a seeded t ~ U[0, 1), which is
// what the router sees during training; otherwise clean text is routed.
template <class T>
RoutingStats routing_stats(const Model<T>& model, std::span<const TokenSeq> sequences,
                           std::uint64_t seed, bool mask_inputs = true);

// Everything a stage draws training examples from.
struct StageData {
  CorpusMixture mixture;         // pretrain stages
  std::vector<SftRecord> sft;    // SFT stages
};

// Per-stage RNG seed derived from the experiment seed and the stage name.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage_name);

// Runs optimizer steps for one stage. Owns the optimizer and the data RNG;
// the model is borrowed and updated in place.
template <class T>
class StageTrainer {
 public:
  StageTrainer(const ExperimentConfig& cfg, const StageConfig& stage, Model<T>& model,
               StageData data, std::uint64_t total_tokens_before = 0);

  bool done() const { return tokens_seen_ >= stage_.token_budget; }
  StepMetrics step();

  std::uint64_t steps() const { return optimizer_.steps(); }
  std::uint64_t tokens_seen() const { return tokens_seen_; }
  std::uint64_t total_tokens() const { return total_before_ + tokens_seen_; }
  double current_lr() const;
  const StageConfig& stage() const { return stage_; }
  std::size_t sft_dropped() const { return sft_dropped_; }

  // Full resumable state: parameters, moments, RNG, data cursors, counters.
  Checkpoint checkpoint(const std::string& config_text = {}) const;
  void resume(const Checkpoint& ckpt);

 private:
  StepMetrics pretrain_step();
  StepMetrics sft_step();
  StepMetrics finish_step(std::vector<TokenSeq>& inputs, std::vector<std::size_t>& rows,
                          std::vector<std::int32_t>& targets, std::vector<T>& weights,
                          std::size_t tokens, std::size_t length);

  ExperimentConfig cfg_;
  StageConfig stage_;
  Model<T>& model_;
  StageData data_;
  AdamW<T> optimizer_;
  LrSchedule schedule_;
  Rng rng_;
  std::uint64_t tokens_seen_ = 0;
  std::uint64_t total_before_ = 0;
  std::size_t sft_dropped_ = 0;
};

struct StageRunOptions {
  std::filesystem::path out_dir;    // empty: no files written
  std::ostream* metrics = nullptr;  // JSONL sink, one record per step
  std::ostream* log = nullptr;      // human-readable progress every log_interval steps
  std::span<const TokenSeq> heldout;
  std::uint64_t max_steps = 0;      // 0: run until the token budget is spent
  std::uint64_t total_tokens_before = 0;
  const Checkpoint* resume = nullptr;
  std::string config_text;
};

struct StageResult {
  Checkpoint final_state;
  std::optional<BoundEstimate> final_bound;
  std::optional<Checkpoint> best;  // lowest held-out bound seen in the stage
  std::optional<BoundEstimate> best_bound;
  std::uint64_t steps = 0;
  std::size_t sft_dropped = 0;
};

// Trains until the budget is consumed (or max_steps), evaluating on
// `heldout` every eval_interval steps and at the end, and writing periodic
// checkpoints to out_dir/<stage>-step<N>.ckpt when checkpoint_interval > 0.
// A zero budget returns the initial state unchanged.
template <class T>
StageResult train_stage(const ExperimentConfig& cfg, const StageConfig& stage, Model<T>& model,
                        StageData data, const StageRunOptions& options = {});

// Finite-difference check of the full training loss (diffusion objective on
// a random masked batch plus weighted auxiliary losses) in double precision.
struct ModelGradCheckOptions {
  std::size_t batch = 2;
  std::size_t length = 6;
  // Larger than the training init so router margins dwarf the FD step and
  // gradients sit well above the relative-error floor.
  double init_std = 0.5;
  // Auxiliary weights raised to 1 so their gradients are not swamped.
  LossWeights weights{1.0, 1.0};
  GradCheckOptions check;
};

GradCheckReport check_model_gradients(const ModelConfig& cfg, std::uint64_t seed,
                                      const ModelGradCheckOptions& options = {});

}  // namespace mdmoe
