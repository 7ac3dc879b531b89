// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training losses. Value-level functions take predictor distributions and are
// used by evaluation and tests; the graph-level builders produce the same
// quantities as differentiable nodes for training.

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdmoe/autodiff.hpp"
#include "mdmoe/masking.hpp"
#include "mdmoe/model.hpp"

namespace mdmoe {

struct LossWeights {
  double lb = 0.01;
  double z = 0.001;

  static LossWeights none() { return {0.0, 0.0}; }
};

struct LossBreakdown {
  double task_loss = 0.0;
  double lb_loss = 0.0;
  double z_loss = 0.0;
  double total = 0.0;
  std::size_t masked_count = 0;
};

class ObjectiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// (1/t) * sum over masked i of -log p(y_i | y_t). `dists` has one row per
// position of y. Returns 0 when nothing is masked.
double pretrain_loss(std::span<const TokenId> y, const NoisySeq& y_t,
                     const TokenDistributions& dists, TokenId mask_id);

// Same form restricted to response positions. `y_t` and `dists` cover the
// concatenation [prompt; response]; prompt positions must be unmasked.
double sft_loss(std::span<const TokenId> prompt, std::span<const TokenId> response,
                const NoisySeq& y_t, const TokenDistributions& dists, TokenId mask_id);

// N * sum_i f_i * P_i.
double load_balance_loss(const RouterDecision& decision);

// Mean over tokens of logsumexp(z_t)^2 for row-major [tokens x n] logits.
double z_loss(std::span<const double> logits, std::size_t tokens, std::size_t n);

double combine(double task, double lb, double z, const LossWeights& weights = {});

// Differentiable counterparts. Auxiliary losses average over the traced MoE
// layers; f_i is a constant of the routing decision, P_i carries gradient.
template <class T>
Var load_balance_loss(Graph<T>& g, const MoeTrace& trace);
template <class T>
Var z_loss(Graph<T>& g, const MoeTrace& trace);
template <class T>
Var mean_load_balance_loss(Graph<T>& g, std::span<const MoeTrace> traces);
template <class T>
Var mean_z_loss(Graph<T>& g, std::span<const MoeTrace> traces);

}  // namespace mdmoe
