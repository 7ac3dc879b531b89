// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/objectives.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace mdmoe {
namespace {

double masked_nll(std::span<const TokenId> targets, std::span<const TokenId> noisy,
                  const TokenDistributions& dists, std::size_t offset, TokenId mask_id,
                  std::size_t* count) {
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (noisy[offset + i] != mask_id) continue;
    const TokenId y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= dists.vocab) {
      throw ObjectiveError("target token outside the vocabulary");
    }
    const double p = dists.row(offset + i)[static_cast<std::size_t>(y)];
    total += p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
    ++*count;
  }
  return total;
}

}  // namespace

double pretrain_loss(std::span<const TokenId> y, const NoisySeq& y_t,
                     const TokenDistributions& dists, TokenId mask_id) {
  if (y_t.ids.size() != y.size() || dists.positions() != y.size()) {
    throw ObjectiveError("pretrain_loss: y, y_t and distributions must have equal length");
  }
  std::size_t count = 0;
  const double nll = masked_nll(y, y_t.ids, dists, 0, mask_id, &count);
  if (count == 0) return 0.0;
  if (!(y_t.t > 0.0)) throw ObjectiveError("pretrain_loss: masked positions at noise level t = 0");
  return nll / y_t.t;
}

double sft_loss(std::span<const TokenId> prompt, std::span<const TokenId> response,
                const NoisySeq& y_t, const TokenDistributions& dists, TokenId mask_id) {
  const std::size_t n = prompt.size() + response.size();
  if (y_t.ids.size() != n || dists.positions() != n) {
    throw ObjectiveError("sft_loss: y_t and distributions must cover prompt and response");
  }
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (y_t.ids[i] == mask_id) {
      throw ObjectiveError("sft_loss: prompt position " + std::to_string(i) + " is masked");
    }
  }
  std::size_t count = 0;
  const double nll = masked_nll(response, y_t.ids, dists, prompt.size(), mask_id, &count);
  if (count == 0) return 0.0;
  if (!(y_t.t > 0.0)) throw ObjectiveError("sft_loss: masked positions at noise level t = 0");
  return nll / y_t.t;
}

double load_balance_loss(const RouterDecision& decision) {
  if (decision.tokens == 0) throw ObjectiveError("load_balance_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < decision.n_experts; ++i) acc += decision.f[i] * decision.P[i];
  return static_cast<double>(decision.n_experts) * acc;
}

double z_loss(std::span<const double> logits, std::size_t tokens, std::size_t n) {
  if (tokens == 0) throw ObjectiveError("z_loss: no tokens");
  if (logits.size() != tokens * n) throw ObjectiveError("z_loss: logits have the wrong size");
  double acc = 0.0;
  for (std::size_t t = 0; t < tokens; ++t) {
    const double lse = logsumexp_of(logits.subspan(t * n, n));
    acc += lse * lse;
  }
  return acc / static_cast<double>(tokens);
}

double combine(double task, double lb, double z, const LossWeights& weights) {
  return task + weights.lb * lb + weights.z * z;
}

template <class T>
Var load_balance_loss(Graph<T>& g, const MoeTrace& trace) {
  const RouterDecision& d = trace.decision;
  if (d.tokens == 0) throw ObjectiveError("load_balance_loss: empty batch");
  std::vector<T> scaled_f(d.n_experts);
  for (std::size_t i = 0; i < d.n_experts; ++i) {
    scaled_f[i] = static_cast<T>(static_cast<double>(d.n_experts) * d.f[i]);
  }
  return ops::weighted_sum<T>(g, ops::mean_rows(g, trace.router_probs), scaled_f);
}

template <class T>
Var z_loss(Graph<T>& g, const MoeTrace& trace) {
  return ops::mean(g, ops::square(g, ops::logsumexp(g, trace.router_logits, 1)));
}

template <class T>
Var mean_load_balance_loss(Graph<T>& g, std::span<const MoeTrace> traces) {
  if (traces.empty()) throw ObjectiveError("no MoE layers traced");
  Var acc = load_balance_loss(g, traces[0]);
  for (std::size_t i = 1; i < traces.size(); ++i) acc = ops::add(g, acc, load_balance_loss(g, traces[i]));
  return ops::scale(g, acc, T(1) / static_cast<T>(traces.size()));
}

template <class T>
Var mean_z_loss(Graph<T>& g, std::span<const MoeTrace> traces) {
  if (traces.empty()) throw ObjectiveError("no MoE layers traced");
  Var acc = z_loss(g, traces[0]);
  for (std::size_t i = 1; i < traces.size(); ++i) acc = ops::add(g, acc, z_loss(g, traces[i]));
  return ops::scale(g, acc, T(1) / static_cast<T>(traces.size()));
}

template Var load_balance_loss<float>(Graph<float>&, const MoeTrace&);
template Var load_balance_loss<double>(Graph<double>&, const MoeTrace&);
template Var z_loss<float>(Graph<float>&, const MoeTrace&);
template Var z_loss<double>(Graph<double>&, const MoeTrace&);
template Var mean_load_balance_loss<float>(Graph<float>&, std::span<const MoeTrace>);
template Var mean_load_balance_loss<double>(Graph<double>&, std::span<const MoeTrace>);
template Var mean_z_loss<float>(Graph<float>&, std::span<const MoeTrace>);
template Var mean_z_loss<double>(Graph<double>&, std::span<const MoeTrace>);

}  // namespace mdmoe
