// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace mdmoe {

void DecodePlan::validate() const {
  if (gen_length == 0) throw PlanError("generation length must be positive");
  if (block_size == 0 || gen_length % block_size != 0) {
    throw PlanError("block size " + std::to_string(block_size) + " must divide generation length " +
                    std::to_string(gen_length));
  }
  if (steps_per_block == 0 || steps_per_block > block_size) {
    throw PlanError("steps per block must lie in [1, block size]");
  }
  if (policy.kind == TokenPolicy::Kind::kSample && !(policy.temperature > 0.0)) {
    throw PlanError("sampling temperature must be positive");
  }
}

TokenSeq low_confidence_remask(const BlockProposal& proposal, std::size_t n_keep, TokenId mask_id) {
  const std::size_t n = proposal.tokens.size();
  if (proposal.proposed.size() != n || proposal.confidence.size() != n) {
    throw std::invalid_argument("low_confidence_remask: proposal fields differ in length");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (proposal.proposed[i]) candidates.push_back(i);
  }
  if (n_keep > candidates.size()) {
    throw std::invalid_argument("low_confidence_remask: cannot keep " + std::to_string(n_keep) +
                                " of " + std::to_string(candidates.size()) + " proposals");
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return proposal.confidence[a] > proposal.confidence[b];
  });
  TokenSeq out = proposal.tokens;
  for (std::size_t j = n_keep; j < candidates.size(); ++j) out[candidates[j]] = mask_id;
  return out;
}

std::size_t scheduled_unmasked(std::size_t block, std::size_t step, std::size_t steps) {
  return (block * step + steps - 1) / steps;
}

TokenSeq generate_semi_ar(std::span<const TokenId> prompt, const DecodePlan& plan,
                          const MaskPredictor& predictor, const DecodeObserver& observer) {
  plan.validate();
  const TokenId mask = predictor.mask_id;
  if (prompt.size() + plan.gen_length > predictor.max_context) {
    throw ContextOverflow("prompt (" + std::to_string(prompt.size()) + ") + generation length (" +
                          std::to_string(plan.gen_length) + ") exceeds max_context " +
                          std::to_string(predictor.max_context));
  }
  const std::size_t B = plan.block_size;
  const std::size_t S = plan.steps_per_block;
  const KeyedRng rng{plan.seed};
  TokenSeq context(prompt.begin(), prompt.end());
  context.resize(prompt.size() + plan.gen_length, mask);

  for (std::size_t b = 0; b < plan.blocks(); ++b) {
    const std::size_t first = prompt.size() + b * B;
    const std::span<const TokenId> visible(context.data(), first + B);
    for (std::size_t j = 0; j < S; ++j) {
      const std::uint64_t global_step = b * S + j;
      const TokenDistributions dists = predictor.predict(visible, first);
      TokenSeq block(context.begin() + static_cast<std::ptrdiff_t>(first),
                     context.begin() + static_cast<std::ptrdiff_t>(first + B));
      if (plan.remask == DecodePlan::Remask::kNone) {
        const double t = 1.0 - static_cast<double>(j) / static_cast<double>(S);
        const double s = 1.0 - static_cast<double>(j + 1) / static_cast<double>(S);
        block = reverse_step(NoisySeq{std::move(block), t}, std::max(s, 0.0), dists, mask,
                             plan.policy, rng, global_step, b * B)
                    .ids;
      } else {
        BlockProposal proposal{block, std::vector<bool>(B, false), std::vector<double>(B, 0.0)};
        std::size_t unmasked = 0;
        for (std::size_t i = 0; i < B; ++i) {
          if (block[i] != mask) {
            ++unmasked;
            continue;
          }
          const TokenChoice c = choose_token(dists.row(i), plan.policy, mask,
                                             rng.uniform(kTokenDrawStream, global_step, b * B + i));
          proposal.tokens[i] = c.token;
          proposal.proposed[i] = true;
          proposal.confidence[i] = c.confidence;
        }
        const std::size_t target = scheduled_unmasked(B, j + 1, S);
        const std::size_t proposed = B - unmasked;
        const std::size_t keep = std::min(proposed, target > unmasked ? target - unmasked : 0);
        block = low_confidence_remask(proposal, keep, mask);
      }
      std::copy(block.begin(), block.end(), context.begin() + static_cast<std::ptrdiff_t>(first));
      if (observer) {
        observer(DecodeStep{b, j, std::span<const TokenId>(context).subspan(prompt.size())});
      }
    }
  }
  return TokenSeq(context.begin() + static_cast<std::ptrdiff_t>(prompt.size()), context.end());
}

TokenSeq generate_vanilla(std::span<const TokenId> prompt, DecodePlan plan,
                          const MaskPredictor& predictor, const DecodeObserver& observer) {
  plan.block_size = plan.gen_length;
  return generate_semi_ar(prompt, plan, predictor, observer);
}

TokenSeq truncate_at_eos(std::span<const TokenId> y, TokenId eos_id) {
  const auto it = std::find(y.begin(), y.end(), eos_id);
  return TokenSeq(y.begin(), it);
}

}  // namespace mdmoe
