// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Generation by iterated reverse transitions. The generated region is split
// into gen_length / block_size blocks decoded left to right; inside a block
// the noise level falls linearly from 1 to 0 over steps_per_block steps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdmoe/masking.hpp"
#include "mdmoe/model.hpp"

namespace mdmoe {

struct DecodePlan {
  enum class Remask { kLowConfidence, kNone };

  std::size_t gen_length = 1024;
  std::size_t block_size = 64;
  std::size_t steps_per_block = 64;
  TokenPolicy policy = TokenPolicy::greedy();
  Remask remask = Remask::kLowConfidence;
  std::uint64_t seed = 0;

  std::size_t blocks() const { return gen_length / block_size; }
  // Throws PlanError when block_size does not divide gen_length or
  // steps_per_block is outside [1, block_size].
  void validate() const;
};

class PlanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Anything that maps a context to token distributions for the positions
// [first, context.size()).
struct MaskPredictor {
  std::function<TokenDistributions(std::span<const TokenId> context, std::size_t first)> predict;
  TokenId mask_id = 0;
  std::size_t max_context = 0;
};

template <class T>
MaskPredictor make_predictor(const Model<T>& model) {
  return {[&model](std::span<const TokenId> ctx, std::size_t first) {
            return model.predict_context(ctx, first);
          },
          model.config().mask_id, model.config().max_context};
}

// Called after every denoising step with the whole generated region.
struct DecodeStep {
  std::size_t block;
  std::size_t step;  // within the block
  std::span<const TokenId> generated;
};
using DecodeObserver = std::function<void(const DecodeStep&)>;

// Candidate tokens for one block: `proposed[i]` marks positions predicted in
// the current step, with their chosen-token probability in `confidence[i]`.
struct BlockProposal {
  TokenSeq tokens;
  std::vector<bool> proposed;
  std::vector<double> confidence;
};

// Keeps the n_keep most confident proposals (ties: lower position first) and
// returns every other proposed position to the mask token.
TokenSeq low_confidence_remask(const BlockProposal& proposal, std::size_t n_keep, TokenId mask_id);

// Cumulative number of unmasked positions a block should hold after `step`
// (1-based) of `steps` under the linear schedule: ceil(block * step / steps).
std::size_t scheduled_unmasked(std::size_t block, std::size_t step, std::size_t steps);

// Single block covering the whole generated region (plan.block_size is
// replaced by plan.gen_length).
TokenSeq generate_vanilla(std::span<const TokenId> prompt, DecodePlan plan,
                          const MaskPredictor& predictor, const DecodeObserver& observer = {});

TokenSeq generate_semi_ar(std::span<const TokenId> prompt, const DecodePlan& plan,
                          const MaskPredictor& predictor, const DecodeObserver& observer = {});

// Prefix strictly before the first `eos_id`.
TokenSeq truncate_at_eos(std::span<const TokenId> y, TokenId eos_id);

}  // namespace mdmoe
