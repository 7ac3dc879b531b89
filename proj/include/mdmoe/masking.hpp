// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Absorbing-state corruption kernels over token sequences: the forward
// process masks each position independently with probability t, and the
// reverse transition from level t to s < t unmasks each masked position with
// probability (t - s) / t.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdmoe/rng.hpp"

namespace mdmoe {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct NoisySeq {
  TokenSeq ids;
  double t = 0.0;
};

// Row-major [positions x vocab] probabilities produced by a mask predictor.
struct TokenDistributions {
  std::size_t vocab = 0;
  std::vector<double> probs;

  TokenDistributions() = default;
  TokenDistributions(std::size_t positions, std::size_t vocab_size)
      : vocab(vocab_size), probs(positions * vocab_size, 0.0) {}

  std::size_t positions() const { return vocab == 0 ? 0 : probs.size() / vocab; }
  std::span<double> row(std::size_t i) { return std::span<double>(probs).subspan(i * vocab, vocab); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(probs).subspan(i * vocab, vocab);
  }
};

struct TokenPolicy {
  enum class Kind { kSample, kGreedy };
  Kind kind = Kind::kGreedy;
  double temperature = 1.0;

  static TokenPolicy sample(double temperature = 1.0) { return {Kind::kSample, temperature}; }
  static TokenPolicy greedy() { return {Kind::kGreedy, 1.0}; }
};

struct TokenChoice {
  TokenId token;
  double confidence;  // predictor probability of `token`
};

// RNG stream ids for KeyedRng draws made by the kernels.
inline constexpr std::uint64_t kUnmaskCoinStream = 1;
inline constexpr std::uint64_t kTokenDrawStream = 2;

class MaskingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Noise level uniform on [0, 1).
double sample_noise_level(Rng& rng);
// Noise level uniform on [floor, 1); floor = 0 reproduces sample_noise_level.
double sample_noise_level(Rng& rng, double floor);

// Masks each position of y independently with probability t.
NoisySeq forward_mask(std::span<const TokenId> y, double t, TokenId mask_id, Rng& rng);

// Draws a token from `dist` under `policy`, never returning `mask_id`.
// `u` is the uniform variate used by the sampling policy.
TokenChoice choose_token(std::span<const double> dist, const TokenPolicy& policy, TokenId mask_id,
                         double u);

// One reverse transition y_t -> y_s. `dists` has one row per position of
// y_t. Draws are keyed by (rng.seed, step, position_offset + i).
NoisySeq reverse_step(const NoisySeq& y_t, double s, const TokenDistributions& dists,
                      TokenId mask_id, const TokenPolicy& policy, const KeyedRng& rng,
                      std::uint64_t step, std::uint64_t position_offset = 0);

// Throws MaskingError if some row of `dists` is not a probability vector
// within `tol`.
void check_normalized(const TokenDistributions& dists, double tol = 1e-6);

}  // namespace mdmoe
