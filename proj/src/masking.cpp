// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/masking.hpp"

#include <cmath>
#include <string>

namespace mdmoe {

double sample_noise_level(Rng& rng) { return rng.uniform(); }

double sample_noise_level(Rng& rng, double floor) {
  if (floor < 0.0 || floor >= 1.0) throw MaskingError("noise floor must lie in [0, 1)");
  return floor + (1.0 - floor) * rng.uniform();
}

NoisySeq forward_mask(std::span<const TokenId> y, double t, TokenId mask_id, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw MaskingError("noise level outside [0, 1]: " + std::to_string(t));
  NoisySeq out{TokenSeq(y.begin(), y.end()), t};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == mask_id) {
      throw MaskingError("clean sequence contains the mask token at position " + std::to_string(i));
    }
    if (rng.uniform() < t) out.ids[i] = mask_id;
  }
  return out;
}

void check_normalized(const TokenDistributions& dists, double tol) {
  for (std::size_t i = 0; i < dists.positions(); ++i) {
    double total = 0.0;
    for (double p : dists.row(i)) {
      if (!(p >= 0.0)) throw MaskingError("negative or NaN probability at position " + std::to_string(i));
      total += p;
    }
    if (std::abs(total - 1.0) > tol) {
      throw MaskingError("distribution at position " + std::to_string(i) + " sums to " +
                         std::to_string(total));
    }
  }
}

TokenChoice choose_token(std::span<const double> dist, const TokenPolicy& policy, TokenId mask_id,
                         double u) {
  const auto masked = [&](std::size_t j) { return static_cast<TokenId>(j) == mask_id; };
  if (policy.kind == TokenPolicy::Kind::kGreedy) {
    std::size_t best = dist.size();
    for (std::size_t j = 0; j < dist.size(); ++j) {
      if (masked(j)) continue;
      if (best == dist.size() || dist[j] > dist[best]) best = j;
    }
    return {static_cast<TokenId>(best), dist[best]};
  }
  if (!(policy.temperature > 0.0)) throw MaskingError("sampling temperature must be positive");
  const double inv_temp = 1.0 / policy.temperature;
  const bool plain = policy.temperature == 1.0;
  double total = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (!masked(j) && dist[j] > 0.0) total += plain ? dist[j] : std::pow(dist[j], inv_temp);
  }
  if (!(total > 0.0)) throw MaskingError("distribution has no mass outside the mask token");
  const double target = u * total;
  double acc = 0.0;
  std::size_t last = dist.size();
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (masked(j) || !(dist[j] > 0.0)) continue;
    acc += plain ? dist[j] : std::pow(dist[j], inv_temp);
    last = j;
    if (target < acc) return {static_cast<TokenId>(j), dist[j]};
  }
  return {static_cast<TokenId>(last), dist[last]};
}

NoisySeq reverse_step(const NoisySeq& y_t, double s, const TokenDistributions& dists,
                      TokenId mask_id, const TokenPolicy& policy, const KeyedRng& rng,
                      std::uint64_t step, std::uint64_t position_offset) {
  const double t = y_t.t;
  if (!(s >= 0.0) || !(s < t) || t > 1.0) {
    throw MaskingError("reverse_step needs 0 <= s < t <= 1, got s=" + std::to_string(s) +
                       " t=" + std::to_string(t));
  }
  if (dists.positions() != y_t.ids.size()) {
    throw MaskingError("one predictor distribution per position required");
  }
  check_normalized(dists);
  const double stay_masked = s / t;
  NoisySeq out{y_t.ids, s};
  for (std::size_t i = 0; i < y_t.ids.size(); ++i) {
    if (y_t.ids[i] != mask_id) continue;
    const std::uint64_t pos = position_offset + i;
    if (rng.uniform(kUnmaskCoinStream, step, pos) < stay_masked) continue;
    out.ids[i] = choose_token(dists.row(i), policy, mask_id, rng.uniform(kTokenDrawStream, step, pos)).token;
  }
  return out;
}

}  // namespace mdmoe
