// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mdmoe/autodiff.hpp"

namespace mdmoe {

struct GradCheckOptions {
  // Step of the five-point stencil.
  double eps = 2e-3;
  // Denominator floor for the relative error, so near-zero gradients are
  // judged on absolute error instead of amplified finite-difference noise.
  double denom_floor = 1e-6;
  // 0 checks every coordinate; otherwise an evenly strided subset of at most
  // this many coordinates per parameter tensor.
  std::size_t max_coords_per_param = 0;
  // Optional summary of discrete choices made by the last loss evaluation
  // (e.g. top-k expert selections). Coordinates whose perturbations change it
  // sit on a selection boundary and are skipped.
  std::function<std::uint64_t()> discrete_state;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
};

// `loss` builds a scalar on the given graph from the current parameter values.
// Compares backward() gradients with finite differences. Throws
// NonFiniteError if any evaluation is not finite.
using LossBuilder = std::function<Var(Graph<double>&)>;

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options = {});

}  // namespace mdmoe
