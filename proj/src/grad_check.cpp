// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mdmoe {
namespace {

double evaluate(const LossBuilder& loss) {
  Graph<double> g(false);
  const double v = g.value(loss(g))[0];
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: loss evaluated to a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options) {
  for (Parameter<double>* p : params) p->zero_grad();
  {
    Graph<double> g(true);
    const Var root = loss(g);
    if (!std::isfinite(g.value(root)[0])) {
      throw NonFiniteError("grad_check: loss evaluated to a non-finite value");
    }
    g.backward(root);
  }
  const auto state = [&]() -> std::uint64_t { return options.discrete_state ? options.discrete_state() : 0; };
  const std::uint64_t reference = state();

  GradCheckReport report;
  for (Parameter<double>* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t budget =
        options.max_coords_per_param == 0 ? n : std::min(n, options.max_coords_per_param);
    const std::size_t stride = std::max<std::size_t>(1, n / budget);
    for (std::size_t c = 0, i = 0; c < budget && i < n; ++c, i += stride) {
      const double saved = p->value[i];
      const double h = options.eps;
      bool crossed = false;
      auto at = [&](double offset) {
        p->value[i] = saved + offset;
        const double v = evaluate(loss);
        crossed = crossed || state() != reference;
        return v;
      };
      // Five-point stencil: truncation error O(h^4).
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      p->value[i] = saved;
      if (crossed) {
        ++report.coords_skipped;
        continue;
      }
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.denom_floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        if (rel >= report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = p->name;
          report.worst_index = i;
          report.worst_autodiff = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace mdmoe
