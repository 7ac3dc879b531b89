// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace mdmoe {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_;
  if (!is) throw std::runtime_error("corrupt RNG state");
}

}  // namespace mdmoe
