// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, sft, sample, eval, route-stats, grad-check.
// Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mdmoe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "MDMOE_CONFIG";

int run(int argc, char** argv);
// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdmoe::cli
