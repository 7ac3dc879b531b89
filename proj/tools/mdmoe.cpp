// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/cli.hpp"

int main(int argc, char** argv) { return mdmoe::cli::run(argc, argv); }
