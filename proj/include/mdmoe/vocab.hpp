// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>

#include "mdmoe/masking.hpp"

namespace mdmoe {

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by reserved ids.
// Padding reuses the EOS id.
struct Vocab {
  static constexpr TokenId kEos = 256;
  static constexpr TokenId kPad = kEos;
  static constexpr TokenId kMask = 257;
  static constexpr TokenId kBos = 258;
  static constexpr TokenId kReserved = 259;
  static constexpr std::size_t kSize = 260;

  static TokenSeq encode(std::string_view text);
  // Reserved ids decode to the escape strings "<|eos|>", "<|mask|>",
  // "<|bos|>" and "<|reserved|>".
  static std::string decode(std::span<const TokenId> ids);
  static bool is_reserved(TokenId id) { return id >= 256; }
};

}  // namespace mdmoe
