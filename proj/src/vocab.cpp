// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/vocab.hpp"

#include <stdexcept>

namespace mdmoe {

TokenSeq Vocab::encode(std::string_view text) {
  TokenSeq out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
      continue;
    }
    switch (id) {
      case kEos:
        out += "<|eos|>";
        break;
      case kMask:
        out += "<|mask|>";
        break;
      case kBos:
        out += "<|bos|>";
        break;
      case kReserved:
        out += "<|reserved|>";
        break;
      default:
        throw std::out_of_range("token id " + std::to_string(id) + " outside the byte vocabulary");
    }
  }
  return out;
}

}  // namespace mdmoe
