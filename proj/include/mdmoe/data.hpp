// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion and batch assembly for pretraining and SFT.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdmoe/masking.hpp"
#include "mdmoe/rng.hpp"

namespace mdmoe {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Documents are separated by one or more blank lines.
std::vector<std::string> split_documents(std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

// A corpus packed into one token stream, each document followed by EOS.
// Reads wrap around at the end of the stream.
class PackedCorpus {
 public:
  PackedCorpus(std::string name, std::span<const std::string> documents);
  static PackedCorpus from_file(std::string name, const std::filesystem::path& path);

  const std::string& name() const { return name_; }
  std::size_t size() const { return stream_.size(); }
  const TokenSeq& stream() const { return stream_; }

  TokenSeq take(std::size_t n);
  std::uint64_t consumed() const { return consumed_; }
  std::size_t cursor() const { return cursor_; }
  void restore(std::size_t cursor, std::uint64_t consumed);

 private:
  std::string name_;
  TokenSeq stream_;
  std::size_t cursor_ = 0;
  std::uint64_t consumed_ = 0;
};

// Weighted choice between packed corpora, one draw per sequence.
class CorpusMixture {
 public:
  void add(PackedCorpus corpus, double weight);
  bool empty() const { return corpora_.empty(); }
  std::size_t size() const { return corpora_.size(); }
  PackedCorpus& corpus(std::size_t i) { return corpora_[i]; }
  const PackedCorpus& corpus(std::size_t i) const { return corpora_[i]; }
  PackedCorpus* find(const std::string& name);
  void set_weight(const std::string& name, double weight);
  double weight(std::size_t i) const { return weights_[i]; }

  TokenSeq take(std::size_t n, Rng& rng);

  // Cursor positions of every corpus, for checkpoints.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::vector<PackedCorpus> corpora_;
  std::vector<double> weights_;
};

struct VariableLengthOptions {
  double probability = 0.01;
  std::size_t min_length = 8;
};

struct PretrainBatch {
  std::vector<TokenSeq> sequences;
  std::size_t length = 0;
  bool variable_length = false;
};

// batch_size sequences of exactly L_ctx tokens; with probability
// options.probability one length in [min_length, L_ctx] is drawn and every
// sequence of the batch is truncated to it.
PretrainBatch pretrain_batch(CorpusMixture& corpus, std::size_t L_ctx, std::size_t batch_size,
                             Rng& rng, const VariableLengthOptions& options = {});

struct SftTurn {
  std::string prompt;
  std::string response;
};

struct SftRecord {
  std::vector<SftTurn> turns;
};

// One JSON object per line: {"turns": [{"prompt": "...", "response": "..."}, ...]}.
std::vector<SftRecord> load_sft_records(const std::filesystem::path& path);
SftRecord parse_sft_record(std::string_view json_line);

// Visible prompt for target turn tau (1-based): earlier turns in full, then
// the tau-th prompt. Template per turn: BOS "Q: " prompt "\nA: " response EOS.
TokenSeq format_prompt(const SftRecord& record, std::size_t tau);
// Response bytes followed by a single EOS terminator.
TokenSeq format_response(std::string_view response);

struct SftExample {
  TokenSeq prompt;
  TokenSeq response;                  // includes EOS terminator and padding
  std::vector<std::uint8_t> in_loss;  // over prompt + response; 1 for response positions
  std::size_t tau = 1;
};

struct SftBatch {
  std::vector<SftExample> examples;
  std::size_t dropped = 0;  // samples longer than L_max
};

// Draws a target turn per record, drops samples whose prompt + response
// exceed L_max, and pads responses with EOS to the longest response of the
// batch (never past L_max).
SftBatch sft_batch(std::span<const SftRecord> records, std::size_t L_max, Rng& rng);

}  // namespace mdmoe
