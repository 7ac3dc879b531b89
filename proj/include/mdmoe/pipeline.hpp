// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-stage training: runs the configured stages in order, carrying
// parameters across stage boundaries and applying each stage's RoPE base,
// context length, data weights and initialization rule.

#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mdmoe/checkpoint.hpp"
#include "mdmoe/config_file.hpp"
#include "mdmoe/trainer.hpp"

namespace mdmoe {

struct PipelineOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::ostream* log = nullptr;
  // Restrict to these stage names (empty: all stages).
  std::vector<std::string> only_stages;
  // Parameters used where a stage says "previous" and no stage ran before it.
  std::optional<Checkpoint> init;
  // Continue the stage recorded in this checkpoint; earlier stages are skipped.
  std::optional<Checkpoint> resume;
  std::uint64_t max_steps_per_stage = 0;
};

struct StageSummary {
  std::string name;
  std::string kind;
  std::string init;
  std::uint64_t steps = 0;
  std::uint64_t tokens = 0;
  std::size_t L_ctx = 0;
  double rope_base = 0.0;
  std::size_t sft_dropped = 0;
  std::optional<BoundEstimate> bound;
};

struct PipelineResult {
  std::vector<StageSummary> stages;
  Checkpoint final_state;
  std::optional<Checkpoint> best;  // lowest held-out bound over pretraining stages
};

// Corpus mixture (pretrain) or SFT records for one stage. Corpora with zero
// weight are not loaded.
StageData load_stage_data(const ExperimentConfig& cfg, const StageConfig& stage);

// Held-out windows of `length` tokens, or empty when no held-out file is set.
std::vector<TokenSeq> load_heldout(const ExperimentConfig& cfg, std::size_t length);

template <class T>
PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& options = {});

}  // namespace mdmoe
