// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. Files use a TOML subset: [section] headers
// (including dotted names such as [stages.2]), `key = value` lines with
// strings, integers, floats, booleans or one-level inline tables, and `#`
// comments. Unknown sections and keys are errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mdmoe/data.hpp"
#include "mdmoe/model.hpp"
#include "mdmoe/sampler.hpp"

namespace mdmoe {

class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigValue;
using ConfigTable = std::map<std::string, ConfigValue>;

struct ConfigValue {
  std::variant<std::string, std::int64_t, double, bool, ConfigTable> v;

  std::string describe() const;
};

struct ConfigDocument {
  // Section name -> keys, in file order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, ConfigTable> sections;

  static ConfigDocument parse(std::string_view text, const std::string& origin = "<config>");
  // `dotted` is section.key=value or section.table.member=value.
  void apply_override(std::string_view dotted);
};

struct TrainConfig {
  std::uint64_t seed = 1234;
  std::string precision = "f32";  // f32 | f64
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double lb_weight = 0.01;
  double z_weight = 0.001;
  double noise_floor = 1e-3;
  std::size_t log_interval = 10;
  std::size_t eval_sequences = 16;
  std::size_t eval_mc = 4;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DataConfig {
  std::map<std::string, std::string> corpora;  // name -> text file
  std::string heldout;                         // text file for evaluate_bound
  std::string sft;                             // JSONL records
  std::string sft_heldout;                     // JSONL records (optional)
  double variable_length_prob = 0.01;
  std::size_t variable_length_min = 8;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct StageConfig {
  enum class Kind { kPretrain, kSft };

  std::string name;
  Kind kind = Kind::kPretrain;
  std::uint64_t token_budget = 0;
  std::map<std::string, double> corpus_weights;  // empty = every corpus at weight 1
  std::size_t L_ctx = 128;
  double rope_base = 10000.0;
  std::size_t batch_size = 8;
  double lr_peak = 3e-3;
  double warmup_fraction = 0.05;
  std::string decay = "cosine";  // cosine | linear | constant
  double lr_floor = 0.1;         // fraction of lr_peak reached at the end
  std::string init = "previous";  // scratch | previous | best | <checkpoint path>
  std::size_t eval_interval = 0;  // steps; 0 = only at stage end
  std::size_t checkpoint_interval = 0;

  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DecodePlan sampler;
  std::vector<StageConfig> stages;

  static ExperimentConfig from_document(const ConfigDocument& doc);
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides = {});
  // Canonical text form; parsing it reproduces this config.
  std::string to_text() const;
  void validate() const;
};

// The five-stage desk-scale pipeline on the bundled corpora.
ExperimentConfig desk_default_config();

// FNV-1a over the canonical [model] section.
std::uint64_t model_digest(const ModelConfig& cfg);
std::string model_section_text(const ModelConfig& cfg);

std::string stage_kind_name(StageConfig::Kind kind);

}  // namespace mdmoe
