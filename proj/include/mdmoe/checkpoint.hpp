// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file training checkpoints. Byte layout: docs/checkpoint-format.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdmoe/model.hpp"
#include "mdmoe/tensor.hpp"

namespace mdmoe {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision : std::uint8_t { kF32 = 1, kF64 = 2 };

template <class T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::kF32 : Precision::kF64;
}

// Values are held as double in memory; f32 tensors convert exactly both ways.
struct NamedTensor {
  std::string name;
  Shape shape;
  Precision precision = Precision::kF32;
  std::vector<double> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  ModelConfig model;
  std::string config_text;  // effective experiment config, for provenance
  std::string stage;        // stage that produced the state
  std::uint64_t step = 0;          // optimizer steps taken in the stage
  std::uint64_t tokens_seen = 0;   // tokens consumed in the stage
  std::uint64_t total_tokens = 0;  // tokens consumed over all stages
  bool has_eval_bound = false;
  double eval_bound = 0.0;  // last held-out bound per token
  std::string rng_state;
  std::string data_state;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <class T>
std::vector<NamedTensor> export_parameters(const std::vector<Parameter<T>>& params);

// Copies checkpoint parameters into the model. Every model parameter must be
// present with the same shape; precision may differ.
template <class T>
void import_parameters(const std::vector<NamedTensor>& tensors, Model<T>& model);

// A model built from the checkpoint config and parameters.
template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mdmoe
