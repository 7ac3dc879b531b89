// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/checkpoint.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <cstring>
#include <iterator>

#include "test_util.hpp"

namespace mdmoe {
namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_experts = 3;
  c.n_active = 2;
  c.d_expert = 4;
  c.vocab = 10;
  c.mask_id = 9;
  c.eos_id = 8;
  c.max_context = 32;
  c.rope_base = 50000;
  return c;
}

Checkpoint sample_checkpoint() {
  Model<float> m(tiny());
  m.init(3);
  Checkpoint c;
  c.model = m.config();
  c.config_text = "[model]\nn_layers = 1\n";
  c.stage = "anneal2";
  c.step = 17;
  c.tokens_seen = 12345;
  c.total_tokens = 99999;
  c.has_eval_bound = true;
  c.eval_bound = 2.718281828459045;
  c.rng_state = "1 2 3";
  c.data_state = "plays 10 20\n";
  c.params = export_parameters(m.parameters());
  c.adam_m = c.params;
  for (auto& t : c.adam_m) {
    t.precision = Precision::kF64;
    for (double& v : t.values) v = v / 3.0;  // not representable in f32
  }
  c.adam_v = c.adam_m;
  return c;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = testing::temp_dir("ckpt_roundtrip");
  const Checkpoint c = sample_checkpoint();
  c.save(dir / "a.ckpt");
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  const Checkpoint back = Checkpoint::load(dir / "a.ckpt");
  EXPECT_EQ(back, c);
  // Saving the loaded state reproduces the same bytes.
  back.save(dir / "b.ckpt");
  EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
}

TEST(Checkpoint, BeginsWithMagicAndVersion) {
  const auto dir = testing::temp_dir("ckpt_magic");
  sample_checkpoint().save(dir / "a.ckpt");
  const std::string bytes = read_bytes(dir / "a.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "MDMOECKP");
  EXPECT_EQ(bytes.substr(bytes.size() - 8), "MDMOEEND");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  EXPECT_EQ(version, Checkpoint::kVersion);
}

TEST(Checkpoint, NewerVersionIsRejected) {
  const auto dir = testing::temp_dir("ckpt_version");
  sample_checkpoint().save(dir / "a.ckpt");
  std::string bytes = read_bytes(dir / "a.ckpt");
  const std::uint32_t future = Checkpoint::kVersion + 1;
  std::memcpy(bytes.data() + 8, &future, 4);
  write_bytes(dir / "a.ckpt", bytes);
  try {
    Checkpoint::load(dir / "a.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("newer"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto dir = testing::temp_dir("ckpt_corrupt");
  sample_checkpoint().save(dir / "a.ckpt");
  const std::string bytes = read_bytes(dir / "a.ckpt");
  write_bytes(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(Checkpoint::load(dir / "short.ckpt"), CheckpointError);
  write_bytes(dir / "magic.ckpt", "NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(Checkpoint::load(dir / "magic.ckpt"), CheckpointError);
  write_bytes(dir / "tail.ckpt", bytes + "x");
  EXPECT_THROW(Checkpoint::load(dir / "tail.ckpt"), CheckpointError);
  EXPECT_THROW(Checkpoint::load(dir / "missing.ckpt"), CheckpointError);
}

TEST(Checkpoint, ModelRebuildsAcrossPrecisions) {
  const Checkpoint c = sample_checkpoint();
  const Model<double> md = model_from_checkpoint<double>(c);
  const Model<float> mf = model_from_checkpoint<float>(c);
  EXPECT_EQ(md.config(), c.model);
  const NoisySeq y{{1, 2, 9, 4}, 0.5};
  const auto pd = md.predict(y).probs;
  const auto pf = mf.predict(y).probs;
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_NEAR(pd[i], pf[i], 1e-5);
  EXPECT_EQ(export_parameters(mf.parameters()), c.params);
}

TEST(Checkpoint, ImportRejectsMismatchedShapes) {
  const Checkpoint c = sample_checkpoint();
  ModelConfig other = tiny();
  other.d_expert = 6;
  Model<float> m(other);
  EXPECT_THROW(import_parameters(c.params, m), CheckpointError);
  auto missing = c.params;
  missing.pop_back();
  Model<float> same(tiny());
  EXPECT_THROW(import_parameters(missing, same), CheckpointError);
}

}  // namespace
}  // namespace mdmoe
