// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/data.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "mdmoe/vocab.hpp"
#include "test_util.hpp"

namespace mdmoe {
namespace {

CorpusMixture small_mixture() {
  const std::vector<std::string> docs{"the quick brown fox", "jumps over", "the lazy dog"};
  CorpusMixture m;
  m.add(PackedCorpus("toy", docs), 1.0);
  return m;
}

SftRecord record(std::initializer_list<std::pair<const char*, const char*>> turns) {
  SftRecord r;
  for (const auto& [p, q] : turns) r.turns.push_back({p, q});
  return r;
}

TEST(Vocab, EncodeDecode) {
  EXPECT_TRUE(Vocab::encode("").empty());
  EXPECT_EQ(Vocab::decode(TokenSeq{}), "");
  EXPECT_EQ(Vocab::encode("ab"), (TokenSeq{97, 98}));
  EXPECT_EQ(Vocab::decode(TokenSeq{97, 98}), "ab");
  EXPECT_EQ(Vocab::decode(TokenSeq{97, Vocab::kEos, Vocab::kMask, Vocab::kBos}), "a<|eos|><|mask|><|bos|>");
  EXPECT_EQ(Vocab::kPad, Vocab::kEos);
}

TEST(Vocab, ArbitraryBytesRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng.below(64), '\0');
    for (char& c : s) c = static_cast<char>(rng.below(256));
    const TokenSeq ids = Vocab::encode(s);
    for (TokenId id : ids) EXPECT_FALSE(Vocab::is_reserved(id));
    EXPECT_EQ(Vocab::decode(ids), s);
  }
}

TEST(Corpus, SplitsOnBlankLines) {
  const auto docs = split_documents("one\nline two\n\n\nthree\n  \nfour\n");
  EXPECT_EQ(docs, (std::vector<std::string>{"one\nline two", "three", "four"}));
}

TEST(Corpus, PacksDocumentsWithEosSeparators) {
  const std::vector<std::string> docs{"ab", "c"};
  PackedCorpus c("x", docs);
  EXPECT_EQ(c.stream(), (TokenSeq{97, 98, Vocab::kEos, 99, Vocab::kEos}));
  EXPECT_EQ(c.take(3), (TokenSeq{97, 98, Vocab::kEos}));
  EXPECT_EQ(c.take(4), (TokenSeq{99, Vocab::kEos, 97, 98}));  // wraps
  EXPECT_EQ(c.consumed(), 7u);
}

TEST(Corpus, MissingFileNamesThePath) {
  try {
    PackedCorpus::from_file("gone", "/nonexistent/dir/corpus.txt");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/corpus.txt"), std::string::npos);
  }
}

TEST(Corpus, EmptyMixtureThrows) {
  CorpusMixture empty;
  Rng rng(2);
  EXPECT_THROW(pretrain_batch(empty, 16, 2, rng), DataError);
  EXPECT_THROW(PackedCorpus("e", std::vector<std::string>{}), DataError);
}

TEST(Corpus, MixtureFollowsWeights) {
  CorpusMixture m;
  m.add(PackedCorpus("a", std::vector<std::string>{"aaaa"}), 3.0);
  m.add(PackedCorpus("b", std::vector<std::string>{"bbbb"}), 1.0);
  m.add(PackedCorpus("c", std::vector<std::string>{"cccc"}), 0.0);
  Rng rng(3);
  int a = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const TokenSeq s = m.take(2, rng);
    EXPECT_NE(s[0], 'c');
    a += s[0] == 'a' || (s[0] == Vocab::kEos && s[1] == 'a');
  }
  EXPECT_NEAR(static_cast<double>(a) / n, 0.75, 0.015);
}

TEST(Corpus, StateRoundTrip) {
  CorpusMixture m = small_mixture();
  Rng rng(4);
  m.take(7, rng);
  const std::string state = m.state();
  const TokenSeq next = m.take(9, rng);
  CorpusMixture other = small_mixture();
  other.restore(state);
  Rng rng2(4);
  rng2.next();  // a single corpus draws no mixture randomness either way
  EXPECT_EQ(other.take(9, rng2), next);
}

TEST(PretrainBatch, DefaultBatchesAreFullLengthAndClean) {
  CorpusMixture m = small_mixture();
  Rng rng(5);
  VariableLengthOptions never;
  never.probability = 0.0;
  const PretrainBatch b = pretrain_batch(m, 16, 4, rng, never);
  ASSERT_EQ(b.sequences.size(), 4u);
  EXPECT_FALSE(b.variable_length);
  for (const auto& s : b.sequences) {
    EXPECT_EQ(s.size(), 16u);
    for (TokenId id : s) EXPECT_NE(id, Vocab::kMask);
  }
}

TEST(PretrainBatch, VariableLengthFrequencyAndRange) {
  CorpusMixture m = small_mixture();
  Rng rng(6);
  const int n = 100000;
  int variable = 0;
  for (int i = 0; i < n; ++i) {
    const PretrainBatch b = pretrain_batch(m, 32, 1, rng);
    if (b.variable_length) {
      ++variable;
      EXPECT_GE(b.length, 8u);
      EXPECT_LE(b.length, 32u);
    } else {
      EXPECT_EQ(b.length, 32u);
    }
    for (const auto& s : b.sequences) EXPECT_EQ(s.size(), b.length);
  }
  EXPECT_NEAR(static_cast<double>(variable) / n, 0.01, 0.002);
}

TEST(PretrainBatch, PackingPreservesTokenCounts) {
  CorpusMixture m = small_mixture();
  Rng rng(7);
  VariableLengthOptions often;
  often.probability = 0.5;
  std::uint64_t emitted = 0;
  TokenSeq all;
  for (int i = 0; i < 200; ++i) {
    for (const auto& s : pretrain_batch(m, 24, 3, rng, often).sequences) {
      emitted += s.size();
      all.insert(all.end(), s.begin(), s.end());
    }
  }
  EXPECT_EQ(m.corpus(0).consumed(), emitted);
  // The concatenated batches replay the packed stream without gaps.
  const TokenSeq& stream = m.corpus(0).stream();
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], stream[i % stream.size()]);
}

TEST(Sft, ParsesRecordsAndRejectsMalformedOnes) {
  const SftRecord r = parse_sft_record(R"({"turns": [{"prompt": "hi", "response": "hello"}]})");
  ASSERT_EQ(r.turns.size(), 1u);
  EXPECT_EQ(r.turns[0].response, "hello");
  EXPECT_THROW(parse_sft_record(R"({"turns": []})"), DataError);
  EXPECT_THROW(parse_sft_record(R"({"turns": [{"prompt": "", "response": "x"}]})"), DataError);
  EXPECT_THROW(parse_sft_record(R"({"turns": [{"prompt": "x"}]})"), DataError);
  EXPECT_THROW(parse_sft_record("not json"), DataError);
}

TEST(Sft, LoadReportsLineNumbers) {
  const auto dir = testing::temp_dir("sft_load");
  const auto path = dir / "bad.jsonl";
  std::ofstream(path) << R"({"turns": [{"prompt": "a", "response": "b"}]})" << "\n{\"turns\": 3}\n";
  try {
    load_sft_records(path);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Sft, SingleTurnIsAPlainPair) {
  const SftRecord r = record({{"hi", "yo"}});
  TokenSeq want{Vocab::kBos};
  for (TokenId id : Vocab::encode("Q: hi\nA: ")) want.push_back(id);
  EXPECT_EQ(format_prompt(r, 1), want);
  EXPECT_EQ(format_response("yo"), (TokenSeq{'y', 'o', Vocab::kEos}));
}

TEST(Sft, EarlierTurnsAreVisibleInFull) {
  const SftRecord r = record({{"a", "b"}, {"c", "d"}});
  const std::string text = Vocab::decode(format_prompt(r, 2));
  EXPECT_EQ(text, "<|bos|>Q: a\nA: b<|eos|><|bos|>Q: c\nA: ");
}

TEST(Sft, PaddingToLongestResponse) {
  // Responses of 3 and 5 tokens (EOS terminator included).
  const std::vector<SftRecord> recs{record({{"p", "ab"}}), record({{"q", "abcd"}})};
  Rng rng(8);
  const SftBatch b = sft_batch(recs, 64, rng);
  ASSERT_EQ(b.examples.size(), 2u);
  EXPECT_EQ(b.examples[0].response, (TokenSeq{'a', 'b', Vocab::kEos, Vocab::kEos, Vocab::kEos}));
  EXPECT_EQ(b.examples[1].response.size(), 5u);
  for (const auto& ex : b.examples) {
    const auto in_loss = std::count(ex.in_loss.begin(), ex.in_loss.end(), 1);
    EXPECT_EQ(in_loss, 5);
    for (std::size_t i = 0; i < ex.prompt.size(); ++i) EXPECT_EQ(ex.in_loss[i], 0);
    for (std::size_t i = ex.prompt.size(); i < ex.in_loss.size(); ++i) EXPECT_EQ(ex.in_loss[i], 1);
  }
}

TEST(Sft, OverlongSamplesAreDropped) {
  const std::vector<SftRecord> recs{record({{"p", "ab"}}), record({{"q", std::string(100, 'x').c_str()}})};
  Rng rng(9);
  const SftBatch b = sft_batch(recs, 32, rng);
  EXPECT_EQ(b.dropped, 1u);
  ASSERT_EQ(b.examples.size(), 1u);
  EXPECT_EQ(b.examples[0].response.size(), 3u);
}

TEST(Sft, TargetTurnIsUniform) {
  const std::vector<SftRecord> recs{record({{"a", "b"}, {"c", "d"}, {"e", "f"}})};
  Rng rng(10);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sft_batch(recs, 256, rng).examples[0].tau];
  for (int tau = 1; tau <= 3; ++tau) EXPECT_NEAR(counts[tau] / double(n), 1.0 / 3, 0.01);
}

TEST(Sft, ShippedDataParses) {
  const auto train = load_sft_records(testing::source_dir() / "data/sft/train.jsonl");
  const auto held = load_sft_records(testing::source_dir() / "data/sft/heldout.jsonl");
  EXPECT_GE(train.size(), 1000u);
  EXPECT_GE(held.size(), 50u);
}

}  // namespace
}  // namespace mdmoe
