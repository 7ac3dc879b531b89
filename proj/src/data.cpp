// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mdmoe/vocab.hpp"

namespace mdmoe {
namespace {

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

void append(TokenSeq& dst, const TokenSeq& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    if (is_blank(line)) {
      if (!current.empty()) docs.push_back(std::move(current));
      current.clear();
    } else {
      if (!current.empty()) current.push_back('\n');
      current.append(line);
    }
    pos = nl + 1;
  }
  if (!current.empty()) docs.push_back(std::move(current));
  return docs;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PackedCorpus::PackedCorpus(std::string name, std::span<const std::string> documents)
    : name_(std::move(name)) {
  for (const auto& doc : documents) {
    append(stream_, Vocab::encode(doc));
    stream_.push_back(Vocab::kEos);
  }
  if (stream_.empty()) throw DataError("corpus '" + name_ + "' is empty");
}

PackedCorpus PackedCorpus::from_file(std::string name, const std::filesystem::path& path) {
  const auto docs = split_documents(read_text_file(path));
  if (docs.empty()) throw DataError("corpus file " + path.string() + " contains no documents");
  return PackedCorpus(std::move(name), docs);
}

TokenSeq PackedCorpus::take(std::size_t n) {
  TokenSeq out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t chunk = std::min(n - out.size(), stream_.size() - cursor_);
    out.insert(out.end(), stream_.begin() + static_cast<std::ptrdiff_t>(cursor_),
               stream_.begin() + static_cast<std::ptrdiff_t>(cursor_ + chunk));
    cursor_ = (cursor_ + chunk) % stream_.size();
  }
  consumed_ += n;
  return out;
}

void PackedCorpus::restore(std::size_t cursor, std::uint64_t consumed) {
  if (cursor >= stream_.size()) throw DataError("corpus cursor out of range for '" + name_ + "'");
  cursor_ = cursor;
  consumed_ = consumed;
}

void CorpusMixture::add(PackedCorpus corpus, double weight) {
  if (!(weight >= 0.0)) throw DataError("corpus weight must be non-negative");
  corpora_.push_back(std::move(corpus));
  weights_.push_back(weight);
}

PackedCorpus* CorpusMixture::find(const std::string& name) {
  for (auto& c : corpora_) {
    if (c.name() == name) return &c;
  }
  return nullptr;
}

void CorpusMixture::set_weight(const std::string& name, double weight) {
  for (std::size_t i = 0; i < corpora_.size(); ++i) {
    if (corpora_[i].name() == name) {
      if (!(weight >= 0.0)) throw DataError("corpus weight must be non-negative");
      weights_[i] = weight;
      return;
    }
  }
  throw DataError("unknown corpus '" + name + "'");
}

TokenSeq CorpusMixture::take(std::size_t n, Rng& rng) {
  if (corpora_.empty()) throw DataError("no corpora configured");
  double total = 0.0;
  for (double w : weights_) total += w;
  if (!(total > 0.0)) throw DataError("all corpus weights are zero");
  std::size_t pick = 0;
  if (corpora_.size() > 1) {
    const double u = rng.uniform() * total;
    double acc = 0.0;
    pick = corpora_.size() - 1;
    for (std::size_t i = 0; i < corpora_.size(); ++i) {
      acc += weights_[i];
      if (u < acc && weights_[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  return corpora_[pick].take(n);
}

std::string CorpusMixture::state() const {
  std::ostringstream os;
  for (const auto& c : corpora_) os << c.name() << ' ' << c.cursor() << ' ' << c.consumed() << '\n';
  return os.str();
}

void CorpusMixture::restore(const std::string& state) {
  std::istringstream is(state);
  std::string name;
  std::size_t cursor;
  std::uint64_t consumed;
  while (is >> name >> cursor >> consumed) {
    PackedCorpus* c = find(name);
    if (c == nullptr) throw DataError("data state names unknown corpus '" + name + "'");
    c->restore(cursor, consumed);
  }
}

PretrainBatch pretrain_batch(CorpusMixture& corpus, std::size_t L_ctx, std::size_t batch_size,
                             Rng& rng, const VariableLengthOptions& options) {
  if (corpus.empty()) throw DataError("pretrain_batch: empty corpus");
  if (L_ctx == 0 || batch_size == 0) throw DataError("pretrain_batch: zero context or batch size");
  PretrainBatch batch;
  batch.length = L_ctx;
  if (rng.uniform() < options.probability) {
    const std::size_t lo = std::min(options.min_length, L_ctx);
    batch.length = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(L_ctx)));
    batch.variable_length = true;
  }
  for (std::size_t b = 0; b < batch_size; ++b) {
    // Reading only the truncated prefix keeps every corpus token in play.
    batch.sequences.push_back(corpus.take(batch.length, rng));
  }
  return batch;
}

SftRecord parse_sft_record(std::string_view json_line) {
  const auto j = nlohmann::json::parse(json_line, nullptr, false);
  if (j.is_discarded()) throw DataError("SFT record is not valid JSON");
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array()) {
    throw DataError("SFT record must be an object with a 'turns' array");
  }
  SftRecord rec;
  for (const auto& turn : j["turns"]) {
    if (!turn.is_object() || !turn.contains("prompt") || !turn.contains("response") ||
        !turn["prompt"].is_string() || !turn["response"].is_string()) {
      throw DataError("SFT turn must have string fields 'prompt' and 'response'");
    }
    SftTurn t{turn["prompt"].get<std::string>(), turn["response"].get<std::string>()};
    if (t.prompt.empty() || t.response.empty()) {
      throw DataError("SFT turn with empty prompt or response");
    }
    rec.turns.push_back(std::move(t));
  }
  if (rec.turns.empty()) throw DataError("SFT record has no turns");
  return rec;
}

std::vector<SftRecord> load_sft_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SftRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    try {
      out.push_back(parse_sft_record(line));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError("SFT file " + path.string() + " has no records");
  return out;
}

TokenSeq format_prompt(const SftRecord& record, std::size_t tau) {
  if (tau == 0 || tau > record.turns.size()) throw DataError("target turn out of range");
  TokenSeq out;
  for (std::size_t j = 0; j < tau; ++j) {
    out.push_back(Vocab::kBos);
    append(out, Vocab::encode("Q: " + record.turns[j].prompt + "\nA: "));
    if (j + 1 < tau) append(out, format_response(record.turns[j].response));
  }
  return out;
}

TokenSeq format_response(std::string_view response) {
  TokenSeq out = Vocab::encode(response);
  out.push_back(Vocab::kEos);
  return out;
}

SftBatch sft_batch(std::span<const SftRecord> records, std::size_t L_max, Rng& rng) {
  SftBatch batch;
  for (const auto& rec : records) {
    if (rec.turns.empty()) throw DataError("sft_batch: record with no turns");
    const std::size_t tau = static_cast<std::size_t>(
        rng.between(1, static_cast<std::int64_t>(rec.turns.size())));
    SftExample ex;
    ex.tau = tau;
    ex.prompt = format_prompt(rec, tau);
    ex.response = format_response(rec.turns[tau - 1].response);
    if (ex.prompt.size() + ex.response.size() > L_max) {
      ++batch.dropped;
      continue;
    }
    batch.examples.push_back(std::move(ex));
  }
  std::size_t longest = 0;
  for (const auto& ex : batch.examples) longest = std::max(longest, ex.response.size());
  for (auto& ex : batch.examples) {
    const std::size_t target = std::min(longest, L_max - ex.prompt.size());
    ex.response.resize(std::max(target, ex.response.size()), Vocab::kPad);
    ex.in_loss.assign(ex.prompt.size(), 0);
    ex.in_loss.resize(ex.prompt.size() + ex.response.size(), 1);
  }
  return batch;
}

}  // namespace mdmoe
