// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdmoe/config_file.hpp"

namespace mdmoe {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'M', 'D', 'M', 'O', 'E', 'C', 'K', 'P'};
constexpr char kTrailer[8] = {'M', 'D', 'M', 'O', 'E', 'E', 'N', 'D'};

enum class Section : std::uint8_t { kParam = 0, kAdamM = 1, kAdamV = 2 };

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <class U>
  void pod(U v) {
    bytes(&v, sizeof(v));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(Section section, const NamedTensor& t) {
    pod(static_cast<std::uint8_t>(section));
    str(t.name);
    pod(static_cast<std::uint8_t>(t.precision));
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) pod<std::uint64_t>(e);
    if (t.precision == Precision::kF32) {
      for (double v : t.values) pod(static_cast<float>(v));
    } else {
      for (double v : t.values) pod(v);
    }
  }
  const std::string& data() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : in_(std::move(data)), origin_(std::move(origin)) {}

  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) fail("truncated file");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U pod() {
    U v;
    bytes(&v, sizeof(v));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > in_.size() - pos_) fail("truncated string");
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    const auto prec = pod<std::uint8_t>();
    if (prec != 1 && prec != 2) fail("tensor '" + t.name + "' has unknown precision tag");
    t.precision = static_cast<Precision>(prec);
    const auto rank = pod<std::uint32_t>();
    if (rank == 0 || rank > 8) fail("tensor '" + t.name + "' has invalid rank");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = pod<std::uint64_t>();
      if (e == 0 || e > (std::uint64_t{1} << 40)) fail("tensor '" + t.name + "' has invalid extent");
      t.shape.push_back(e);
      n *= e;
    }
    const std::size_t width = t.precision == Precision::kF32 ? 4 : 8;
    if (n > (in_.size() - pos_) / width) fail("tensor '" + t.name + "' is truncated");
    t.values.resize(n);
    for (auto& v : t.values) {
      v = t.precision == Precision::kF32 ? static_cast<double>(pod<float>()) : pod<double>();
    }
    return t;
  }
  bool at_end() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError(origin_ + ": " + msg);
  }

 private:
  std::string in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

ModelConfig parse_model_section(const std::string& text, const std::string& origin) {
  try {
    return ExperimentConfig::from_document(ConfigDocument::parse(text, origin)).model;
  } catch (const std::exception& e) {
    throw CheckpointError(origin + ": bad model config: " + e.what());
  }
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint64_t>(model_digest(model));
  w.str(model_section_text(model));
  w.str(config_text);
  w.str(stage);
  w.pod<std::uint64_t>(step);
  w.pod<std::uint64_t>(tokens_seen);
  w.pod<std::uint64_t>(total_tokens);
  w.pod<std::uint8_t>(has_eval_bound ? 1 : 0);
  w.pod<double>(eval_bound);
  w.str(rng_state);
  w.str(data_state);
  w.pod<std::uint64_t>(params.size() + adam_m.size() + adam_v.size());
  for (const auto& t : params) w.tensor(Section::kParam, t);
  for (const auto& t : adam_m) w.tensor(Section::kAdamM, t);
  for (const auto& t : adam_v) w.tensor(Section::kAdamV, t);
  w.bytes(kTrailer, sizeof(kTrailer));

  // Write-then-rename so a crash never leaves a half-written checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Reader r(buf.str(), path.string());

  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) r.fail("not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = r.pod<std::uint32_t>();
  if (c.version > kVersion) {
    r.fail("checkpoint version " + std::to_string(c.version) + " is newer than supported version " +
           std::to_string(kVersion));
  }
  if (c.version == 0) r.fail("invalid checkpoint version 0");
  const auto digest = r.pod<std::uint64_t>();
  c.model = parse_model_section(r.str(), path.string());
  if (model_digest(c.model) != digest) r.fail("config digest does not match stored model config");
  c.config_text = r.str();
  c.stage = r.str();
  c.step = r.pod<std::uint64_t>();
  c.tokens_seen = r.pod<std::uint64_t>();
  c.total_tokens = r.pod<std::uint64_t>();
  c.has_eval_bound = r.pod<std::uint8_t>() != 0;
  c.eval_bound = r.pod<double>();
  c.rng_state = r.str();
  c.data_state = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto section = r.pod<std::uint8_t>();
    switch (static_cast<Section>(section)) {
      case Section::kParam:
        c.params.push_back(r.tensor());
        break;
      case Section::kAdamM:
        c.adam_m.push_back(r.tensor());
        break;
      case Section::kAdamV:
        c.adam_v.push_back(r.tensor());
        break;
      default:
        r.fail("unknown tensor section " + std::to_string(section));
    }
  }
  char trailer[8];
  r.bytes(trailer, sizeof(trailer));
  if (std::memcmp(trailer, kTrailer, sizeof(trailer)) != 0 || !r.at_end()) {
    r.fail("corrupt trailer");
  }
  return c;
}

template <class T>
std::vector<NamedTensor> export_parameters(const std::vector<Parameter<T>>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    NamedTensor t{p.name, p.value.shape(), precision_of<T>(), {}};
    t.values.assign(p.value.values().begin(), p.value.values().end());
    out.push_back(std::move(t));
  }
  return out;
}

template <class T>
void import_parameters(const std::vector<NamedTensor>& tensors, Model<T>& model) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& p : model.parameters()) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    const NamedTensor& t = *it->second;
    if (t.shape != p.value.shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " + shape_string(t.shape) +
                            " in the checkpoint but " + shape_string(p.value.shape()) +
                            " in the model");
    }
    auto dst = p.value.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t.values[i]);
  }
  if (by_name.size() != model.parameters().size()) {
    throw CheckpointError("checkpoint holds parameters the model does not have");
  }
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<T> model(ckpt.model);
  import_parameters(ckpt.params, model);
  return model;
}

template std::vector<NamedTensor> export_parameters(const std::vector<Parameter<float>>&);
template std::vector<NamedTensor> export_parameters(const std::vector<Parameter<double>>&);
template void import_parameters(const std::vector<NamedTensor>&, Model<float>&);
template void import_parameters(const std::vector<NamedTensor>&, Model<double>&);
template Model<float> model_from_checkpoint(const Checkpoint&);
template Model<double> model_from_checkpoint(const Checkpoint&);

}  // namespace mdmoe
