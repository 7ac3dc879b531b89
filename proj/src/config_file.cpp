// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/config_file.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

namespace mdmoe {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        out += c;
    }
  }
  return out + "\"";
}

class ValueParser {
 public:
  ValueParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

  ConfigValue parse_all() {
    ConfigValue v = parse_value();
    skip_ws();
    if (i_ < s_.size() && s_[i_] != '#') fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigFileError(where_ + ": " + msg); }

  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }

  ConfigValue parse_value() {
    skip_ws();
    if (i_ >= s_.size()) fail("missing value");
    const char c = s_[i_];
    if (c == '"') return ConfigValue{parse_string()};
    if (c == '{') return ConfigValue{parse_table()};
    const std::size_t start = i_;
    while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != '}' && s_[i_] != '#' && s_[i_] != ' ' &&
           s_[i_] != '\t') {
      ++i_;
    }
    std::string tok(s_.substr(start, i_ - start));
    if (tok == "true") return ConfigValue{true};
    if (tok == "false") return ConfigValue{false};
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    if (tok.empty()) fail("missing value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos || tok == "inf" ||
                          tok == "+inf" || tok == "-inf" || tok == "nan";
    if (is_float) {
      try {
        std::size_t used = 0;
        const double d = std::stod(tok, &used);
        if (used != tok.size()) fail("malformed number '" + tok + "'");
        return ConfigValue{d};
      } catch (const std::logic_error&) {
        fail("malformed number '" + tok + "'");
      }
    }
    std::int64_t n = 0;
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const auto [ptr, ec] = std::from_chars(b, tok.data() + tok.size(), n);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) fail("malformed value '" + tok + "'");
    return ConfigValue{n};
  }

  std::string parse_string() {
    ++i_;
    std::string out;
    while (i_ < s_.size() && s_[i_] != '"') {
      char c = s_[i_++];
      if (c == '\\') {
        if (i_ >= s_.size()) fail("unterminated escape");
        const char e = s_[i_++];
        switch (e) {
          case 'n':
            c = '\n';
            break;
          case 't':
            c = '\t';
            break;
          case '"':
          case '\\':
            c = e;
            break;
          default:
            fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (i_ >= s_.size()) fail("unterminated string");
    ++i_;
    return out;
  }

  ConfigTable parse_table() {
    ++i_;
    ConfigTable table;
    skip_ws();
    if (i_ < s_.size() && s_[i_] == '}') {
      ++i_;
      return table;
    }
    while (true) {
      skip_ws();
      const std::size_t start = i_;
      while (i_ < s_.size() && s_[i_] != '=' && s_[i_] != '}') ++i_;
      if (i_ >= s_.size() || s_[i_] != '=') fail("expected key = value inside inline table");
      std::string key = trim(s_.substr(start, i_ - start));
      if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
      if (key.empty()) fail("empty key in inline table");
      ++i_;
      ConfigValue v = parse_value();
      if (std::holds_alternative<ConfigTable>(v.v)) fail("nested inline tables are not supported");
      table[key] = std::move(v);
      skip_ws();
      if (i_ < s_.size() && s_[i_] == ',') {
        ++i_;
        continue;
      }
      if (i_ < s_.size() && s_[i_] == '}') {
        ++i_;
        return table;
      }
      fail("expected ',' or '}' in inline table");
    }
  }

  std::string_view s_;
  std::string where_;
  std::size_t i_ = 0;
};

// Typed access with unknown-key tracking.
class SectionReader {
 public:
  SectionReader(const ConfigTable* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <class F>
  void with(const std::string& key, F&& f) {
    if (table_ == nullptr) return;
    const auto it = table_->find(key);
    if (it == table_->end()) return;
    used_.insert(key);
    f(it->second);
  }

  void get(const std::string& key, std::string& out) {
    with(key, [&](const ConfigValue& v) {
      if (auto p = std::get_if<std::string>(&v.v)) {
        out = *p;
      } else {
        type_error(key, "a string", v);
      }
    });
  }
  void get(const std::string& key, double& out) {
    with(key, [&](const ConfigValue& v) {
      if (auto p = std::get_if<double>(&v.v)) {
        out = *p;
      } else if (auto q = std::get_if<std::int64_t>(&v.v)) {
        out = static_cast<double>(*q);
      } else {
        type_error(key, "a number", v);
      }
    });
  }
  template <class U>
    requires std::is_integral_v<U>
  void get(const std::string& key, U& out) {
    with(key, [&](const ConfigValue& v) {
      const auto p = std::get_if<std::int64_t>(&v.v);
      if (p == nullptr) type_error(key, "an integer", v);
      if (*p < 0 && std::is_unsigned_v<U>) {
        throw ConfigFileError("[" + name_ + "] " + key + " must be non-negative");
      }
      out = static_cast<U>(*p);
    });
  }
  void get(const std::string& key, bool& out) {
    with(key, [&](const ConfigValue& v) {
      if (auto p = std::get_if<bool>(&v.v)) {
        out = *p;
      } else {
        type_error(key, "a boolean", v);
      }
    });
  }
  template <class V>
  void get_map(const std::string& key, std::map<std::string, V>& out) {
    with(key, [&](const ConfigValue& v) {
      const auto p = std::get_if<ConfigTable>(&v.v);
      if (p == nullptr) type_error(key, "an inline table", v);
      out.clear();
      for (const auto& [k, item] : *p) {
        if constexpr (std::is_same_v<V, std::string>) {
          const auto s = std::get_if<std::string>(&item.v);
          if (s == nullptr) type_error(key + "." + k, "a string", item);
          out[k] = *s;
        } else {
          if (auto d = std::get_if<double>(&item.v)) {
            out[k] = *d;
          } else if (auto n = std::get_if<std::int64_t>(&item.v)) {
            out[k] = static_cast<double>(*n);
          } else {
            type_error(key + "." + k, "a number", item);
          }
        }
      }
    });
  }

  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& [key, value] : *table_) {
      if (!used_.count(key)) throw ConfigFileError("[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  [[noreturn]] void type_error(const std::string& key, const char* want, const ConfigValue& v) const {
    throw ConfigFileError("[" + name_ + "] " + key + " must be " + want + ", got " + v.describe());
  }

  const ConfigTable* table_;
  std::string name_;
  std::set<std::string> used_;
};

StageConfig::Kind parse_kind(const std::string& s) {
  if (s == "pretrain") return StageConfig::Kind::kPretrain;
  if (s == "sft") return StageConfig::Kind::kSft;
  throw ConfigFileError("stage kind must be 'pretrain' or 'sft', got '" + s + "'");
}

}  // namespace

std::string ConfigValue::describe() const {
  return std::visit(
      [](const auto& x) -> std::string {
        using X = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<X, std::string>) {
          return quote(x);
        } else if constexpr (std::is_same_v<X, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<X, double>) {
          return format_double(x);
        } else if constexpr (std::is_same_v<X, std::int64_t>) {
          return std::to_string(x);
        } else {
          std::string s = "{ ";
          bool first = true;
          for (const auto& [k, v] : x) {
            if (!first) s += ", ";
            first = false;
            s += k + " = " + v.describe();
          }
          return s + " }";
        }
      },
      v);
}

std::string stage_kind_name(StageConfig::Kind kind) {
  return kind == StageConfig::Kind::kSft ? "sft" : "pretrain";
}

ConfigDocument ConfigDocument::parse(std::string_view text, const std::string& origin) {
  ConfigDocument doc;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') {
      const auto close = line.find(']');
      if (close == std::string::npos) throw ConfigFileError(where + ": unterminated section header");
      const std::string rest = trim(std::string_view(line).substr(close + 1));
      if (!rest.empty() && rest[0] != '#') throw ConfigFileError(where + ": text after section header");
      section = trim(std::string_view(line).substr(1, close - 1));
      if (section.empty()) throw ConfigFileError(where + ": empty section name");
      if (!doc.sections.count(section)) {
        doc.order.push_back(section);
        doc.sections[section];
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigFileError(where + ": expected key = value");
    if (section.empty()) throw ConfigFileError(where + ": key outside of any section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigFileError(where + ": empty key");
    ConfigTable& table = doc.sections[section];
    if (table.count(key)) throw ConfigFileError(where + ": duplicate key '" + key + "'");
    table[key] = ValueParser(std::string_view(line).substr(eq + 1), where).parse_all();
  }
  return doc;
}

void ConfigDocument::apply_override(std::string_view dotted) {
  const auto eq = dotted.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigFileError("override '" + std::string(dotted) + "' is not of the form key=value");
  }
  const std::string path = trim(dotted.substr(0, eq));
  const std::string raw = trim(dotted.substr(eq + 1));
  ConfigValue value;
  try {
    value = ValueParser(raw, "override '" + std::string(dotted) + "'").parse_all();
  } catch (const ConfigFileError&) {
    // Unquoted words are accepted as strings on the command line.
    if (raw.empty() || raw.front() == '"' || raw.front() == '{') throw;
    value = ConfigValue{raw};
  }
  const auto last = path.rfind('.');
  if (last == std::string::npos) throw ConfigFileError("override key '" + path + "' needs a section");
  const std::string section = path.substr(0, last);
  const std::string key = path.substr(last + 1);
  // section.table.member when section.table is not itself a section.
  const auto prev = section.rfind('.');
  if (!sections.count(section) && prev != std::string::npos &&
      sections.count(section.substr(0, prev))) {
    ConfigTable& table = sections[section.substr(0, prev)];
    ConfigValue& holder = table[section.substr(prev + 1)];
    if (!std::holds_alternative<ConfigTable>(holder.v)) holder.v = ConfigTable{};
    std::get<ConfigTable>(holder.v)[key] = value;
    return;
  }
  if (!sections.count(section)) {
    order.push_back(section);
  }
  sections[section][key] = value;
}

ExperimentConfig ExperimentConfig::from_document(const ConfigDocument& doc) {
  ExperimentConfig cfg;
  auto table = [&](const std::string& name) -> const ConfigTable* {
    const auto it = doc.sections.find(name);
    return it == doc.sections.end() ? nullptr : &it->second;
  };
  {
    SectionReader r(table("model"), "model");
    ModelConfig& m = cfg.model;
    r.get("n_layers", m.n_layers);
    r.get("d_model", m.d_model);
    r.get("n_heads", m.n_heads);
    r.get("n_experts", m.n_experts);
    r.get("n_active", m.n_active);
    r.get("d_expert", m.d_expert);
    r.get("rope_base", m.rope_base);
    r.get("max_context", m.max_context);
    r.get("vocab", m.vocab);
    r.get("mask_id", m.mask_id);
    r.get("eos_id", m.eos_id);
    r.get("norm_eps", m.norm_eps);
    r.get("init_std", m.init_std);
    r.finish();
  }
  {
    SectionReader r(table("train"), "train");
    TrainConfig& t = cfg.train;
    r.get("seed", t.seed);
    r.get("precision", t.precision);
    r.get("beta1", t.beta1);
    r.get("beta2", t.beta2);
    r.get("adam_eps", t.adam_eps);
    r.get("weight_decay", t.weight_decay);
    r.get("clip_norm", t.clip_norm);
    r.get("lb_weight", t.lb_weight);
    r.get("z_weight", t.z_weight);
    r.get("noise_floor", t.noise_floor);
    r.get("log_interval", t.log_interval);
    r.get("eval_sequences", t.eval_sequences);
    r.get("eval_mc", t.eval_mc);
    r.finish();
  }
  {
    SectionReader r(table("data"), "data");
    DataConfig& d = cfg.data;
    r.get_map("corpora", d.corpora);
    r.get("heldout", d.heldout);
    r.get("sft", d.sft);
    r.get("sft_heldout", d.sft_heldout);
    r.get("variable_length_prob", d.variable_length_prob);
    r.get("variable_length_min", d.variable_length_min);
    r.finish();
  }
  {
    SectionReader r(table("sampler"), "sampler");
    DecodePlan& p = cfg.sampler;
    r.get("gen_length", p.gen_length);
    r.get("block_size", p.block_size);
    r.get("steps_per_block", p.steps_per_block);
    std::string policy = p.policy.kind == TokenPolicy::Kind::kGreedy ? "greedy" : "sample";
    r.get("policy", policy);
    r.get("temperature", p.policy.temperature);
    if (policy == "greedy") {
      p.policy.kind = TokenPolicy::Kind::kGreedy;
    } else if (policy == "sample") {
      p.policy.kind = TokenPolicy::Kind::kSample;
    } else {
      throw ConfigFileError("[sampler] policy must be 'greedy' or 'sample'");
    }
    std::string remask = p.remask == DecodePlan::Remask::kNone ? "none" : "low_confidence";
    r.get("remask", remask);
    if (remask == "none") {
      p.remask = DecodePlan::Remask::kNone;
    } else if (remask == "low_confidence") {
      p.remask = DecodePlan::Remask::kLowConfidence;
    } else {
      throw ConfigFileError("[sampler] remask must be 'low_confidence' or 'none'");
    }
    r.get("seed", p.seed);
    r.finish();
  }
  std::vector<std::pair<long, std::string>> stage_sections;
  for (const auto& name : doc.order) {
    if (name == "model" || name == "train" || name == "data" || name == "sampler") continue;
    if (name.rfind("stages.", 0) == 0) {
      const std::string idx = name.substr(7);
      long n = -1;
      const auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), n);
      if (ec != std::errc() || ptr != idx.data() + idx.size() || n < 0) {
        throw ConfigFileError("stage section [" + name + "] must be numbered, e.g. [stages.1]");
      }
      stage_sections.emplace_back(n, name);
      continue;
    }
    throw ConfigFileError("unknown section [" + name + "]");
  }
  std::sort(stage_sections.begin(), stage_sections.end());
  for (const auto& [n, name] : stage_sections) {
    SectionReader r(table(name), name);
    StageConfig s;
    s.name = name;
    r.get("name", s.name);
    std::string kind = "pretrain";
    r.get("kind", kind);
    s.kind = parse_kind(kind);
    r.get("token_budget", s.token_budget);
    r.get_map("corpus_weights", s.corpus_weights);
    r.get("L_ctx", s.L_ctx);
    r.get("rope_base", s.rope_base);
    r.get("batch_size", s.batch_size);
    r.get("lr_peak", s.lr_peak);
    r.get("warmup_fraction", s.warmup_fraction);
    r.get("decay", s.decay);
    r.get("lr_floor", s.lr_floor);
    r.get("init", s.init);
    r.get("eval_interval", s.eval_interval);
    r.get("checkpoint_interval", s.checkpoint_interval);
    r.finish();
    cfg.stages.push_back(std::move(s));
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (train.precision != "f32" && train.precision != "f64") {
    throw ConfigFileError("[train] precision must be 'f32' or 'f64'");
  }
  if (!(train.noise_floor >= 0.0 && train.noise_floor < 1.0)) {
    throw ConfigFileError("[train] noise_floor must lie in [0, 1)");
  }
  if (!(train.clip_norm >= 0.0)) throw ConfigFileError("[train] clip_norm must be non-negative");
  if (train.eval_mc == 0) throw ConfigFileError("[train] eval_mc must be positive");
  if (!(data.variable_length_prob >= 0.0 && data.variable_length_prob <= 1.0)) {
    throw ConfigFileError("[data] variable_length_prob must lie in [0, 1]");
  }
  try {
    sampler.validate();
  } catch (const PlanError& e) {
    throw ConfigFileError(std::string("[sampler] ") + e.what());
  }
  for (const auto& s : stages) {
    const std::string where = "[" + s.name + "] ";
    if (s.L_ctx == 0 || s.L_ctx > model.max_context) {
      throw ConfigFileError(where + "L_ctx must lie in [1, model.max_context]");
    }
    if (s.batch_size == 0) throw ConfigFileError(where + "batch_size must be positive");
    if (!(s.rope_base > 1.0)) throw ConfigFileError(where + "rope_base must exceed 1");
    if (!(s.lr_peak >= 0.0)) throw ConfigFileError(where + "lr_peak must be non-negative");
    if (!(s.warmup_fraction >= 0.0 && s.warmup_fraction <= 1.0)) {
      throw ConfigFileError(where + "warmup_fraction must lie in [0, 1]");
    }
    if (s.decay != "cosine" && s.decay != "linear" && s.decay != "constant") {
      throw ConfigFileError(where + "decay must be cosine, linear or constant");
    }
    for (const auto& [name, w] : s.corpus_weights) {
      if (!data.corpora.count(name)) {
        throw ConfigFileError(where + "corpus_weights names unknown corpus '" + name + "'");
      }
      if (!(w >= 0.0)) throw ConfigFileError(where + "corpus weights must be non-negative");
    }
  }
}

std::string model_section_text(const ModelConfig& m) {
  std::ostringstream os;
  os << "[model]\n"
     << "n_layers = " << m.n_layers << "\n"
     << "d_model = " << m.d_model << "\n"
     << "n_heads = " << m.n_heads << "\n"
     << "n_experts = " << m.n_experts << "\n"
     << "n_active = " << m.n_active << "\n"
     << "d_expert = " << m.d_expert << "\n"
     << "rope_base = " << format_double(m.rope_base) << "\n"
     << "max_context = " << m.max_context << "\n"
     << "vocab = " << m.vocab << "\n"
     << "mask_id = " << m.mask_id << "\n"
     << "eos_id = " << m.eos_id << "\n"
     << "norm_eps = " << format_double(m.norm_eps) << "\n"
     << "init_std = " << format_double(m.init_std) << "\n";
  return os.str();
}

std::uint64_t model_digest(const ModelConfig& cfg) {
  ModelConfig shape = cfg;
  // RoPE base and context length may change between stages without touching
  // the parameter layout.
  shape.rope_base = 10000.0;
  shape.max_context = 0;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : model_section_text(shape)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << model_section_text(model) << "\n";
  os << "[train]\n"
     << "seed = " << train.seed << "\n"
     << "precision = " << quote(train.precision) << "\n"
     << "beta1 = " << format_double(train.beta1) << "\n"
     << "beta2 = " << format_double(train.beta2) << "\n"
     << "adam_eps = " << format_double(train.adam_eps) << "\n"
     << "weight_decay = " << format_double(train.weight_decay) << "\n"
     << "clip_norm = " << format_double(train.clip_norm) << "\n"
     << "lb_weight = " << format_double(train.lb_weight) << "\n"
     << "z_weight = " << format_double(train.z_weight) << "\n"
     << "noise_floor = " << format_double(train.noise_floor) << "\n"
     << "log_interval = " << train.log_interval << "\n"
     << "eval_sequences = " << train.eval_sequences << "\n"
     << "eval_mc = " << train.eval_mc << "\n\n";
  os << "[data]\n";
  os << "corpora = {";
  bool first = true;
  for (const auto& [k, v] : data.corpora) {
    os << (first ? " " : ", ") << k << " = " << quote(v);
    first = false;
  }
  os << (first ? "}" : " }") << "\n"
     << "heldout = " << quote(data.heldout) << "\n"
     << "sft = " << quote(data.sft) << "\n"
     << "sft_heldout = " << quote(data.sft_heldout) << "\n"
     << "variable_length_prob = " << format_double(data.variable_length_prob) << "\n"
     << "variable_length_min = " << data.variable_length_min << "\n\n";
  os << "[sampler]\n"
     << "gen_length = " << sampler.gen_length << "\n"
     << "block_size = " << sampler.block_size << "\n"
     << "steps_per_block = " << sampler.steps_per_block << "\n"
     << "policy = " << quote(sampler.policy.kind == TokenPolicy::Kind::kGreedy ? "greedy" : "sample")
     << "\n"
     << "temperature = " << format_double(sampler.policy.temperature) << "\n"
     << "remask = "
     << quote(sampler.remask == DecodePlan::Remask::kNone ? "none" : "low_confidence") << "\n"
     << "seed = " << sampler.seed << "\n";
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageConfig& s = stages[i];
    os << "\n[stages." << (i + 1) << "]\n"
       << "name = " << quote(s.name) << "\n"
       << "kind = " << quote(stage_kind_name(s.kind)) << "\n"
       << "token_budget = " << s.token_budget << "\n"
       << "corpus_weights = {";
    bool f = true;
    for (const auto& [k, v] : s.corpus_weights) {
      os << (f ? " " : ", ") << k << " = " << format_double(v);
      f = false;
    }
    os << (f ? "}" : " }") << "\n"
       << "L_ctx = " << s.L_ctx << "\n"
       << "rope_base = " << format_double(s.rope_base) << "\n"
       << "batch_size = " << s.batch_size << "\n"
       << "lr_peak = " << format_double(s.lr_peak) << "\n"
       << "warmup_fraction = " << format_double(s.warmup_fraction) << "\n"
       << "decay = " << quote(s.decay) << "\n"
       << "lr_floor = " << format_double(s.lr_floor) << "\n"
       << "init = " << quote(s.init) << "\n"
       << "eval_interval = " << s.eval_interval << "\n"
       << "checkpoint_interval = " << s.checkpoint_interval << "\n";
  }
  return os.str();
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  ConfigDocument doc = ConfigDocument::parse(read_text_file(path), path.string());
  for (const auto& o : overrides) doc.apply_override(o);
  ExperimentConfig cfg = from_document(doc);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative() && !base.empty()) {
      p = (base / p).lexically_normal().string();
    }
  };
  for (auto& [name, p] : cfg.data.corpora) resolve(p);
  resolve(cfg.data.heldout);
  resolve(cfg.data.sft);
  resolve(cfg.data.sft_heldout);
  return cfg;
}

ExperimentConfig desk_default_config() {
  ExperimentConfig cfg;
  cfg.data.corpora = {{"plays", "data/corpus/plays.txt"},
                      {"arith", "data/corpus/arithmetic.txt"},
                      {"epic", "data/corpus/paradise_lost.txt"}};
  cfg.data.heldout = "data/corpus/heldout_tempest.txt";
  cfg.data.sft = "data/sft/train.jsonl";
  cfg.data.sft_heldout = "data/sft/heldout.jsonl";

  StageConfig p1;
  p1.name = "pretrain1";
  p1.token_budget = 10'000'000;
  p1.corpus_weights = {{"plays", 1.0}, {"arith", 0.1}};
  p1.init = "scratch";
  p1.eval_interval = 200;
  StageConfig p2 = p1;
  p2.name = "pretrain2";
  p2.corpus_weights = {{"plays", 1.0}, {"arith", 0.5}};
  p2.init = "previous";
  StageConfig a1 = p1;
  a1.name = "anneal1";
  a1.token_budget = 500'000;
  a1.corpus_weights = {{"epic", 1.0}};
  a1.init = "best";
  a1.eval_interval = 0;
  a1.lr_peak = 1e-3;
  StageConfig a2 = a1;
  a2.name = "anneal2";
  a2.init = "previous";
  a2.rope_base = 50000.0;
  a2.L_ctx = 2 * a1.L_ctx;
  StageConfig sft;
  sft.name = "sft";
  sft.kind = StageConfig::Kind::kSft;
  sft.token_budget = 500'000;
  sft.L_ctx = a1.L_ctx;
  sft.rope_base = 50000.0;
  sft.lr_peak = 1e-3;
  sft.batch_size = 16;
  sft.init = "previous";
  cfg.stages = {p1, p2, a1, a2, sft};
  cfg.validate();
  return cfg;
}

}  // namespace mdmoe
