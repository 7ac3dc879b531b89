// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "mdmoe/objectives.hpp"

namespace mdmoe {

// ---- optimizer ------------------------------------------------------------

template <class T>
AdamW<T>::AdamW(AdamWConfig cfg, const std::vector<Parameter<T>>& params) : cfg_(cfg) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <class T>
void AdamW<T>::step(std::vector<Parameter<T>>& params, double lr) {
  if (params.size() != m_.size()) throw std::invalid_argument("AdamW: parameter list changed");
  for (const auto& p : params) {
    if (!p.grad.all_finite()) throw NonFiniteError("non-finite gradient in " + p.name);
  }
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto w = p.value.values();
    const auto g = p.grad.values();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      double x = static_cast<double>(w[j]) * decay;
      x -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      w[j] = static_cast<T>(x);
    }
  }
}

template <class T>
std::vector<NamedTensor> AdamW<T>::export_moment(bool second,
                                                 const std::vector<Parameter<T>>& params) const {
  const auto& src = second ? v_ : m_;
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({params[i].name, params[i].value.shape(), Precision::kF64, src[i]});
  }
  return out;
}

template <class T>
void AdamW<T>::restore(const std::vector<NamedTensor>& m, const std::vector<NamedTensor>& v,
                       std::uint64_t steps) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw CheckpointError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (m[i].values.size() != m_[i].size() || v[i].values.size() != v_[i].size()) {
      throw CheckpointError("optimizer moment '" + m[i].name + "' has the wrong size");
    }
    m_[i] = m[i].values;
    v_[i] = v[i].values;
  }
  t_ = steps;
}

template <class T>
double global_grad_norm(const std::vector<Parameter<T>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <class T>
double clip_gradients(std::vector<Parameter<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      for (T& g : p.grad.values()) g = static_cast<T>(static_cast<double>(g) * scale);
    }
  }
  return norm;
}

double LrSchedule::at(double progress) const {
  progress = std::clamp(progress, 0.0, 1.0);
  if (warmup_fraction > 0.0 && progress < warmup_fraction) {
    return peak * progress / warmup_fraction;
  }
  if (decay == "constant") return peak;
  const double span = 1.0 - warmup_fraction;
  const double x = span > 0.0 ? (progress - warmup_fraction) / span : 1.0;
  const double floor = peak * floor_fraction;
  if (decay == "linear") return floor + (peak - floor) * (1.0 - x);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

// ---- metrics --------------------------------------------------------------

std::string StepMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["step"] = step;
  j["tokens"] = tokens;
  j["task_loss"] = task_loss;
  j["lb_loss"] = lb_loss;
  j["z_loss"] = z_loss;
  j["total"] = total;
  j["lr"] = lr;
  j["grad_norm"] = grad_norm;
  j["max_f"] = max_f;
  j["length"] = length;
  j["variable_length"] = variable_length;
  j["f"] = f;
  if (eval_bound) {
    j["eval_bound"] = *eval_bound;
    j["eval_stderr"] = eval_stderr.value_or(0.0);
  }
  return j.dump();
}

double RoutingStats::max_f() const {
  double m = 0.0;
  for (const auto& layer : f) {
    for (double x : layer) m = std::max(m, x);
  }
  return m;
}

// ---- evaluation -----------------------------------------------------------

namespace {

std::vector<std::span<const TokenId>> spans_of(const std::vector<TokenSeq>& seqs) {
  return {seqs.begin(), seqs.end()};
}

template <class T>
double row_nll(const Tensor<T>& logits, std::size_t r, TokenId target) {
  const auto row = logits.row(r);
  return static_cast<double>(logsumexp_of<T>(row)) - static_cast<double>(row[target]);
}

}  // namespace

template <class T>
BoundEstimate evaluate_bound(const Model<T>& model, std::span<const TokenSeq> heldout,
                             std::size_t n_mc, std::uint64_t seed, double noise_floor) {
  if (heldout.empty()) throw DataError("evaluate_bound: empty held-out set");
  if (n_mc == 0) throw std::invalid_argument("evaluate_bound: n_mc must be positive");
  const TokenId mask = model.config().mask_id;
  Rng rng(seed);
  std::vector<double> samples;
  samples.reserve(heldout.size() * n_mc);
  for (const TokenSeq& y : heldout) {
    std::vector<TokenSeq> inputs;
    std::vector<double> ts;
    std::vector<std::size_t> rows, owner;
    std::vector<TokenId> targets;
    for (std::size_t m = 0; m < n_mc; ++m) {
      const double t = sample_noise_level(rng, noise_floor);
      NoisySeq y_t = forward_mask(y, t, mask, rng);
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (y_t.ids[i] == mask) {
          rows.push_back(m * y.size() + i);
          owner.push_back(m);
          targets.push_back(y[i]);
        }
      }
      inputs.push_back(std::move(y_t.ids));
      ts.push_back(t);
    }
    std::vector<double> nll(n_mc, 0.0);
    if (!rows.empty()) {
      Graph<T> g(false);
      const auto bound = model.bind_frozen(g);
      const auto sp = spans_of(inputs);
      const auto out = model.forward(g, bound, sp, rows);
      const Tensor<T>& logits = g.value(out.logits);
      if (!logits.all_finite()) throw NonFiniteError("evaluate_bound: non-finite logits");
      for (std::size_t r = 0; r < rows.size(); ++r) nll[owner[r]] += row_nll(logits, r, targets[r]);
    }
    for (std::size_t m = 0; m < n_mc; ++m) {
      samples.push_back(nll[m] / (ts[m] * static_cast<double>(y.size())));
    }
  }
  BoundEstimate est;
  est.samples = samples.size();
  double sum = 0.0;
  for (double s : samples) sum += s;
  est.mean = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double sq = 0.0;
    for (double s : samples) sq += (s - est.mean) * (s - est.mean);
    const double var = sq / static_cast<double>(samples.size() - 1);
    est.std_error = std::sqrt(var / static_cast<double>(samples.size()));
  }
  return est;
}

std::vector<TokenSeq> heldout_windows(const PackedCorpus& corpus, std::size_t length,
                                      std::size_t count) {
  if (length == 0) throw DataError("heldout_windows: zero length");
  std::vector<TokenSeq> out;
  const TokenSeq& s = corpus.stream();
  for (std::size_t start = 0; start + length <= s.size() && out.size() < count; start += length) {
    out.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(start),
                     s.begin() + static_cast<std::ptrdiff_t>(start + length));
  }
  if (out.empty()) {
    throw DataError("held-out corpus '" + corpus.name() + "' is shorter than one window of " +
                    std::to_string(length) + " tokens");
  }
  return out;
}

template <class T>
RoutingStats routing_stats(const Model<T>& model, std::span<const TokenSeq> sequences,
                           std::uint64_t seed, bool mask_inputs) {
  if (sequences.empty()) throw DataError("routing_stats: empty sample");
  const ModelConfig& cfg = model.config();
  RoutingStats stats;
  stats.n_experts = cfg.n_experts;
  stats.k = cfg.n_active;
  stats.f.assign(cfg.n_layers, std::vector<double>(cfg.n_experts, 0.0));
  stats.P.assign(cfg.n_layers, std::vector<double>(cfg.n_experts, 0.0));
  Rng rng(seed);
  constexpr std::size_t kChunk = 8;
  for (std::size_t b = 0; b < sequences.size(); b += kChunk) {
    std::vector<TokenSeq> inputs;
    for (std::size_t i = b; i < std::min(sequences.size(), b + kChunk); ++i) {
      if (mask_inputs) {
        inputs.push_back(forward_mask(sequences[i], sample_noise_level(rng), cfg.mask_id, rng).ids);
      } else {
        inputs.push_back(sequences[i]);
      }
    }
    Graph<T> g(false);
    const auto bound = model.bind_frozen(g);
    const auto sp = spans_of(inputs);
    const std::size_t first_row = 0;
    const auto out = model.forward(g, bound, sp, std::span<const std::size_t>(&first_row, 1));
    for (std::size_t l = 0; l < out.moe.size(); ++l) {
      const RouterDecision& d = out.moe[l].decision;
      for (std::size_t e = 0; e < d.n_experts; ++e) {
        stats.f[l][e] += d.f[e] * static_cast<double>(d.tokens);
        stats.P[l][e] += d.P[e] * static_cast<double>(d.tokens);
      }
    }
    for (const auto& s : inputs) stats.tokens += s.size();
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t e = 0; e < cfg.n_experts; ++e) {
      stats.f[l][e] /= static_cast<double>(stats.tokens);
      stats.P[l][e] /= static_cast<double>(stats.tokens);
    }
  }
  return stats;
}

// ---- stage trainer --------------------------------------------------------

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage_name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage_name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ h);
}

namespace {

AdamWConfig adamw_config(const TrainConfig& t) {
  return {t.beta1, t.beta2, t.adam_eps, t.weight_decay};
}

LrSchedule schedule_of(const StageConfig& s) {
  return {s.lr_peak, s.warmup_fraction, s.decay, s.lr_floor};
}

}  // namespace

template <class T>
StageTrainer<T>::StageTrainer(const ExperimentConfig& cfg, const StageConfig& stage,
                              Model<T>& model, StageData data, std::uint64_t total_tokens_before)
    : cfg_(cfg),
      stage_(stage),
      model_(model),
      data_(std::move(data)),
      optimizer_(adamw_config(cfg.train), model.parameters()),
      schedule_(schedule_of(stage)),
      rng_(stage_seed(cfg.train.seed, stage.name)),
      total_before_(total_tokens_before) {
  if (stage_.L_ctx > model_.config().max_context) {
    throw ContextOverflow("stage " + stage_.name + ": L_ctx exceeds the model context");
  }
  if (stage_.token_budget == 0) return;
  if (stage_.kind == StageConfig::Kind::kPretrain && data_.mixture.empty()) {
    throw DataError("stage " + stage_.name + " has no pretraining corpus");
  }
  if (stage_.kind == StageConfig::Kind::kSft && data_.sft.empty()) {
    throw DataError("stage " + stage_.name + " has no SFT records");
  }
}

template <class T>
double StageTrainer<T>::current_lr() const {
  const double budget = static_cast<double>(std::max<std::uint64_t>(stage_.token_budget, 1));
  return schedule_.at(static_cast<double>(tokens_seen_) / budget);
}

template <class T>
StepMetrics StageTrainer<T>::step() {
  return stage_.kind == StageConfig::Kind::kSft ? sft_step() : pretrain_step();
}

template <class T>
StepMetrics StageTrainer<T>::pretrain_step() {
  const VariableLengthOptions vl{cfg_.data.variable_length_prob, cfg_.data.variable_length_min};
  PretrainBatch batch = pretrain_batch(data_.mixture, stage_.L_ctx, stage_.batch_size, rng_, vl);
  const TokenId mask = model_.config().mask_id;
  const std::size_t len = batch.length;
  const double inv_batch = 1.0 / static_cast<double>(batch.sequences.size());
  std::vector<TokenSeq> inputs;
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  std::vector<T> weights;
  for (std::size_t b = 0; b < batch.sequences.size(); ++b) {
    const TokenSeq& y = batch.sequences[b];
    const double t = sample_noise_level(rng_, cfg_.train.noise_floor);
    NoisySeq y_t = forward_mask(y, t, mask, rng_);
    const T w = static_cast<T>(inv_batch / (t * static_cast<double>(len)));
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y_t.ids[i] == mask) {
        rows.push_back(b * len + i);
        targets.push_back(y[i]);
        weights.push_back(w);
      }
    }
    inputs.push_back(std::move(y_t.ids));
  }
  StepMetrics m = finish_step(inputs, rows, targets, weights, len * batch.sequences.size(), len);
  m.variable_length = batch.variable_length;
  return m;
}

template <class T>
StepMetrics StageTrainer<T>::sft_step() {
  SftBatch batch;
  for (int attempt = 0; batch.examples.empty(); ++attempt) {
    if (attempt == 100) {
      throw DataError("stage " + stage_.name + ": every SFT sample exceeds L_ctx = " +
                      std::to_string(stage_.L_ctx));
    }
    // Draw batch_size records with replacement, then format.
    std::vector<SftRecord> picked;
    for (std::size_t i = 0; i < stage_.batch_size; ++i) {
      picked.push_back(data_.sft[rng_.below(data_.sft.size())]);
    }
    SftBatch b = sft_batch(picked, stage_.L_ctx, rng_);
    sft_dropped_ += b.dropped;
    batch = std::move(b);
  }
  const TokenId mask = model_.config().mask_id;
  const double inv_batch = 1.0 / static_cast<double>(batch.examples.size());
  std::vector<TokenSeq> inputs;
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  std::vector<T> weights;
  std::size_t offset = 0, tokens = 0, longest = 0;
  for (const SftExample& ex : batch.examples) {
    const double t = sample_noise_level(rng_, cfg_.train.noise_floor);
    NoisySeq r_t = forward_mask(ex.response, t, mask, rng_);
    const T w = static_cast<T>(inv_batch / (t * static_cast<double>(ex.response.size())));
    TokenSeq input = ex.prompt;
    for (std::size_t i = 0; i < ex.response.size(); ++i) {
      if (r_t.ids[i] == mask) {
        rows.push_back(offset + ex.prompt.size() + i);
        targets.push_back(ex.response[i]);
        weights.push_back(w);
      }
    }
    input.insert(input.end(), r_t.ids.begin(), r_t.ids.end());
    offset += input.size();
    tokens += input.size();
    longest = std::max(longest, input.size());
    inputs.push_back(std::move(input));
  }
  return finish_step(inputs, rows, targets, weights, tokens, longest);
}

template <class T>
StepMetrics StageTrainer<T>::finish_step(std::vector<TokenSeq>& inputs,
                                         std::vector<std::size_t>& rows,
                                         std::vector<std::int32_t>& targets,
                                         std::vector<T>& weights, std::size_t tokens,
                                         std::size_t length) {
  StepMetrics m;
  m.stage = stage_.name;
  m.masked = rows.size();
  m.length = length;
  if (rows.empty()) {
    // Nothing masked: keep a zero-weight row so the auxiliary losses still train.
    rows.push_back(0);
    targets.push_back(inputs.front().front());
    weights.push_back(T(0));
  }
  m.lr = current_lr();

  model_.zero_grad();
  Graph<T> g(true);
  const auto bound = model_.bind_trainable(g);
  const auto sp = spans_of(inputs);
  const ForwardResult out = model_.forward(g, bound, sp, rows);
  const Var task = ops::cross_entropy<T>(g, out.logits, targets, weights);
  const Var lb = mean_load_balance_loss<T>(g, out.moe);
  const Var z = mean_z_loss<T>(g, out.moe);
  const Var total =
      ops::add(g, task,
               ops::add(g, ops::scale(g, lb, static_cast<T>(cfg_.train.lb_weight)),
                        ops::scale(g, z, static_cast<T>(cfg_.train.z_weight))));
  m.task_loss = static_cast<double>(g.value(task).data()[0]);
  m.lb_loss = static_cast<double>(g.value(lb).data()[0]);
  m.z_loss = static_cast<double>(g.value(z).data()[0]);
  m.total = static_cast<double>(g.value(total).data()[0]);
  m.step = optimizer_.steps() + 1;
  if (!std::isfinite(m.total)) {
    std::ostringstream os;
    os << "stage " << stage_.name << " step " << m.step << ": non-finite loss (task "
       << m.task_loss << ", lb " << m.lb_loss << ", z " << m.z_loss << ")";
    throw NonFiniteError(os.str());
  }
  for (const MoeTrace& tr : out.moe) {
    m.f.push_back(tr.decision.f);
    for (double x : tr.decision.f) m.max_f = std::max(m.max_f, x);
  }
  g.backward(total);
  m.grad_norm = clip_gradients(model_.parameters(), cfg_.train.clip_norm);
  optimizer_.step(model_.parameters(), m.lr);
  tokens_seen_ += tokens;
  m.tokens = tokens_seen_;
  return m;
}

template <class T>
Checkpoint StageTrainer<T>::checkpoint(const std::string& config_text) const {
  Checkpoint c;
  c.model = model_.config();
  c.config_text = config_text;
  c.stage = stage_.name;
  c.step = optimizer_.steps();
  c.tokens_seen = tokens_seen_;
  c.total_tokens = total_tokens();
  c.rng_state = rng_.state();
  c.data_state = stage_.kind == StageConfig::Kind::kPretrain ? data_.mixture.state() : "";
  c.params = export_parameters(model_.parameters());
  c.adam_m = optimizer_.export_moment(false, model_.parameters());
  c.adam_v = optimizer_.export_moment(true, model_.parameters());
  return c;
}

template <class T>
void StageTrainer<T>::resume(const Checkpoint& ckpt) {
  if (ckpt.stage != stage_.name) {
    throw CheckpointError("checkpoint belongs to stage '" + ckpt.stage + "', not '" + stage_.name +
                          "'");
  }
  if (model_digest(ckpt.model) != model_digest(model_.config())) {
    throw CheckpointError("checkpoint model shape does not match the configured model");
  }
  import_parameters(ckpt.params, model_);
  optimizer_.restore(ckpt.adam_m, ckpt.adam_v, ckpt.step);
  rng_.restore(ckpt.rng_state);
  if (stage_.kind == StageConfig::Kind::kPretrain) data_.mixture.restore(ckpt.data_state);
  tokens_seen_ = ckpt.tokens_seen;
  total_before_ = ckpt.total_tokens - ckpt.tokens_seen;
}

// ---- stage driver ---------------------------------------------------------

template <class T>
StageResult train_stage(const ExperimentConfig& cfg, const StageConfig& stage, Model<T>& model,
                        StageData data, const StageRunOptions& options) {
  StageTrainer<T> trainer(cfg, stage, model, std::move(data), options.total_tokens_before);
  if (options.resume != nullptr) trainer.resume(*options.resume);
  const std::uint64_t eval_seed = mix64(cfg.train.seed ^ 0x6576616cULL);
  auto evaluate = [&]() {
    return evaluate_bound(model, options.heldout, cfg.train.eval_mc, eval_seed,
                          cfg.train.noise_floor);
  };

  StageResult result;
  auto consider_best = [&](const BoundEstimate& b) {
    if (!result.best_bound || b.mean < result.best_bound->mean) {
      result.best_bound = b;
      Checkpoint c = trainer.checkpoint(options.config_text);
      c.has_eval_bound = true;
      c.eval_bound = b.mean;
      result.best = std::move(c);
    }
  };

  while (!trainer.done() && (options.max_steps == 0 || trainer.steps() < options.max_steps)) {
    StepMetrics m = trainer.step();
    const bool last = trainer.done() || (options.max_steps != 0 && trainer.steps() >= options.max_steps);
    const bool periodic = stage.eval_interval > 0 && m.step % stage.eval_interval == 0;
    if (!options.heldout.empty() && (last || periodic)) {
      const BoundEstimate b = evaluate();
      m.eval_bound = b.mean;
      m.eval_stderr = b.std_error;
      consider_best(b);
      if (last) result.final_bound = b;
    }
    if (options.metrics != nullptr) *options.metrics << m.to_json() << '\n';
    if (options.log != nullptr && (cfg.train.log_interval > 0 &&
                                   (m.step % cfg.train.log_interval == 0 || last))) {
      std::ostringstream os;
      os.setf(std::ios::fixed);
      os.precision(4);
      os << "[" << stage.name << "] step " << m.step << " tokens " << m.tokens << " task "
         << m.task_loss << " lb " << m.lb_loss << " z " << m.z_loss << " lr " << m.lr
         << " max_f " << m.max_f;
      if (m.eval_bound) os << " eval " << *m.eval_bound << " +- " << m.eval_stderr.value_or(0);
      *options.log << os.str() << std::endl;
    }
    if (!options.out_dir.empty() && stage.checkpoint_interval > 0 &&
        m.step % stage.checkpoint_interval == 0) {
      trainer.checkpoint(options.config_text)
          .save(options.out_dir / (stage.name + "-step" + std::to_string(m.step) + ".ckpt"));
    }
  }
  if (options.metrics != nullptr) options.metrics->flush();

  result.steps = trainer.steps();
  result.sft_dropped = trainer.sft_dropped();
  result.final_state = trainer.checkpoint(options.config_text);
  if (result.final_bound) {
    result.final_state.has_eval_bound = true;
    result.final_state.eval_bound = result.final_bound->mean;
  }
  return result;
}

GradCheckReport check_model_gradients(const ModelConfig& cfg, std::uint64_t seed,
                                      const ModelGradCheckOptions& options) {
  ModelConfig mc = cfg;
  mc.init_std = options.init_std;
  Model<double> model(mc);
  model.init(seed);
  // Norm gains start at 1; perturb them so their gradients are generic.
  Rng rng(mix64(seed ^ 0x67726164ULL));
  for (auto& p : model.parameters()) {
    if (!p.decay) {
      for (double& x : p.value.values()) x = 1.0 + 0.3 * rng.normal();
    }
  }
  std::vector<TokenSeq> inputs;
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  std::vector<double> weights;
  for (std::size_t b = 0; b < options.batch; ++b) {
    TokenSeq y(options.length);
    for (auto& id : y) {
      do {
        id = static_cast<TokenId>(rng.below(mc.vocab));
      } while (id == mc.mask_id);
    }
    const double t = rng.uniform(0.3, 1.0);
    NoisySeq y_t = forward_mask(y, t, mc.mask_id, rng);
    y_t.ids[b % y.size()] = mc.mask_id;  // at least one target per sequence
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y_t.ids[i] == mc.mask_id) {
        rows.push_back(b * options.length + i);
        targets.push_back(y[i]);
        weights.push_back(1.0 / (t * static_cast<double>(options.length * options.batch)));
      }
    }
    inputs.push_back(std::move(y_t.ids));
  }
  const auto sp = spans_of(inputs);
  std::uint64_t selection = 0;
  const LossBuilder loss = [&](Graph<double>& g) {
    const auto bound = model.bind_trainable(g);
    const ForwardResult out = model.forward(g, bound, sp, rows);
    selection = 0;
    for (const MoeTrace& tr : out.moe) {
      for (std::size_t e : tr.decision.indices) selection = mix64(selection ^ e);
    }
    const Var task = ops::cross_entropy<double>(g, out.logits, targets, weights);
    const Var lb = mean_load_balance_loss<double>(g, out.moe);
    const Var z = mean_z_loss<double>(g, out.moe);
    return ops::add(g, task,
                    ops::add(g, ops::scale(g, lb, options.weights.lb),
                             ops::scale(g, z, options.weights.z)));
  };
  std::vector<Parameter<double>*> params;
  for (auto& p : model.parameters()) params.push_back(&p);
  GradCheckOptions check = options.check;
  check.discrete_state = [&] { return selection; };
  return grad_check(loss, params, check);
}

#define MDMOE_INSTANTIATE(T)                                                                   \
  template class AdamW<T>;                                                                     \
  template double global_grad_norm(const std::vector<Parameter<T>>&);                          \
  template double clip_gradients(std::vector<Parameter<T>>&, double);                          \
  template BoundEstimate evaluate_bound(const Model<T>&, std::span<const TokenSeq>, std::size_t, \
                                        std::uint64_t, double);                                \
  template RoutingStats routing_stats(const Model<T>&, std::span<const TokenSeq>,              \
                                      std::uint64_t, bool);                                    \
  template class StageTrainer<T>;                                                              \
  template StageResult train_stage(const ExperimentConfig&, const StageConfig&, Model<T>&,     \
                                   StageData, const StageRunOptions&);

MDMOE_INSTANTIATE(float)
MDMOE_INSTANTIATE(double)

}  // namespace mdmoe
