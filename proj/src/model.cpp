// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdmoe/kernels.hpp"
#include "mdmoe/rng.hpp"

namespace mdmoe {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (n_layers == 0) fail("n_layers must be positive");
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (n_experts == 0 || n_active == 0) fail("n_experts and n_active must be positive");
  if (n_active > n_experts) fail("n_active must not exceed n_experts");
  if (d_expert == 0) fail("d_expert must be positive");
  if (!(rope_base > 1.0)) fail("rope_base must exceed 1");
  if (max_context == 0) fail("max_context must be positive");
  if (mask_id == eos_id) fail("mask_id and eos_id must differ");
  if (mask_id < 0 || eos_id < 0 || static_cast<std::size_t>(mask_id) >= vocab ||
      static_cast<std::size_t>(eos_id) >= vocab) {
    fail("mask_id and eos_id must be valid vocabulary ids");
  }
  if (!(norm_eps >= 0.0)) fail("norm_eps must be non-negative");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

ParamCount count_parameters(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model;
  const std::size_t attention = 4 * d * d + 2 * cfg.head_dim() + d;  // projections, qk gains, pre-norm
  const std::size_t expert = 3 * d * cfg.d_expert;
  const std::size_t ffn_fixed = d + d * cfg.n_experts;  // pre-norm, router
  ParamCount c;
  c.embedding = 2 * cfg.vocab * d;
  c.expert_total = cfg.n_layers * cfg.n_experts * expert;
  c.expert_active = cfg.n_layers * cfg.n_active * expert;
  const std::size_t shared = cfg.n_layers * (attention + ffn_fixed) + d;  // + final norm
  c.total = c.embedding + shared + c.expert_total;
  c.active = c.embedding + shared + c.expert_active;
  return c;
}

RouterDecision decide_routing(std::span<const double> probs, std::size_t tokens,
                              std::size_t n_experts, std::size_t k) {
  if (k == 0 || k > n_experts) throw ConfigError("routing needs 1 <= k <= n_experts");
  if (probs.size() != tokens * n_experts) throw ShapeError("routing probabilities have the wrong size");
  RouterDecision d;
  d.tokens = tokens;
  d.n_experts = n_experts;
  d.k = k;
  d.probs.assign(probs.begin(), probs.end());
  d.indices.resize(tokens * k);
  d.weights.resize(tokens * k);
  d.f.assign(n_experts, 0.0);
  d.P.assign(n_experts, 0.0);
  std::vector<std::size_t> order(n_experts);
  for (std::size_t t = 0; t < tokens; ++t) {
    const double* row = probs.data() + t * n_experts;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t j = 0; j < k; ++j) {
      d.indices[t * k + j] = order[j];
      d.weights[t * k + j] = row[order[j]];
      d.f[order[j]] += 1.0;
    }
    for (std::size_t e = 0; e < n_experts; ++e) d.P[e] += row[e];
  }
  if (tokens > 0) {
    for (std::size_t e = 0; e < n_experts; ++e) {
      d.f[e] /= static_cast<double>(tokens);
      d.P[e] /= static_cast<double>(tokens);
    }
  }
  return d;
}

template <class T>
RouterDecision route(const Tensor<T>& h, const Tensor<T>& router_weights, std::size_t k) {
  const std::size_t tokens = h.rows(), d = h.cols();
  if (router_weights.rank() != 2 || router_weights.shape()[0] != d) {
    throw ShapeError("route: router weights must be [d_model x n_experts]");
  }
  const std::size_t n = router_weights.shape()[1];
  std::vector<T> logits(tokens * n, T(0));
  kernels::gemm_nn(tokens, n, d, h.data(), router_weights.data(), logits.data());
  std::vector<double> probs(logits.begin(), logits.end());
  for (std::size_t t = 0; t < tokens; ++t) {
    softmax_inplace(std::span<double>(probs).subspan(t * n, n));
  }
  return decide_routing(probs, tokens, n, k);
}

template <class T>
Model<T>::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model;
  embed_ = add_param("embed", {cfg_.vocab, d}, true);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerSlots s;
    s.attn_norm = add_param(p + "attn_norm", {d}, false);
    s.wq = add_param(p + "wq", {d, d}, true);
    s.wk = add_param(p + "wk", {d, d}, true);
    s.wv = add_param(p + "wv", {d, d}, true);
    s.wo = add_param(p + "wo", {d, d}, true);
    s.q_norm = add_param(p + "q_norm", {cfg_.head_dim()}, false);
    s.k_norm = add_param(p + "k_norm", {cfg_.head_dim()}, false);
    s.ffn_norm = add_param(p + "ffn_norm", {d}, false);
    s.router = add_param(p + "router", {d, cfg_.n_experts}, true);
    for (std::size_t e = 0; e < cfg_.n_experts; ++e) {
      const std::string q = p + "experts." + std::to_string(e) + ".";
      s.experts.push_back({add_param(q + "w_gate", {d, cfg_.d_expert}, true),
                           add_param(q + "w_up", {d, cfg_.d_expert}, true),
                           add_param(q + "w_down", {cfg_.d_expert, d}, true)});
    }
    layers_.push_back(std::move(s));
  }
  final_norm_ = add_param("final_norm", {d}, false);
  unembed_ = add_param("unembed", {d, cfg_.vocab}, true);
  for (std::size_t i : {final_norm_}) params_[i].value.fill(T(1));
  for (auto& s : layers_) {
    for (std::size_t i : {s.attn_norm, s.q_norm, s.k_norm, s.ffn_norm}) params_[i].value.fill(T(1));
  }
}

template <class T>
std::size_t Model<T>::add_param(std::string name, Shape shape, bool decay) {
  params_.emplace_back(std::move(name), Tensor<T>(std::move(shape)), decay);
  return params_.size() - 1;
}

template <class T>
void Model<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  std::vector<bool> is_residual_out(params_.size(), false);
  for (const auto& s : layers_) {
    is_residual_out[s.wo] = true;
    for (const auto& e : s.experts) is_residual_out[e.w_down] = true;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.decay) {
      p.value.fill(T(1));
      continue;
    }
    const double std_dev = cfg_.init_std * (is_residual_out[i] ? residual_scale : 1.0);
    for (T& v : p.value.values()) v = static_cast<T>(std_dev * rng.normal());
  }
  zero_grad();
}

template <class T>
Parameter<T>& Model<T>::param(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <class T>
const Parameter<T>& Model<T>::param(std::string_view name) const {
  return const_cast<Model*>(this)->param(name);
}

template <class T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <class T>
std::vector<Var> Model<T>::bind_trainable(Graph<T>& g) {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(g.parameter(p));
  return out;
}

template <class T>
std::vector<Var> Model<T>::bind_frozen(Graph<T>& g) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(g.constant(p.value));
  return out;
}

template <class T>
Var Model<T>::attention_block(Graph<T>& g, std::span<const Var> bound, std::size_t layer, Var h,
                              std::span<const std::int64_t> positions,
                              std::vector<Var>* attention) const {
  const LayerSlots& s = layers_.at(layer);
  const std::size_t len = g.shape(h)[0];
  if (len > cfg_.max_context) {
    throw ContextOverflow("sequence of " + std::to_string(len) + " tokens exceeds max_context " +
                          std::to_string(cfg_.max_context));
  }
  const T eps = static_cast<T>(cfg_.norm_eps);
  const std::size_t dh = cfg_.head_dim();
  const Var x = ops::rms_norm(g, h, bound[s.attn_norm], eps);
  Var q = ops::matmul(g, x, bound[s.wq]);
  Var k = ops::matmul(g, x, bound[s.wk]);
  const Var v = ops::matmul(g, x, bound[s.wv]);
  q = ops::rope(g, ops::rms_norm(g, q, bound[s.q_norm], eps), positions, dh, cfg_.rope_base);
  k = ops::rope(g, ops::rms_norm(g, k, bound[s.k_norm], eps), positions, dh, cfg_.rope_base);
  const T score_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Var> heads;
  heads.reserve(cfg_.n_heads);
  for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
    const std::size_t b = hd * dh, e = b + dh;
    const Var qh = ops::slice_cols(g, q, b, e);
    const Var kh = ops::slice_cols(g, k, b, e);
    const Var vh = ops::slice_cols(g, v, b, e);
    const Var probs = ops::softmax(g, ops::scale(g, ops::matmul_nt(g, qh, kh), score_scale), 1);
    if (attention != nullptr) attention->push_back(probs);
    heads.push_back(ops::matmul(g, probs, vh));
  }
  const Var merged = heads.size() == 1 ? heads[0] : ops::concat_cols<T>(g, heads);
  return ops::add(g, h, ops::matmul(g, merged, bound[s.wo]));
}

template <class T>
Var Model<T>::moe_block(Graph<T>& g, std::span<const Var> bound, std::size_t layer, Var h,
                        MoeTrace* trace) const {
  const LayerSlots& s = layers_.at(layer);
  const std::size_t n = cfg_.n_experts;
  const Var x = ops::rms_norm(g, h, bound[s.ffn_norm], static_cast<T>(cfg_.norm_eps));
  const Var logits = ops::matmul(g, x, bound[s.router]);
  const Var probs = ops::softmax(g, logits, 1);
  const auto& pv = g.value(probs);
  const std::size_t tokens = pv.rows();
  RouterDecision decision = decide_routing(
      std::vector<double>(pv.values().begin(), pv.values().end()), tokens, n, cfg_.n_active);

  std::vector<std::vector<std::size_t>> rows_of(n);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t e : decision.token_indices(t)) rows_of[e].push_back(t);
  }
  Var out = h;
  for (std::size_t e = 0; e < n; ++e) {
    const auto& rows = rows_of[e];
    if (rows.empty()) continue;
    const ExpertSlots& ex = s.experts[e];
    const Var xe = ops::gather_rows<T>(g, x, rows);
    const Var gate = ops::silu(g, ops::matmul(g, xe, bound[ex.w_gate]));
    const Var up = ops::matmul(g, xe, bound[ex.w_up]);
    Var ye = ops::matmul(g, ops::mul(g, gate, up), bound[ex.w_down]);
    const std::vector<std::size_t> cols(rows.size(), e);
    ye = ops::scale_rows(g, ye, ops::gather_elements<T>(g, probs, rows, cols));
    out = ops::index_add_rows<T>(g, out, rows, ye);
  }
  if (trace != nullptr) *trace = MoeTrace{logits, probs, std::move(decision)};
  return out;
}

template <class T>
ForwardResult Model<T>::forward(Graph<T>& g, std::span<const Var> bound,
                                std::span<const std::span<const TokenId>> sequences,
                                std::span<const std::size_t> output_rows) const {
  if (bound.size() != params_.size()) throw std::invalid_argument("forward: parameters not bound");
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::vector<std::vector<std::int64_t>> positions;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ShapeError("forward: empty sequence");
    if (seq.size() > cfg_.max_context) {
      throw ContextOverflow("sequence of " + std::to_string(seq.size()) +
                            " tokens exceeds max_context " + std::to_string(cfg_.max_context));
    }
    offsets.push_back(ids.size());
    std::vector<std::int64_t> pos(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= cfg_.vocab) {
        throw std::out_of_range("token id " + std::to_string(seq[i]) + " outside vocabulary");
      }
      ids.push_back(static_cast<std::size_t>(seq[i]));
      pos[i] = static_cast<std::int64_t>(i);
    }
    positions.push_back(std::move(pos));
  }
  if (ids.empty()) throw ShapeError("forward: no sequences");

  ForwardResult result;
  Var h = ops::gather_rows<T>(g, bound[embed_], ids);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    if (sequences.size() == 1) {
      h = attention_block(g, bound, l, h, positions[0]);
    } else {
      std::vector<Var> parts;
      for (std::size_t i = 0; i < sequences.size(); ++i) {
        const Var hs = ops::slice_rows(g, h, offsets[i], offsets[i] + sequences[i].size());
        parts.push_back(attention_block(g, bound, l, hs, positions[i]));
      }
      h = ops::concat_rows<T>(g, parts);
    }
    MoeTrace trace;
    h = moe_block(g, bound, l, h, &trace);
    result.moe.push_back(std::move(trace));
  }
  Var x = ops::rms_norm(g, h, bound[final_norm_], static_cast<T>(cfg_.norm_eps));
  if (!output_rows.empty()) x = ops::gather_rows(g, x, output_rows);
  result.logits = ops::matmul(g, x, bound[unembed_]);
  return result;
}

template <class T>
TokenDistributions Model<T>::predict_context(std::span<const TokenId> context,
                                             std::size_t first) const {
  if (first >= context.size()) throw std::invalid_argument("predict: no positions to predict");
  Graph<T> g(false);
  const auto bound = bind_frozen(g);
  std::vector<std::size_t> rows(context.size() - first);
  std::iota(rows.begin(), rows.end(), first);
  const std::span<const TokenId> seqs[] = {context};
  const ForwardResult fr = forward(g, bound, seqs, rows);
  const auto& logits = g.value(fr.logits);
  if (!logits.all_finite()) throw NonFiniteError("predict: non-finite logits");
  TokenDistributions out(rows.size(), cfg_.vocab);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto dst = out.row(r);
    const auto src = logits.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    softmax_inplace(dst);
  }
  return out;
}

template <class T>
TokenDistributions Model<T>::predict(const NoisySeq& y_t, std::span<const TokenId> prompt) const {
  TokenSeq context(prompt.begin(), prompt.end());
  context.insert(context.end(), y_t.ids.begin(), y_t.ids.end());
  return predict_context(context, prompt.size());
}

template class Model<float>;
template class Model<double>;
template RouterDecision route<float>(const Tensor<float>&, const Tensor<float>&, std::size_t);
template RouterDecision route<double>(const Tensor<double>&, const Tensor<double>&, std::size_t);

}  // namespace mdmoe
