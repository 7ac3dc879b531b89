// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion. Training artifacts
// (end-to-end run, aux-loss-off ablation, routing tables, SFT generations)
// are written under --out.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdmoe/checkpoint.hpp"
#include "mdmoe/config_file.hpp"
#include "mdmoe/data.hpp"
#include "mdmoe/masking.hpp"
#include "mdmoe/model.hpp"
#include "mdmoe/objectives.hpp"
#include "mdmoe/pipeline.hpp"
#include "mdmoe/sampler.hpp"
#include "mdmoe/trainer.hpp"
#include "mdmoe/vocab.hpp"

namespace mdmoe {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path config_path;
  fs::path out_dir;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// 1. Forward kernel.

Outcome forward_marginal(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t L = 10000;
  const TokenSeq y(L, 3);
  Rng rng(101);
  bool ok = true;
  std::ostringstream os;
  for (double t : {0.1, 0.5, 0.9}) {
    const NoisySeq yt = forward_mask(y, t, 9, rng);
    const double frac =
        static_cast<double>(std::count(yt.ids.begin(), yt.ids.end(), 9)) / static_cast<double>(L);
    ok = ok && std::abs(frac - t) <= 0.02;
    os << "t=" << t << " frac=" << fmt(frac) << " ";
  }
  const double secs = seconds_since(start);
  ok = ok && secs < 1.0;
  os << "(limit 0.02, " << fmt(secs, 3) << "s < 1s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 2. Reverse kernel.

Outcome reverse_marginal(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t L = 8, K = 6, trials = 100000;
  const TokenId mask = static_cast<TokenId>(K - 1);
  TokenDistributions dists(L, K);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j + 1 < K; ++j) dists.row(i)[j] = 1.0 / static_cast<double>(K - 1);
  }
  const std::array<std::pair<double, double>, 3> pairs{{{0.0, 1.0}, {0.3, 0.9}, {0.45, 0.5}}};
  bool ok = true;
  std::ostringstream os;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [s, t] = pairs[p];
    const NoisySeq yt{TokenSeq(L, mask), t};
    const KeyedRng krng{0xACCE55 + p};
    std::vector<std::size_t> unmasked(L, 0);
    for (std::size_t trial = 0; trial < trials; ++trial) {
      const NoisySeq ys = reverse_step(yt, s, dists, mask, TokenPolicy::sample(), krng, trial);
      for (std::size_t i = 0; i < L; ++i) unmasked[i] += ys.ids[i] != mask;
    }
    const double expect = (t - s) / t;
    const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(trials));
    double worst_z = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      const double freq = static_cast<double>(unmasked[i]) / static_cast<double>(trials);
      // A degenerate (t-s)/t in {0, 1} has sigma 0 and must match exactly.
      const double z = sigma > 0 ? std::abs(freq - expect) / sigma : (freq == expect ? 0.0 : 1e9);
      worst_z = std::max(worst_z, z);
    }
    ok = ok && worst_z <= 3.0;
    os << "(s,t)=(" << s << "," << t << ") p=" << fmt(expect) << " worst|z|=" << fmt(worst_z, 3)
       << " ";
  }
  const double secs = seconds_since(start);
  ok = ok && secs < 10.0;
  os << "over " << L << " positions x " << trials << " trials (" << fmt(secs, 3) << "s < 10s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 3. Uniform predictor.

Outcome uniform_identity(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  std::ostringstream os;
  const std::array<std::pair<std::size_t, std::size_t>, 2> cases{{{4, 8}, {260, 64}}};
  for (const auto& [K, L] : cases) {
    const TokenId mask = static_cast<TokenId>(K - 1);
    TokenDistributions dists(L, K);
    std::fill(dists.probs.begin(), dists.probs.end(), 1.0 / static_cast<double>(K));
    Rng rng(17 + K);
    const std::size_t n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    TokenSeq y(L);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& tok : y) tok = static_cast<TokenId>(rng.below(K - 1));
      const double t = sample_noise_level(rng);
      const NoisySeq yt = forward_mask(y, t, mask, rng);
      const double v = pretrain_loss(y, yt, dists, mask);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = (sum_sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
    const double se = std::sqrt(var / static_cast<double>(n));
    const double target = static_cast<double>(L) * std::log(static_cast<double>(K));
    const double z = std::abs(mean - target) / se;
    ok = ok && z <= 3.0;
    os << "K=" << K << ",L=" << L << ": " << fmt(mean, 6) << " vs " << fmt(target, 6)
       << " (" << fmt(z, 3) << " SE) ";
  }
  const double secs = seconds_since(start);
  ok = ok && secs < 30.0;
  os << "(" << fmt(secs, 3) << "s < 30s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 4. Hand-computed losses.

RouterDecision decision_from_logits(const std::vector<double>& logits, std::size_t tokens,
                                    std::size_t n, std::size_t k) {
  std::vector<double> probs(logits.size());
  for (std::size_t t = 0; t < tokens; ++t) {
    const double lse = logsumexp_of(std::span<const double>(logits).subspan(t * n, n));
    for (std::size_t i = 0; i < n; ++i) probs[t * n + i] = std::exp(logits[t * n + i] - lse);
  }
  return decide_routing(probs, tokens, n, k);
}

Outcome hand_losses(const Context&) {
  std::ostringstream os;
  bool ok = true;
  auto check = [&](const char* name, double got, double want, double tol) {
    const bool good = std::abs(got - want) <= tol;
    ok = ok && good;
    os << name << "=" << fmt(got, 8) << (good ? "" : " (MISMATCH)") << " ";
  };

  // Six positions, three masked at t = 0.5, each target at probability 1/2.
  const TokenId mask = 7;
  const TokenSeq y{0, 1, 2, 3, 4, 5};
  const NoisySeq yt{{mask, 1, mask, 3, mask, 5}, 0.5};
  TokenDistributions d(y.size(), 8);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      d.row(i)[j] = static_cast<TokenId>(j) == y[i] ? 0.5 : 0.5 / 7.0;
    }
  }
  check("pretrain", pretrain_loss(y, yt, d, mask), 4.1589, 1e-4);

  {
    // N=4, k=1: four tokens, one per expert, near-uniform probabilities.
    std::vector<double> logits(16, 0.0);
    for (std::size_t t = 0; t < 4; ++t) logits[t * 4 + t] = 1e-9;
    check("LB(N4,k1,uniform)", load_balance_loss(decision_from_logits(logits, 4, 4, 1)), 1.0, 1e-6);
  }
  {
    // N=64, k=8: eight tokens covering disjoint groups of eight experts.
    const std::size_t n = 64, k = 8, tokens = 8;
    std::vector<double> logits(tokens * n, 0.0);
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < k; ++j) logits[t * n + t * k + j] = 1e-9;
    }
    check("LB(N64,k8,balanced)", load_balance_loss(decision_from_logits(logits, tokens, n, k)), 8.0,
          1e-6);
  }
  {
    const std::size_t n = 6, tokens = 5;
    std::vector<double> probs(tokens * n, 0.0);
    for (std::size_t t = 0; t < tokens; ++t) probs[t * n] = 1.0;
    check("LB(N6,k1,collapse)", load_balance_loss(decide_routing(probs, tokens, n, 1)), 6.0, 1e-12);
  }
  const double zl = z_loss(std::vector<double>(64, 0.0), 1, 64);
  const double log64_sq = std::log(64.0) * std::log(64.0);
  check("z(zeros,N64)", zl, log64_sq, 1e-12);
  check("combine(1,1,1)", combine(1.0, 1.0, 1.0), 1.0 + 0.01 + 0.001, 1e-15);
  check("combine(0,8,z)", combine(0.0, 8.0, zl), 0.01 * 8.0 + 0.001 * zl, 1e-15);
  // The quoted decimal 17.2958 is 5.1e-4 below (log 64)^2 = 17.29631; the
  // closed form is what is asserted.
  os << "[(log 64)^2 = " << fmt(log64_sq, 10) << "]";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 5. Gradient suite.

Outcome gradient_suite(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig mc;
  mc.n_layers = 2;
  mc.d_model = 32;
  mc.n_heads = 4;
  mc.n_experts = 8;
  mc.n_active = 2;
  mc.d_expert = 16;
  mc.vocab = 12;
  mc.mask_id = 11;
  mc.eos_id = 10;
  mc.max_context = 64;
  ModelGradCheckOptions opts;
  opts.check.max_coords_per_param = 40;
  const std::size_t seeds = 20;
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  std::string worst_where;
  for (std::size_t s = 1; s <= seeds; ++s) {
    const GradCheckReport r = check_model_gradients(mc, s, opts);
    checked += r.coords_checked;
    skipped += r.coords_skipped;
    if (r.coords_checked == 0) worst = INFINITY;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_where = "seed " + std::to_string(s) + " " + r.worst_param + "[" +
                    std::to_string(r.worst_index) + "]";
    }
  }
  const double secs = seconds_since(start);
  const bool ok = worst < 1e-5 && secs < 120.0;
  std::ostringstream os;
  os << seeds << " seeds, " << checked << " coords (" << skipped
     << " skipped on top-k boundaries), max rel error " << std::scientific << std::setprecision(3)
     << worst << std::defaultfloat << " at " << worst_where << " (< 1e-5; " << fmt(secs, 3)
     << "s < 120s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 6. Oracle sampler.

Outcome oracle_sampler(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t L = 4, K = 6;
  const TokenId mask = static_cast<TokenId>(K);
  const std::array<double, K> base{0.8, 0.1, 0.05, 0.03, 0.015, 0.005};
  // Position i prefers token i; the rest of the mass follows `base`.
  std::array<std::array<double, K>, L> target{};
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < K; ++j) target[i][(i + j) % K] = base[j];
  }
  std::vector<double> joint{1.0};
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> next;
    next.reserve(joint.size() * K);
    for (std::size_t j = 0; j < K; ++j) {
      for (double p : joint) next.push_back(p * target[i][j]);
    }
    joint = std::move(next);  // index = sum_i y_i * K^i
  }

  MaskPredictor oracle;
  oracle.mask_id = mask;
  oracle.max_context = L;
  oracle.predict = [&](std::span<const TokenId> ctx, std::size_t first) {
    TokenDistributions d(ctx.size() - first, K + 1);
    for (std::size_t p = first; p < ctx.size(); ++p) {
      for (std::size_t j = 0; j < K; ++j) d.row(p - first)[j] = target[p][j];
    }
    return d;
  };

  const std::size_t n = 100000;
  auto tv_of = [&](bool semi_ar) {
    std::vector<double> counts(joint.size(), 0.0);
    DecodePlan plan;
    plan.gen_length = L;
    plan.block_size = semi_ar ? 2 : L;
    plan.steps_per_block = plan.block_size;
    plan.policy = TokenPolicy::sample();
    plan.remask = DecodePlan::Remask::kNone;
    for (std::size_t i = 0; i < n; ++i) {
      plan.seed = i;
      const TokenSeq y = semi_ar ? generate_semi_ar({}, plan, oracle) : generate_vanilla({}, plan, oracle);
      std::size_t index = 0;
      for (std::size_t p = L; p-- > 0;) index = index * K + static_cast<std::size_t>(y[p]);
      counts[index] += 1.0;
    }
    double tv = 0.0;
    for (std::size_t c = 0; c < joint.size(); ++c) {
      tv += std::abs(counts[c] / static_cast<double>(n) - joint[c]);
    }
    return 0.5 * tv;
  };
  // Expected TV of an exact sampler at this n, for scale.
  double noise = 0.0;
  for (double p : joint) noise += std::sqrt(2.0 * p * (1.0 - p) / (std::numbers::pi * static_cast<double>(n)));
  noise *= 0.5;

  const double tv_vanilla = tv_of(false);
  const double tv_semi = tv_of(true);
  const double secs = seconds_since(start);
  const bool ok = tv_vanilla < 0.02 && tv_semi < 0.02 && secs < 120.0;
  std::ostringstream os;
  os << "TV vanilla " << fmt(tv_vanilla) << ", semi-AR(B=2) " << fmt(tv_semi)
     << " (< 0.02; exact-sampler expectation " << fmt(noise, 3) << "; " << n << " samples, "
     << fmt(secs, 3) << "s < 120s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 7. Bound versus exact likelihood on a toy model.

Outcome bound_check(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t L = 3, K = 5;
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.n_experts = 4;
  mc.n_active = 2;
  mc.d_expert = 16;
  mc.vocab = K + 2;
  mc.eos_id = K;
  mc.mask_id = K + 1;
  mc.max_context = 8;
  mc.init_std = 0.1;
  const TokenId mask = mc.mask_id;

  // Data: a sticky Markov chain over K symbols.
  const std::array<double, K> first{0.4, 0.3, 0.15, 0.1, 0.05};
  std::vector<TokenSeq> support;
  std::vector<double> q;
  for (std::size_t c = 0; c < 125; ++c) {
    TokenSeq y{static_cast<TokenId>(c % K), static_cast<TokenId>(c / K % K),
               static_cast<TokenId>(c / (K * K))};
    double p = first[static_cast<std::size_t>(y[0])];
    for (std::size_t i = 1; i < L; ++i) p *= y[i] == y[i - 1] ? 0.6 : 0.1;
    support.push_back(y);
    q.push_back(p);
  }
  std::discrete_distribution<std::size_t> draw_data(q.begin(), q.end());
  double entropy = 0.0;
  for (double p : q) entropy -= p * std::log(p);

  Model<double> model(mc);
  model.init(7);
  AdamW<double> opt({0.9, 0.99, 1e-8, 0.0}, model.parameters());
  Rng rng(77);
  std::mt19937_64 data_rng(78);
  const std::size_t batch = 64, steps = 3000;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<TokenSeq> inputs;
    std::vector<std::size_t> rows;
    std::vector<std::int32_t> targets;
    std::vector<double> weights;
    for (std::size_t b = 0; b < batch; ++b) {
      const TokenSeq& y = support[draw_data(data_rng)];
      const double t = sample_noise_level(rng, 1e-3);
      const NoisySeq yt = forward_mask(y, t, mask, rng);
      for (std::size_t i = 0; i < L; ++i) {
        if (yt.ids[i] != mask) continue;
        rows.push_back(b * L + i);
        targets.push_back(y[i]);
        weights.push_back(1.0 / (t * L * batch));
      }
      inputs.push_back(yt.ids);
    }
    if (rows.empty()) continue;
    model.zero_grad();
    Graph<double> g(true);
    const auto bound = model.bind_trainable(g);
    std::vector<std::span<const TokenId>> spans(inputs.begin(), inputs.end());
    const ForwardResult out = model.forward(g, bound, spans, rows);
    const Var loss = ops::cross_entropy<double>(g, out.logits, targets, weights);
    g.backward(loss);
    clip_gradients(model.parameters(), 1.0);
    const double progress = static_cast<double>(step) / static_cast<double>(steps);
    opt.step(model.parameters(), 1e-2 * (0.1 + 0.9 * 0.5 * (1 + std::cos(std::numbers::pi * progress))));
  }

  // Every noisy state is one of (K+1)^L patterns over {0..K-1, MASK}; cache
  // the predictor on all of them.
  auto key = [&](const TokenSeq& ids) {
    std::size_t k = 0;
    for (TokenId id : ids) k = k * (K + 1) + (id == mask ? K : static_cast<std::size_t>(id));
    return k;
  };
  std::vector<TokenDistributions> table(static_cast<std::size_t>(std::pow(K + 1, L)));
  for (std::size_t c = 0; c < table.size(); ++c) {
    TokenSeq ids(L);
    std::size_t r = c;
    for (std::size_t i = L; i-- > 0;) {
      const std::size_t v = r % (K + 1);
      r /= K + 1;
      ids[i] = v == K ? mask : static_cast<TokenId>(v);
    }
    table[c] = model.predict(NoisySeq{ids, 0.5});
  }

  // Exact likelihood of the continuous-time reverse process: positions are
  // revealed in a uniformly random order, each drawn from the predictor given
  // the positions revealed so far.
  double exact_nll = 0.0;
  for (std::size_t c = 0; c < support.size(); ++c) {
    const TokenSeq& y = support[c];
    std::array<std::size_t, L> order{0, 1, 2};
    double p_y = 0.0;
    std::size_t orders = 0;
    do {
      TokenSeq state(L, mask);
      double p = 1.0;
      for (std::size_t pos : order) {
        p *= table[key(state)].row(pos)[static_cast<std::size_t>(y[pos])];
        state[pos] = y[pos];
      }
      p_y += p;
      ++orders;
    } while (std::next_permutation(order.begin(), order.end()));
    exact_nll += q[c] * -std::log(p_y / static_cast<double>(orders));
  }

  // Monte-Carlo bound, t ~ U[0, 1), nats per sequence.
  const std::size_t n = 400000;
  double sum = 0.0, sum_sq = 0.0;
  Rng mc_rng(79);
  for (std::size_t i = 0; i < n; ++i) {
    const TokenSeq& y = support[draw_data(data_rng)];
    const double t = sample_noise_level(mc_rng);
    const NoisySeq yt = forward_mask(y, t, mask, mc_rng);
    const double v = pretrain_loss(y, yt, table[key(yt.ids)], mask);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / static_cast<double>(n);
  const double se =
      std::sqrt((sum_sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1) /
                static_cast<double>(n));
  const double secs = seconds_since(start);
  const bool ok = exact_nll <= mean + 2 * se && secs < 300.0;
  std::ostringstream os;
  os << "exact NLL " << fmt(exact_nll, 6) << " <= bound " << fmt(mean, 6) << " + 2*" << fmt(se, 3)
     << " nats/seq (data entropy " << fmt(entropy, 6) << ", " << n << " draws; " << fmt(secs, 3)
     << "s < 300s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 8 and 9. End-to-end pipeline, shared by both criteria.

struct EndToEnd {
  ExperimentConfig cfg;
  PipelineResult main;
  PipelineResult ablation;
  double main_secs = 0.0;
};

std::optional<EndToEnd> g_end_to_end;

const EndToEnd& end_to_end(const Context& ctx) {
  if (g_end_to_end) return *g_end_to_end;
  EndToEnd e;
  e.cfg = ExperimentConfig::load(ctx.config_path);
  const fs::path main_dir = ctx.out_dir / "aux_on";
  fs::remove_all(main_dir);
  fs::create_directories(main_dir);
  {
    std::ofstream log(main_dir / "train.log");
    std::ofstream(main_dir / "effective_config.toml") << e.cfg.to_text();
    PipelineOptions opts;
    opts.out_dir = main_dir;
    opts.log = &log;
    const auto start = std::chrono::steady_clock::now();
    e.main = run_pipeline<float>(e.cfg, opts);
    e.main_secs = seconds_since(start);
  }
  ExperimentConfig off = e.cfg;
  off.train.lb_weight = 0.0;
  off.train.z_weight = 0.0;
  const fs::path off_dir = ctx.out_dir / "aux_off";
  fs::remove_all(off_dir);
  fs::create_directories(off_dir);
  {
    std::ofstream log(off_dir / "train.log");
    std::ofstream(off_dir / "effective_config.toml") << off.to_text();
    PipelineOptions opts;
    opts.out_dir = off_dir;
    opts.log = &log;
    e.ablation = run_pipeline<float>(off, opts);
  }
  g_end_to_end = std::move(e);
  return *g_end_to_end;
}

Outcome end_to_end_training(const Context& ctx) {
  const EndToEnd& e = end_to_end(ctx);
  const Model<float> model = model_from_checkpoint<float>(e.main.final_state);

  // The bound is judged on the base model: the state after the last
  // pretraining stage, which is what SFT starts from.
  std::string base_stage;
  for (const auto& s : e.cfg.stages) {
    if (s.kind == StageConfig::Kind::kPretrain) base_stage = s.name;
  }
  const Model<float> base =
      model_from_checkpoint<float>(Checkpoint::load(ctx.out_dir / "aux_on" / (base_stage + ".ckpt")));

  const std::size_t eval_len = e.cfg.stages.front().L_ctx;
  const std::vector<TokenSeq> heldout = load_heldout(e.cfg, eval_len);
  const BoundEstimate bound = evaluate_bound(base, heldout, 8, 2026, e.cfg.train.noise_floor);
  const BoundEstimate post_sft = evaluate_bound(model, heldout, 8, 2026, e.cfg.train.noise_floor);
  const double log_k = std::log(static_cast<double>(e.cfg.model.vocab));
  const double reduction = 1.0 - bound.mean / log_k;

  const std::vector<SftRecord> prompts = load_sft_records(e.cfg.data.sft_heldout);
  const MaskPredictor predictor = make_predictor(model);
  std::ofstream gens(ctx.out_dir / "aux_on" / "sft_generations.txt");
  std::size_t terminated = 0, nonempty = 0, answer_bytes = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const TokenSeq prompt = format_prompt(prompts[i], prompts[i].turns.size());
    const TokenSeq y = generate_semi_ar(prompt, e.cfg.sampler, predictor);
    const bool eos = std::find(y.begin(), y.end(), e.cfg.model.eos_id) != y.end();
    const TokenSeq answer = truncate_at_eos(y, e.cfg.model.eos_id);
    terminated += eos;
    nonempty += !answer.empty();
    answer_bytes += answer.size();
    gens << (eos ? "EOS " : "RUN ") << prompts[i].turns.back().prompt << " => "
         << Vocab::decode(answer) << "\n";
  }
  const double eos_rate = static_cast<double>(terminated) / static_cast<double>(prompts.size());

  const bool ok = reduction >= 0.35 && eos_rate >= 0.9 && e.main_secs < 1800.0;
  std::ostringstream os;
  os << "base model (after " << base_stage << ") held-out bound " << fmt(bound.mean) << " +- "
     << fmt(bound.std_error, 2) << " nats/token vs log K " << fmt(log_k) << " (reduction "
     << fmt(100 * reduction, 3) << "% >= 35%; post-SFT model " << fmt(post_sft.mean)
     << "); post-SFT EOS before L=" << e.cfg.sampler.gen_length << " in " << terminated << "/"
     << prompts.size() << " held-out prompts (>= 90%; " << nonempty
     << " non-empty, mean answer length "
     << fmt(static_cast<double>(answer_bytes) / static_cast<double>(prompts.size()), 3)
     << " bytes); stages:";
  for (const auto& s : e.main.stages) {
    os << " " << s.name;
    if (s.bound) os << "=" << fmt(s.bound->mean);
  }
  os << " (" << fmt(e.main_secs, 4) << "s < 1800s)";
  return {ok, os.str()};
}

void write_route_table(const fs::path& path, const RoutingStats& s) {
  std::ofstream out(path);
  out << "layer\texpert\tf\tP\n";
  for (std::size_t l = 0; l < s.f.size(); ++l) {
    for (std::size_t i = 0; i < s.f[l].size(); ++i) {
      out << l << "\t" << i << "\t" << s.f[l][i] << "\t" << s.P[l][i] << "\n";
    }
  }
}

std::string per_layer_max(const RoutingStats& s) {
  std::string out;
  for (std::size_t l = 0; l < s.f.size(); ++l) {
    if (l) out += ",";
    out += fmt(*std::max_element(s.f[l].begin(), s.f[l].end()), 3);
  }
  return out;
}

Outcome routing_health(const Context& ctx) {
  const EndToEnd& e = end_to_end(ctx);
  const std::vector<TokenSeq> heldout = load_heldout(e.cfg, e.cfg.stages.front().L_ctx);
  const Model<float> on = model_from_checkpoint<float>(e.main.final_state);
  const Model<float> off = model_from_checkpoint<float>(e.ablation.final_state);
  const RoutingStats s_on = routing_stats(on, heldout, 99, true);
  const RoutingStats s_off = routing_stats(off, heldout, 99, true);
  write_route_table(ctx.out_dir / "aux_on" / "route_stats.tsv", s_on);
  write_route_table(ctx.out_dir / "aux_off" / "route_stats.tsv", s_off);
  const RoutingStats clean_on = routing_stats(on, heldout, 99, false);
  const RoutingStats clean_off = routing_stats(off, heldout, 99, false);
  write_route_table(ctx.out_dir / "aux_on" / "route_stats_clean.tsv", clean_on);
  write_route_table(ctx.out_dir / "aux_off" / "route_stats_clean.tsv", clean_off);

  const double limit = 3.0 * static_cast<double>(e.cfg.model.n_active) /
                       static_cast<double>(e.cfg.model.n_experts);
  const bool archived = fs::exists(ctx.out_dir / "aux_off" / "final.ckpt");
  const bool ok = s_on.max_f() <= limit && archived;
  std::ostringstream os;
  os << "aux on: per-layer max f [" << per_layer_max(s_on) << "] <= 3k/N=" << fmt(limit, 3)
     << " on " << s_on.tokens << " masked held-out tokens (clean text [" << per_layer_max(clean_on)
     << "]); aux off ablation archived at " << (ctx.out_dir / "aux_off").string() << ": ["
     << per_layer_max(s_off) << "] (clean [" << per_layer_max(clean_off) << "])";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 10. Determinism and resume.

Outcome determinism(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = ExperimentConfig::load(ctx.config_path);
  const StageConfig& stage = cfg.stages.front();
  auto fresh = [&] {
    Model<float> m(cfg.model);
    m.init(stage_seed(cfg.train.seed, "init"));
    return m;
  };
  auto trace = [&](int steps, std::vector<double>& out, Checkpoint* end) {
    Model<float> m = fresh();
    StageTrainer<float> tr(cfg, stage, m, load_stage_data(cfg, stage));
    for (int i = 0; i < steps; ++i) out.push_back(tr.step().total);
    if (end) *end = tr.checkpoint();
  };
  std::vector<double> a, b;
  Checkpoint end_a;
  trace(100, a, &end_a);
  trace(100, b, nullptr);

  const fs::path dir = ctx.out_dir / "resume";
  fs::create_directories(dir);
  std::vector<double> resumed;
  Checkpoint end_r;
  {
    Model<float> m = fresh();
    StageTrainer<float> tr(cfg, stage, m, load_stage_data(cfg, stage));
    for (int i = 0; i < 50; ++i) resumed.push_back(tr.step().total);
    tr.checkpoint().save(dir / "mid.ckpt");
  }
  {
    const Checkpoint mid = Checkpoint::load(dir / "mid.ckpt");
    Model<float> m = model_from_checkpoint<float>(mid);
    StageTrainer<float> tr(cfg, stage, m, load_stage_data(cfg, stage));
    tr.resume(mid);
    for (int i = 0; i < 50; ++i) resumed.push_back(tr.step().total);
    end_r = tr.checkpoint();
  }
  const bool traces_equal = a == b;
  const bool resume_equal = resumed == a && end_r.params == end_a.params &&
                            end_r.adam_m == end_a.adam_m && end_r.adam_v == end_a.adam_v &&
                            end_r.rng_state == end_a.rng_state &&
                            end_r.data_state == end_a.data_state;
  std::ostringstream os;
  os << "two fixed-seed 100-step f32 traces " << (traces_equal ? "bit-identical" : "DIFFER")
     << "; 50 + save/load + 50 " << (resume_equal ? "bit-identical" : "DIFFERS")
     << " to 100 straight (losses, parameters, moments, RNG, data cursors; "
     << fmt(seconds_since(start), 3) << "s)";
  return {traces_equal && resume_equal, os.str()};
}

// ---------------------------------------------------------------------------
// 11. Semi-autoregressive structure.

Outcome semi_ar_structure(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t L = 1024, B = 64;
  const TokenSeq prompt = Vocab::encode("Q: Tell me a story.\nA: ");
  const TokenId mask = Vocab::kMask;
  std::vector<std::string> problems;
  auto problem = [&](const std::string& what) {
    if (problems.size() < 5) problems.push_back(what);
  };

  // Spy: the predictor may only see the prompt, finished blocks and the
  // current block; finished blocks must hold no mask.
  std::size_t calls = 0;
  auto spy = [&](std::span<const TokenId> c, std::size_t first) {
    ++calls;
    if (first < prompt.size() || (first - prompt.size()) % B != 0) problem("misaligned block start");
    if (c.size() != first + B) problem("context reaches past the current block");
    if (std::find(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(first), mask) !=
        c.begin() + static_cast<std::ptrdiff_t>(first)) {
      problem("mask left of the current block");
    }
  };

  auto observe = [&](std::vector<std::size_t>& order, TokenSeq& frozen) {
    return [&, last_block = std::size_t{0}](const DecodeStep& st) mutable {
      if (st.generated.size() != L) problem("generated region has wrong length");
      if (order.empty() || order.back() != st.block) order.push_back(st.block);
      if (st.block < last_block) problem("block order went backwards");
      if (st.block > last_block) {
        frozen.assign(st.generated.begin(),
                      st.generated.begin() + static_cast<std::ptrdiff_t>(st.block * B));
      }
      last_block = st.block;
      for (std::size_t i = 0; i < st.block * B; ++i) {
        if (st.generated[i] == mask) problem("earlier block not fully decoded");
        if (i < frozen.size() && st.generated[i] != frozen[i]) problem("earlier block changed");
      }
      for (std::size_t i = (st.block + 1) * B; i < L; ++i) {
        if (st.generated[i] != mask) problem("later block touched");
      }
      const std::size_t lo = st.block * B;
      const std::size_t unmasked = static_cast<std::size_t>(
          std::count_if(st.generated.begin() + static_cast<std::ptrdiff_t>(lo),
                        st.generated.begin() + static_cast<std::ptrdiff_t>(lo + B),
                        [&](TokenId t) { return t != mask; }));
      if (st.step + 1 == B && unmasked != B) problem("block not finished at its last step");
    };
  };

  // Run 1: position- and context-dependent stub, 64 steps per block.
  MaskPredictor stub;
  stub.mask_id = mask;
  stub.max_context = 4096;
  stub.predict = [&](std::span<const TokenId> c, std::size_t first) {
    spy(c, first);
    std::uint64_t h = 0;
    for (TokenId t : c) h = mix64(h ^ static_cast<std::uint64_t>(t));
    TokenDistributions d(c.size() - first, Vocab::kSize);
    for (std::size_t r = 0; r < d.positions(); ++r) {
      const double u = to_unit(mix64(h + r));
      const std::size_t tok = mix64(h ^ (r + 1)) % 256;
      for (std::size_t j = 0; j < 256; ++j) d.row(r)[j] = (1.0 - u) / 255.0;
      d.row(r)[tok] = u;
    }
    return d;
  };
  DecodePlan plan;
  plan.gen_length = L;
  plan.block_size = B;
  plan.steps_per_block = B;
  std::vector<std::size_t> order;
  TokenSeq frozen;
  const TokenSeq out = generate_semi_ar(prompt, plan, stub, observe(order, frozen));
  const std::size_t stub_calls = calls;
  const bool stub_ok = plan.blocks() == 16 && order.size() == 16 && stub_calls == 16 * B &&
                       out.size() == L &&
                       std::find(out.begin(), out.end(), mask) == out.end();
  for (std::size_t b = 0; b < order.size(); ++b) {
    if (order[b] != b) problem("blocks not visited in order");
  }

  // Run 2: the acceptance model (untrained) with 4 steps per block.
  const ExperimentConfig cfg = ExperimentConfig::load(ctx.config_path);
  Model<float> model(cfg.model);
  model.init(5);
  const MaskPredictor real = make_predictor(model);
  MaskPredictor spied = real;
  std::size_t model_calls = 0;
  spied.predict = [&](std::span<const TokenId> c, std::size_t first) {
    ++model_calls;
    spy(c, first);
    return real.predict(c, first);
  };
  DecodePlan fast = plan;
  fast.steps_per_block = 4;
  std::vector<std::size_t> order2;
  TokenSeq frozen2;
  auto observe_fast = [&](const DecodeStep& st) {
    if (order2.empty() || order2.back() != st.block) order2.push_back(st.block);
    for (std::size_t i = (st.block + 1) * B; i < L; ++i) {
      if (st.generated[i] != mask) problem("model run: later block touched");
    }
    for (std::size_t i = 0; i < st.block * B; ++i) {
      if (st.generated[i] == mask) problem("model run: earlier block not decoded");
    }
  };
  const TokenSeq out2 = generate_semi_ar(prompt, fast, spied, observe_fast);
  const bool model_ok = order2.size() == 16 && model_calls == 16 * 4 &&
                        std::find(out2.begin(), out2.end(), mask) == out2.end();
  for (std::size_t b = 0; b < order2.size(); ++b) {
    if (order2[b] != b) problem("model run: blocks not visited in order");
  }

  const bool ok = stub_ok && model_ok && problems.empty();
  std::ostringstream os;
  os << "L=1024, B=64: " << plan.blocks() << " blocks; stub run visited " << order.size()
     << " blocks in order over " << stub_calls << " steps, model run " << order2.size()
     << " blocks over " << model_calls << " steps; isolation checked at every step";
  for (const auto& p : problems) os << "; VIOLATION: " << p;
  os << " (" << fmt(seconds_since(start), 3) << "s)";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 12. Variable-length batches.

Outcome variable_length(const Context& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = ExperimentConfig::load(ctx.config_path);
  const StageConfig& stage = cfg.stages.front();
  StageData data = load_stage_data(cfg, stage);
  Rng rng(stage_seed(cfg.train.seed, "variable-length"));
  const VariableLengthOptions opts{cfg.data.variable_length_prob, cfg.data.variable_length_min};
  const std::size_t n = 100000;
  std::size_t variable = 0, out_of_range = 0;
  std::size_t lo = SIZE_MAX, hi = 0;
  std::set<std::size_t> distinct;
  for (std::size_t i = 0; i < n; ++i) {
    const PretrainBatch b = pretrain_batch(data.mixture, stage.L_ctx, 1, rng, opts);
    if (b.variable_length) {
      ++variable;
      distinct.insert(b.length);
    }
    lo = std::min(lo, b.length);
    hi = std::max(hi, b.length);
    if (b.length < opts.min_length || b.length > stage.L_ctx) ++out_of_range;
    for (const auto& s : b.sequences) {
      if (s.size() != b.length) ++out_of_range;
    }
  }
  const double freq = static_cast<double>(variable) / static_cast<double>(n);
  const bool ok = std::abs(freq - 0.01) <= 0.002 && out_of_range == 0;
  std::ostringstream os;
  os << "variable-length frequency " << fmt(freq) << " (0.01 +- 0.002) over " << n
     << " batches; lengths in [" << lo << ", " << hi << "] with L_ctx=" << stage.L_ctx << ", "
     << distinct.size() << " distinct truncated lengths, " << out_of_range << " out of range ("
     << fmt(seconds_since(start), 3) << "s)";
  return {ok, os.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
};

}  // namespace
}  // namespace mdmoe

int main(int argc, char** argv) {
  using namespace mdmoe;
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> only;
  std::string config = std::string(MDMOE_SOURCE_DIR) + "/configs/acceptance.toml";
  std::string out = "acceptance_out";
  std::string report;
  app.add_option("--only", only, "Criterion numbers to run (default: all)")->delimiter(',');
  app.add_option("--config", config, "Experiment config for criteria 8-12");
  app.add_option("--out", out, "Directory for training artifacts");
  app.add_option("--report", report, "Also write the PASS/FAIL lines here (default: <out>/report.txt)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "forward-kernel marginal", forward_marginal},
      {2, "reverse-kernel marginal", reverse_marginal},
      {3, "uniform-predictor identity", uniform_identity},
      {4, "hand-computed losses", hand_losses},
      {5, "gradient suite", gradient_suite},
      {6, "oracle sampler equivalence", oracle_sampler},
      {7, "bound vs exact likelihood", bound_check},
      {8, "end-to-end toy training", end_to_end_training},
      {9, "routing health", routing_health},
      {10, "determinism and resume", determinism},
      {11, "semi-AR structure", semi_ar_structure},
      {12, "variable-length trick", variable_length},
  };
  Context ctx{config, out};
  std::filesystem::create_directories(ctx.out_dir);

  std::ofstream report_file(report.empty() ? ctx.out_dir / "report.txt" : std::filesystem::path(report));
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    report_file << line << "\n" << std::flush;
  };

  int ran = 0, passed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    passed += o.pass;
    emit(std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " (" +
         c.name + "): " + o.detail);
  }
  emit(std::to_string(passed) + "/" + std::to_string(ran) + " criteria passed");
  return passed == ran ? 0 : 1;
}
