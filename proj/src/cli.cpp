// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdmoe/checkpoint.hpp"
#include "mdmoe/config_file.hpp"
#include "mdmoe/pipeline.hpp"
#include "mdmoe/sampler.hpp"
#include "mdmoe/trainer.hpp"
#include "mdmoe/vocab.hpp"

namespace mdmoe::cli {
namespace {

// Thrown for invalid flag combinations detected after parsing.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

struct SampleFlags {
  std::string checkpoint;
  std::string prompt;
  std::optional<std::size_t> len, block, steps;
  std::optional<std::string> policy, remask;
  std::optional<double> temperature;
  bool vanilla = false;
  bool chat = false;
  bool raw = false;
};

struct EvalFlags {
  std::string checkpoint;
  std::string heldout;
  std::optional<std::size_t> n_mc;
  std::optional<std::size_t> length;
  std::optional<std::size_t> sequences;
  bool zero_output = false;
};

struct RouteFlags {
  std::string checkpoint;
  std::string corpus;
  std::size_t sequences = 16;
  std::optional<std::size_t> length;
  bool clean = false;
  std::string tsv;
};

struct GradFlags {
  std::size_t seeds = 20;
  std::size_t max_coords = 40;
  double threshold = 1e-5;
};

struct TrainFlags {
  std::vector<std::string> stages;
  std::string resume;
  std::string checkpoint;
  std::uint64_t max_steps = 0;
  bool quiet = false;
};

void make_paths_absolute(ExperimentConfig& cfg) {
  auto fix = [](std::string& p) {
    if (!p.empty()) p = std::filesystem::absolute(p).lexically_normal().string();
  };
  for (auto& [name, p] : cfg.data.corpora) fix(p);
  fix(cfg.data.heldout);
  fix(cfg.data.sft);
  fix(cfg.data.sft_heldout);
  for (auto& s : cfg.stages) {
    if (s.init != "scratch" && s.init != "previous" && s.init != "best") fix(s.init);
  }
}

ExperimentConfig effective_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = ExperimentConfig::load(c.config, c.overrides);
  } else {
    ConfigDocument doc = ConfigDocument::parse(desk_default_config().to_text(), "<defaults>");
    for (const auto& o : c.overrides) doc.apply_override(o);
    cfg = ExperimentConfig::from_document(doc);
  }
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.sampler.seed = *c.seed;
  }
  make_paths_absolute(cfg);
  cfg.validate();
  return cfg;
}

void echo_config(const Common& c, const ExperimentConfig& cfg) {
  if (c.out_dir.empty()) return;
  std::filesystem::create_directories(c.out_dir);
  std::ofstream(std::filesystem::path(c.out_dir) / "effective_config.toml") << cfg.to_text();
}

bool is_f64(const Checkpoint& ck) {
  return !ck.params.empty() && ck.params.front().precision == Precision::kF64;
}

// Calls fn(model) with a model of the checkpoint's precision.
template <class F>
auto with_checkpoint_model(const Checkpoint& ck, F&& fn) {
  if (is_f64(ck)) {
    Model<double> m = model_from_checkpoint<double>(ck);
    return fn(m);
  }
  Model<float> m = model_from_checkpoint<float>(ck);
  return fn(m);
}

int cmd_train(const Common& c, const TrainFlags& f, bool sft_only, std::ostream& out,
              std::ostream& err) {
  ExperimentConfig cfg = effective_config(c);
  PipelineOptions opts;
  opts.out_dir = c.out_dir.empty() ? std::filesystem::path("runs/latest")
                                   : std::filesystem::path(c.out_dir);
  std::filesystem::create_directories(opts.out_dir);
  std::ofstream(opts.out_dir / "effective_config.toml") << cfg.to_text();
  opts.log = f.quiet ? nullptr : &err;
  opts.only_stages = f.stages;
  opts.max_steps_per_stage = f.max_steps;
  if (sft_only) {
    for (const auto& s : cfg.stages) {
      if (s.kind == StageConfig::Kind::kSft && f.stages.empty()) opts.only_stages.push_back(s.name);
    }
    if (opts.only_stages.empty()) throw UsageError("config has no sft stage");
  }
  if (!f.checkpoint.empty()) opts.init = Checkpoint::load(f.checkpoint);
  if (!f.resume.empty()) opts.resume = Checkpoint::load(f.resume);

  const PipelineResult r = cfg.train.precision == "f64" ? run_pipeline<double>(cfg, opts)
                                                        : run_pipeline<float>(cfg, opts);
  for (const auto& s : r.stages) {
    out << s.name << "\tsteps=" << s.steps << "\ttokens=" << s.tokens;
    if (s.bound) {
      out << "\teval_bound=" << std::setprecision(6) << s.bound->mean << "\tstderr="
          << s.bound->std_error;
    }
    out << "\n";
  }
  out << "checkpoint\t" << (opts.out_dir / "final.ckpt").string() << "\n";
  return kExitOk;
}

DecodePlan plan_from(const ExperimentConfig& cfg, const SampleFlags& f) {
  DecodePlan plan = cfg.sampler;
  if (f.len) plan.gen_length = *f.len;
  if (f.block) plan.block_size = *f.block;
  if (f.steps) {
    plan.steps_per_block = *f.steps;
  } else if (f.block || f.len) {
    plan.steps_per_block = plan.block_size;  // default: one step per position
  }
  if (f.policy) {
    if (*f.policy == "greedy") {
      plan.policy.kind = TokenPolicy::Kind::kGreedy;
    } else if (*f.policy == "sample") {
      plan.policy.kind = TokenPolicy::Kind::kSample;
    } else {
      throw UsageError("--policy must be greedy or sample");
    }
  }
  if (f.temperature) plan.policy.temperature = *f.temperature;
  if (f.remask) {
    if (*f.remask == "low_confidence") {
      plan.remask = DecodePlan::Remask::kLowConfidence;
    } else if (*f.remask == "none") {
      plan.remask = DecodePlan::Remask::kNone;
    } else {
      throw UsageError("--remask must be low_confidence or none");
    }
  }
  if (f.vanilla) {
    plan.block_size = plan.gen_length;
    if (!f.steps) plan.steps_per_block = plan.gen_length;
  }
  try {
    plan.validate();
  } catch (const PlanError& e) {
    throw UsageError(std::string("error: ") + e.what());
  }
  return plan;
}

int cmd_sample(const Common& c, const SampleFlags& f, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = effective_config(c);
  const DecodePlan plan = plan_from(cfg, f);
  cfg.sampler = plan;
  echo_config(c, cfg);
  err << "# sampler: gen_length=" << plan.gen_length << " block_size=" << plan.block_size
      << " steps_per_block=" << plan.steps_per_block << " blocks=" << plan.blocks()
      << " policy=" << (plan.policy.kind == TokenPolicy::Kind::kGreedy ? "greedy" : "sample")
      << " temperature=" << plan.policy.temperature
      << " remask=" << (plan.remask == DecodePlan::Remask::kNone ? "none" : "low_confidence")
      << " seed=" << plan.seed << "\n";
  if (f.checkpoint.empty()) throw UsageError("sample requires --checkpoint");
  const Checkpoint ck = Checkpoint::load(f.checkpoint);
  TokenSeq prompt;
  if (f.chat) {
    prompt = format_prompt(SftRecord{{SftTurn{f.prompt, "-"}}}, 1);
  } else {
    prompt = Vocab::encode(f.prompt);
  }
  const TokenSeq generated = with_checkpoint_model(ck, [&](auto& model) {
    return generate_semi_ar(prompt, plan, make_predictor(model));
  });
  const TokenSeq text = f.raw ? generated : truncate_at_eos(generated, ck.model.eos_id);
  out << Vocab::decode(text) << "\n";
  return kExitOk;
}

int cmd_eval(const Common& c, const EvalFlags& f, std::ostream& out) {
  const ExperimentConfig cfg = effective_config(c);
  echo_config(c, cfg);
  const std::size_t n_mc = f.n_mc.value_or(cfg.train.eval_mc);
  if (n_mc == 0) throw UsageError("--n-mc must be positive");
  const std::size_t length =
      f.length.value_or(cfg.stages.empty() ? 128 : cfg.stages.back().L_ctx);
  const std::string heldout_path = f.heldout.empty() ? cfg.data.heldout : f.heldout;
  if (heldout_path.empty()) throw UsageError("no held-out corpus: pass --heldout");
  const PackedCorpus corpus = PackedCorpus::from_file("heldout", heldout_path);
  const auto windows =
      heldout_windows(corpus, length, f.sequences.value_or(cfg.train.eval_sequences));
  const std::uint64_t seed = mix64(cfg.train.seed ^ 0x6576616cULL);

  auto evaluate = [&](auto& model) {
    if (f.zero_output) model.param("unembed").value.fill(0);
    if (length > model.config().max_context) {
      throw ContextOverflow("--length exceeds the model context");
    }
    return evaluate_bound(model, windows, n_mc, seed, cfg.train.noise_floor);
  };
  BoundEstimate b;
  if (f.checkpoint.empty()) {
    Model<float> model(cfg.model);
    model.init(stage_seed(cfg.train.seed, "init"));
    b = evaluate(model);
  } else {
    b = with_checkpoint_model(Checkpoint::load(f.checkpoint), evaluate);
  }
  nlohmann::ordered_json j;
  j["bound_per_token"] = b.mean;
  j["stderr"] = b.std_error;
  j["samples"] = b.samples;
  j["n_mc"] = n_mc;
  j["length"] = length;
  j["log_vocab"] = std::log(static_cast<double>(cfg.model.vocab));
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_route_stats(const Common& c, const RouteFlags& f, std::ostream& out) {
  const ExperimentConfig cfg = effective_config(c);
  echo_config(c, cfg);
  const std::string path = f.corpus.empty() ? cfg.data.heldout : f.corpus;
  if (path.empty()) throw UsageError("no corpus sample: pass --corpus");
  if (f.sequences == 0) throw UsageError("--sequences must be positive");
  const std::size_t length =
      f.length.value_or(cfg.stages.empty() ? 128 : cfg.stages.front().L_ctx);
  const PackedCorpus corpus = PackedCorpus::from_file("sample", path);
  const auto windows = heldout_windows(corpus, length, f.sequences);
  const std::uint64_t seed = mix64(cfg.train.seed ^ 0x726f757465ULL);
  RoutingStats st;
  if (f.checkpoint.empty()) {
    Model<float> model(cfg.model);
    model.init(stage_seed(cfg.train.seed, "init"));
    st = routing_stats(model, windows, seed, !f.clean);
  } else {
    st = with_checkpoint_model(Checkpoint::load(f.checkpoint), [&](auto& model) {
      return routing_stats(model, windows, seed, !f.clean);
    });
  }
  const double uniform = static_cast<double>(st.k) / static_cast<double>(st.n_experts);
  out << "# tokens " << st.tokens << ", experts " << st.n_experts << ", active " << st.k
      << ", uniform f " << uniform << "\n";
  std::ostringstream tsv;
  tsv << "layer\texpert\tf\tP\n";
  for (std::size_t l = 0; l < st.f.size(); ++l) {
    double sum_f = 0, sum_p = 0, max_f = 0;
    out << "layer " << l << "\n  expert        f_i        P_i\n";
    for (std::size_t e = 0; e < st.n_experts; ++e) {
      out << "  " << std::setw(6) << e << std::fixed << std::setprecision(6) << std::setw(11)
          << st.f[l][e] << std::setw(11) << st.P[l][e] << "\n";
      out.unsetf(std::ios::fixed);
      tsv << l << "\t" << e << "\t" << std::setprecision(9) << st.f[l][e] << "\t" << st.P[l][e]
          << "\n";
      sum_f += st.f[l][e];
      sum_p += st.P[l][e];
      max_f = std::max(max_f, st.f[l][e]);
    }
    const double mean_f = sum_f / static_cast<double>(st.n_experts);
    out << std::setprecision(6) << "  sum_f " << sum_f << "  sum_P " << sum_p << "  max_f "
        << max_f << "  max/mean " << max_f / mean_f << "\n";
  }
  std::filesystem::path tsv_path = f.tsv;
  if (tsv_path.empty()) {
    tsv_path = c.out_dir.empty() ? std::filesystem::path("route_stats.tsv")
                                 : std::filesystem::path(c.out_dir) / "route_stats.tsv";
  }
  if (tsv_path.has_parent_path()) std::filesystem::create_directories(tsv_path.parent_path());
  std::ofstream(tsv_path) << tsv.str();
  out << "# columns written to " << tsv_path.string() << "\n";
  return kExitOk;
}

int cmd_grad_check(const Common& c, const GradFlags& f, std::ostream& out) {
  // The check runs on a tiny dedicated shape; only --set model.* overrides apply.
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
  if (!c.overrides.empty()) {
    ConfigDocument tiny = ConfigDocument::parse(model_section_text(mc));
    for (const auto& o : c.overrides) {
      if (o.rfind("model.", 0) == 0) tiny.apply_override(o);
    }
    mc = ExperimentConfig::from_document(tiny).model;
  }
  if (f.seeds == 0) throw UsageError("--seeds must be positive");
  const std::uint64_t base = c.seed.value_or(1);
  ModelGradCheckOptions opts;
  opts.check.max_coords_per_param = f.max_coords;
  double worst = 0.0;
  for (std::size_t s = 0; s < f.seeds; ++s) {
    const GradCheckReport r = check_model_gradients(mc, base + s, opts);
    out << "seed " << base + s << "\tcoords " << r.coords_checked << "\tskipped " << r.coords_skipped
        << "\tmax_rel_error "
        << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
        << "\tworst " << r.worst_param << "[" << r.worst_index << "]\n";
    worst = std::max(worst, r.max_rel_error);
    if (r.coords_checked == 0) worst = std::numeric_limits<double>::infinity();
  }
  const bool pass = worst < f.threshold;
  out << (pass ? "PASS" : "FAIL") << " max_rel_error " << std::scientific << worst
      << " threshold " << f.threshold << std::defaultfloat << "\n";
  return pass ? kExitOk : kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked diffusion language model with a sparse mixture-of-experts backbone"};
  app.name("mdmoe");
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("-c,--config", common.config, "Config file")->envname(kConfigEnv);
  app.add_option("--set", common.overrides, "Override, e.g. --set stages.1.L_ctx=256")
      ->take_all()
      ->allow_extra_args(false);
  app.add_option("--seed", common.seed, "Seed for training, evaluation and sampling");
  app.add_option("-o,--out", common.out_dir, "Output directory");

  TrainFlags train_flags, sft_flags;
  auto add_train_flags = [](CLI::App* sub, TrainFlags& f) {
    sub->add_option("--stage", f.stages, "Run only the named stage(s)");
    sub->add_option("--resume", f.resume, "Continue from a stage checkpoint");
    sub->add_option("--checkpoint", f.checkpoint, "Initial parameters for the first stage");
    sub->add_option("--max-steps", f.max_steps, "Cap optimizer steps per stage");
    sub->add_flag("-q,--quiet", f.quiet, "No progress log");
  };
  CLI::App* train = app.add_subcommand("train", "Run the configured training stages");
  add_train_flags(train, train_flags);
  CLI::App* sft = app.add_subcommand("sft", "Run only the SFT stage(s)");
  add_train_flags(sft, sft_flags);

  SampleFlags sf;
  CLI::App* sample = app.add_subcommand("sample", "Generate text from a checkpoint");
  sample->add_option("--checkpoint", sf.checkpoint, "Checkpoint file")->required();
  sample->add_option("-p,--prompt", sf.prompt, "Prompt text");
  sample->add_option("--len", sf.len, "Generation length (default 1024)");
  sample->add_option("--block", sf.block, "Block size (default 64)");
  sample->add_option("--steps", sf.steps, "Denoising steps per block (default: block size)");
  sample->add_option("--policy", sf.policy, "greedy | sample");
  sample->add_option("--temperature", sf.temperature, "Sampling temperature");
  sample->add_option("--remask", sf.remask, "low_confidence | none");
  sample->add_flag("--vanilla", sf.vanilla, "One block spanning the whole generation");
  sample->add_flag("--chat", sf.chat, "Wrap the prompt in the dialogue template");
  sample->add_flag("--raw", sf.raw, "Do not cut the output at the first EOS");

  EvalFlags ef;
  CLI::App* eval = app.add_subcommand("eval", "Held-out diffusion bound per token");
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint (default: untrained model)");
  eval->add_option("--heldout", ef.heldout, "Held-out text file");
  eval->add_option("--n-mc", ef.n_mc, "Monte-Carlo draws per sequence");
  eval->add_option("--length", ef.length, "Window length in tokens");
  eval->add_option("--sequences", ef.sequences, "Number of windows");
  eval->add_flag("--zero-output", ef.zero_output, "Zero the output projection (uniform predictor)");

  RouteFlags rf;
  CLI::App* route = app.add_subcommand("route-stats", "Per-layer expert usage report");
  route->add_option("--checkpoint", rf.checkpoint, "Checkpoint (default: untrained model)");
  route->add_option("--corpus", rf.corpus, "Text sample (default: held-out file)");
  route->add_option("--sequences", rf.sequences, "Number of windows");
  route->add_option("--length", rf.length, "Window length in tokens");
  route->add_flag("--clean", rf.clean, "Route clean text instead of masked inputs");
  route->add_option("--tsv", rf.tsv, "Column file (default: <out>/route_stats.tsv)");

  GradFlags gf;
  CLI::App* grad = app.add_subcommand("grad-check", "Finite-difference check of the training loss");
  grad->add_option("--seeds", gf.seeds, "Number of seeds");
  grad->add_option("--max-coords", gf.max_coords, "Coordinates per tensor (0 = all)");
  grad->add_option("--threshold", gf.threshold, "Maximum relative error");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(common, train_flags, false, out, err);
    if (sft->parsed()) return cmd_train(common, sft_flags, true, out, err);
    if (sample->parsed()) return cmd_sample(common, sf, out, err);
    if (eval->parsed()) return cmd_eval(common, ef, out);
    if (route->parsed()) return cmd_route_stats(common, rf, out);
    if (grad->parsed()) return cmd_grad_check(common, gf, out);
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigFileError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mdmoe::cli
