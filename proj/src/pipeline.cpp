// Copyright 2026 The mdmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mdmoe/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace mdmoe {

StageData load_stage_data(const ExperimentConfig& cfg, const StageConfig& stage) {
  StageData data;
  if (stage.kind == StageConfig::Kind::kSft) {
    if (cfg.data.sft.empty()) throw DataError("stage " + stage.name + ": [data] sft is not set");
    data.sft = load_sft_records(cfg.data.sft);
    return data;
  }
  for (const auto& [name, path] : cfg.data.corpora) {
    double weight = 1.0;
    if (!stage.corpus_weights.empty()) {
      const auto it = stage.corpus_weights.find(name);
      weight = it == stage.corpus_weights.end() ? 0.0 : it->second;
    }
    if (weight > 0.0) data.mixture.add(PackedCorpus::from_file(name, path), weight);
  }
  if (data.mixture.empty()) throw DataError("stage " + stage.name + " selects no corpus");
  return data;
}

std::vector<TokenSeq> load_heldout(const ExperimentConfig& cfg, std::size_t length) {
  if (cfg.data.heldout.empty() || cfg.train.eval_sequences == 0) return {};
  const PackedCorpus corpus = PackedCorpus::from_file("heldout", cfg.data.heldout);
  return heldout_windows(corpus, length, cfg.train.eval_sequences);
}

namespace {

nlohmann::ordered_json summary_json(const PipelineResult& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& s : r.stages) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["kind"] = s.kind;
    e["init"] = s.init;
    e["steps"] = s.steps;
    e["tokens"] = s.tokens;
    e["L_ctx"] = s.L_ctx;
    e["rope_base"] = s.rope_base;
    e["sft_dropped"] = s.sft_dropped;
    if (s.bound) {
      e["eval_bound"] = s.bound->mean;
      e["eval_stderr"] = s.bound->std_error;
    }
    j.push_back(e);
  }
  return j;
}

}  // namespace

template <class T>
PipelineResult run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& options) {
  cfg.validate();
  const std::string config_text = cfg.to_text();
  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);

  std::ofstream metrics;
  if (write) {
    const auto mode = options.resume ? std::ios::app : std::ios::trunc;
    metrics.open(options.out_dir / "metrics.jsonl", std::ios::out | mode);
    if (!metrics) throw std::runtime_error("cannot write " + (options.out_dir / "metrics.jsonl").string());
  }

  std::size_t first = 0;
  if (options.resume) {
    const auto it = std::find_if(cfg.stages.begin(), cfg.stages.end(),
                                 [&](const StageConfig& s) { return s.name == options.resume->stage; });
    if (it == cfg.stages.end()) {
      throw CheckpointError("resume checkpoint names unknown stage '" + options.resume->stage + "'");
    }
    first = static_cast<std::size_t>(it - cfg.stages.begin());
  }

  Model<T> model(cfg.model);
  bool have_params = false;
  std::uint64_t total_tokens = 0;
  PipelineResult result;
  if (options.init) {
    if (model_digest(options.init->model) != model_digest(cfg.model)) {
      throw CheckpointError("initial checkpoint does not match the configured model");
    }
    import_parameters(options.init->params, model);
    total_tokens = options.init->total_tokens;
    have_params = true;
  }
  if (options.resume && write && std::filesystem::exists(options.out_dir / "best.ckpt")) {
    result.best = Checkpoint::load(options.out_dir / "best.ckpt");
  }

  for (std::size_t si = first; si < cfg.stages.size(); ++si) {
    const StageConfig& stage = cfg.stages[si];
    if (!options.only_stages.empty() &&
        std::find(options.only_stages.begin(), options.only_stages.end(), stage.name) ==
            options.only_stages.end()) {
      continue;
    }
    const bool resuming = options.resume && si == first;
    StageSummary summary;
    summary.name = stage.name;
    summary.kind = stage_kind_name(stage.kind);
    summary.L_ctx = stage.L_ctx;
    summary.rope_base = stage.rope_base;

    std::string init = stage.init;
    if (resuming) {
      init = "resume";
    } else if (init == "scratch" || (!have_params && (init == "previous" || init == "best"))) {
      init = "scratch";
      model.init(stage_seed(cfg.train.seed, "init"));
    } else if (init == "best") {
      if (result.best) {
        import_parameters(result.best->params, model);
        init = "best:" + result.best->stage;
      } else {
        init = "previous";
      }
    } else if (init != "previous") {
      const Checkpoint c = Checkpoint::load(init);
      if (model_digest(c.model) != model_digest(cfg.model)) {
        throw CheckpointError("checkpoint " + init + " does not match the configured model");
      }
      import_parameters(c.params, model);
    }
    have_params = true;
    summary.init = init;
    // Non-learned constants; the parameter layout is unchanged.
    model.set_rope_base(stage.rope_base);

    StageData data;
    if (stage.token_budget > 0) data = load_stage_data(cfg, stage);
    const std::vector<TokenSeq> heldout = load_heldout(cfg, stage.L_ctx);

    StageRunOptions run;
    run.out_dir = write && stage.checkpoint_interval > 0 ? options.out_dir : std::filesystem::path{};
    run.metrics = write ? &metrics : nullptr;
    run.log = options.log;
    run.heldout = heldout;
    run.max_steps = options.max_steps_per_stage;
    run.total_tokens_before = total_tokens;
    run.resume = resuming ? &*options.resume : nullptr;
    run.config_text = config_text;
    if (options.log != nullptr) {
      *options.log << "[" << stage.name << "] " << summary.kind << " budget " << stage.token_budget
                   << " tokens, L_ctx " << stage.L_ctx << ", rope_base " << stage.rope_base
                   << ", init " << init << std::endl;
    }
    StageResult sr = train_stage(cfg, stage, model, std::move(data), run);
    total_tokens = sr.final_state.total_tokens;
    summary.steps = sr.steps;
    summary.tokens = sr.final_state.tokens_seen;
    summary.sft_dropped = sr.sft_dropped;
    summary.bound = sr.final_bound;

    if (stage.kind == StageConfig::Kind::kPretrain && sr.best &&
        (!result.best || sr.best->eval_bound < result.best->eval_bound)) {
      result.best = std::move(sr.best);
      if (write) result.best->save(options.out_dir / "best.ckpt");
    }
    if (write) sr.final_state.save(options.out_dir / (stage.name + ".ckpt"));
    result.final_state = std::move(sr.final_state);
    result.stages.push_back(std::move(summary));
  }
  if (result.stages.empty()) {
    // Nothing selected: report the initial parameters.
    StageConfig none;
    none.name = "none";
    none.token_budget = 0;
    StageTrainer<T> idle(cfg, none, model, {}, total_tokens);
    result.final_state = idle.checkpoint(config_text);
  }
  if (write) {
    result.final_state.save(options.out_dir / "final.ckpt");
    std::ofstream(options.out_dir / "summary.json") << summary_json(result).dump(2) << "\n";
  }
  return result;
}

template PipelineResult run_pipeline<float>(const ExperimentConfig&, const PipelineOptions&);
template PipelineResult run_pipeline<double>(const ExperimentConfig&, const PipelineOptions&);

}  // namespace mdmoe
