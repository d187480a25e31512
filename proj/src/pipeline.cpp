// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lenctl/error.hpp"
#include "lenctl/harness.hpp"
#include "lenctl/io.hpp"

namespace lenctl {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Stream ids under cfg.seed, one per consumer.
enum SeedStream : std::uint64_t {
  kCorpusSeed = 1,
  kExtractorDataSeed,
  kExtractorTrainSeed,
  kRewardDataSeed,
  kRewardTrainSeed,
  kSftDataSeed,
  kPolicyInitSeed,
  kSftTrainSeed,
  kCriticInitSeed,
  kPpoSeed,
  kEvalSeed,
};

std::uint64_t stage_seed(const ExperimentConfig& cfg, SeedStream s) { return derive_seed(cfg.seed, s); }

void record_config(const ExperimentConfig& cfg, const RunPaths& paths) {
  fs::create_directories(paths.root);
  atomic_write(paths.root / "config.txt", cfg.canonical());
}

void write_jsonl(const fs::path& path, const std::vector<std::string>& lines) {
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  atomic_write(path, body);
}

ordered_json policy_meta(const ExperimentConfig& cfg, std::string_view stage) {
  ordered_json j;
  j["artifact"] = "policy";
  j["stage"] = stage;
  j["policy"] = to_json(cfg.policy);
  j["critic"] = to_json(cfg.critic);
  j["config_hash"] = cfg.hash();
  return j;
}

std::vector<RewardExample> slice(const std::vector<RewardExample>& all, std::size_t a, std::size_t b) {
  return {all.begin() + static_cast<std::ptrdiff_t>(a), all.begin() + static_cast<std::ptrdiff_t>(b)};
}

}  // namespace

fs::path RunPaths::corpus(std::string_view split) const {
  return root / "data" / ("corpus_" + std::string(split) + ".jsonl");
}
fs::path RunPaths::reward_data(std::string_view split) const {
  return root / "data" / ("reward_" + std::string(split) + ".jsonl");
}
fs::path RunPaths::rl(std::string_view run) const { return root / (std::string(run) + ".ckpt"); }
fs::path RunPaths::rl_series(std::string_view run, int iter) const {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%03d.ckpt", iter);
  return root / "rl" / std::string(run) / name;
}
fs::path RunPaths::metrics(std::string_view stage) const {
  return root / "metrics" / (std::string(stage) + ".jsonl");
}
fs::path RunPaths::eval(ControlScope scope, Setting setting) const {
  return root / "eval" / (std::string(scope_name(scope)) + "_" + std::string(setting_name(setting)) + ".jsonl");
}

std::string rl_run_name(const ExperimentConfig& cfg) { return cfg.ppo.actor_only ? "rl_actor_only" : "rl"; }

void stage_synth_data(const ExperimentConfig& cfg, const RunPaths& paths) {
  record_config(cfg, paths);
  const auto kinds = cfg.kinds();
  // One sub-stream per split.
  const std::uint64_t base = stage_seed(cfg, kCorpusSeed);
  const std::pair<const char*, std::size_t> splits[] = {{"train", cfg.n_train}, {"val", cfg.n_val},
                                                        {"eval", cfg.n_eval}};
  for (std::size_t s = 0; s < 3; ++s) {
    const auto corpus = synth_corpus(derive_seed(base, s), splits[s].second, kinds, cfg.corpus);
    write_corpus(paths.corpus(splits[s].first), corpus);
  }
  const auto rows = simulate_reward_dataset(stage_seed(cfg, kRewardDataSeed), cfg.reward_examples, cfg.policy.max_len);
  const std::size_t n_train = rows.size() * 8 / 10, n_val = rows.size() / 10;
  write_reward_dataset(paths.reward_data("train"), slice(rows, 0, n_train));
  write_reward_dataset(paths.reward_data("val"), slice(rows, n_train, n_train + n_val));
  write_reward_dataset(paths.reward_data("test"), slice(rows, n_train + n_val, rows.size()));
}

ExtractorTrainResult stage_train_extractor(const ExperimentConfig& cfg, const RunPaths& paths) {
  record_config(cfg, paths);
  auto data = synth_extractor_data(stage_seed(cfg, kExtractorDataSeed), cfg.extractor_train + cfg.extractor_val);
  const std::span<const AugmentedUtterance> all(data);
  auto ecfg = cfg.extractor;
  ecfg.seed = stage_seed(cfg, kExtractorTrainSeed);
  auto res = train_extractor(all.first(cfg.extractor_train), all.subspan(cfg.extractor_train), ecfg);
  save_checkpoint(paths.extractor(), extractor_checkpoint(res.model));
  std::vector<std::string> lines;
  for (std::size_t e = 0; e < res.train_loss.size(); ++e) {
    ordered_json j;
    j["epoch"] = e;
    j["train_loss"] = res.train_loss[e];
    j["val_match"] = res.val_match[e];
    lines.push_back(j.dump());
  }
  write_jsonl(paths.metrics("extractor"), lines);
  return res;
}

double stage_train_reward(const ExperimentConfig& cfg, const RunPaths& paths) {
  record_config(cfg, paths);
  const auto train = read_reward_dataset(paths.reward_data("train"));
  const auto val = read_reward_dataset(paths.reward_data("val"));
  const auto test = read_reward_dataset(paths.reward_data("test"));
  auto rcfg = cfg.regressor;
  rcfg.seed = stage_seed(cfg, kRewardTrainSeed);
  const auto res = train_reward_regressor(train, val, rcfg);
  save_checkpoint(paths.regressor(), regressor_checkpoint(res.model));
  const double test_mse = res.model.loss(test, nullptr);
  ordered_json j;
  j["best_epoch"] = res.best_epoch;
  j["best_val_mse"] = res.best_val_mse;
  j["test_mse"] = test_mse;
  write_jsonl(paths.metrics("reward"), {j.dump()});
  return test_mse;
}

SftResult stage_sft(const ExperimentConfig& cfg, const RunPaths& paths) {
  record_config(cfg, paths);
  const auto train = read_corpus(paths.corpus("train"));
  const auto val = read_corpus(paths.corpus("val"));
  const std::uint64_t data_seed = stage_seed(cfg, kSftDataSeed);
  const auto train_ex = make_sft_examples(train, derive_seed(data_seed, 0));
  const auto val_ex = make_sft_examples(val, derive_seed(data_seed, 1));
  Policy init(cfg.policy);
  Rng rng(stage_seed(cfg, kPolicyInitSeed));
  init.init_random(rng);
  auto scfg = cfg.sft;
  scfg.seed = stage_seed(cfg, kSftTrainSeed);
  auto res = sft_train(train_ex, val_ex, std::move(init), scfg);

  Checkpoint c;
  c.set_meta(policy_meta(cfg, "sft"));
  add_params(c, res.policy.params());
  save_checkpoint(paths.sft(), c);

  std::vector<std::string> lines;
  for (std::size_t e = 0; e < res.val_ppl.size(); ++e) {
    ordered_json j;
    j["epoch"] = e + 1;
    j["val_ppl"] = res.val_ppl[e];
    lines.push_back(j.dump());
  }
  write_jsonl(paths.metrics("sft"), lines);
  return res;
}

RlStageResult stage_rl(const ExperimentConfig& cfg, const RunPaths& paths) {
  record_config(cfg, paths);
  const auto train = read_corpus(paths.corpus("train"));
  const auto val = read_corpus(paths.corpus("val"));
  Policy policy = load_policy(paths.sft());
  Critic critic(cfg.critic);
  Rng rng(stage_seed(cfg, kCriticInitSeed));
  critic.init_random(rng);
  const auto reward = make_reward_model(cfg, paths);
  const auto extractor = make_prompt_extractor(cfg, paths);

  auto pcfg = cfg.ppo;
  pcfg.seed = stage_seed(cfg, kPpoSeed);
  pcfg.filter_n = cfg.filter_n;
  pcfg.max_len = cfg.policy.max_len;

  const std::string run = rl_run_name(cfg);
  const fs::path log = paths.metrics(run);
  fs::create_directories(log.parent_path());
  atomic_write(log, "");
  fs::remove_all(paths.root / "rl" / run);

  RlStageResult out{train_rl(std::move(policy), std::move(critic), pcfg, train, val, *reward, extractor,
                             [&](const RlMetrics& m) { append_line(log, m.to_json()); }),
                    {}};

  std::vector<RlMetrics> series;
  for (const auto& ck : out.rl.checkpoints) {
    series.push_back(ck.metrics);
    Checkpoint c;
    auto meta = policy_meta(cfg, run);
    meta["iter"] = ck.metrics.iter;
    meta["metrics"] = ordered_json::parse(ck.metrics.to_json());
    c.set_meta(meta);
    add_params(c, ck.policy);
    if (ck.critic.count() > 0) add_params(c, ck.critic);
    save_checkpoint(paths.rl_series(run, ck.metrics.iter), c);
  }
  out.selection = select_checkpoint(series, cfg.relevance_drop);

  if (out.selection.fallback) {
    atomic_write(paths.rl(run), read_file(paths.sft()));
  } else {
    atomic_write(paths.rl(run), read_file(paths.rl_series(run, series[out.selection.index].iter)));
  }
  ordered_json sel;
  sel["run"] = run;
  sel["index"] = out.selection.index;
  sel["iter"] = series.empty() ? 0 : series[out.selection.index].iter;
  sel["fallback"] = out.selection.fallback;
  sel["val_error"] = series.empty() ? 0.0 : series[out.selection.index].val_error;
  sel["val_relevance"] = series.empty() ? 0.0 : series[out.selection.index].val_relevance;
  append_line(paths.metrics("selection"), sel.dump());
  return out;
}

std::vector<EvalRecord> stage_eval(const ExperimentConfig& cfg, const RunPaths& paths, Setting setting) {
  record_config(cfg, paths);
  const auto data = read_corpus(paths.corpus("eval"));
  const Policy policy = load_policy(uses_rl(setting) ? paths.rl(rl_run_name(cfg)) : paths.sft());
  const auto reward = make_reward_model(cfg, paths);
  const auto extractor = make_prompt_extractor(cfg, paths);
  const int n = uses_filter(setting) ? cfg.filter_n : 1;
  auto records =
      evaluate_policy(policy, data, extractor, *reward, n, stage_seed(cfg, kEvalSeed), cfg.policy.max_len);

  std::vector<std::string> lines;
  double err = 0.0, rel = 0.0;
  for (const auto& r : records) {
    lines.push_back(eval_record_json(r, setting, cfg.scope));
    err += r.error;
    rel += r.relevance;
  }
  const fs::path out = paths.eval(cfg.scope, setting);
  fs::create_directories(out.parent_path());
  write_jsonl(out, lines);

  ordered_json j;
  j["scope"] = scope_name(cfg.scope);
  j["setting"] = setting_name(setting);
  j["n"] = n;
  j["count"] = records.size();
  j["error"] = records.empty() ? 0.0 : err / static_cast<double>(records.size());
  j["relevance"] = records.empty() ? 0.0 : rel / static_cast<double>(records.size());
  append_line(paths.metrics("eval"), j.dump());
  return records;
}

Report stage_report(const ExperimentConfig& cfg, const RunPaths& paths) {
  Report rep = build_report(paths.root, cfg.relevance_drop);
  const fs::path dir = paths.report_dir();
  fs::create_directories(dir);
  atomic_write(dir / "summary.md", rep.table_markdown());
  atomic_write(dir / "summary.csv", rep.table_csv());
  atomic_write(dir / "curves.csv", rep.curves_csv);
  atomic_write(dir / "ablation.md", rep.ablation_markdown());
  return rep;
}

Report run_matrix(const ExperimentConfig& cfg, const RunPaths& paths) {
  stage_synth_data(cfg, paths);
  stage_train_extractor(cfg, paths);
  stage_train_reward(cfg, paths);
  stage_sft(cfg, paths);
  stage_rl(cfg, paths);
  for (Setting s : kAllSettings) stage_eval(cfg, paths, s);
  return stage_report(cfg, paths);
}

PromptExtractor make_prompt_extractor(const ExperimentConfig& cfg, const RunPaths& paths) {
  if (cfg.prompt_extractor == "rule") return rule_extractor();
  auto model = std::make_shared<const Extractor>(extractor_from(load_checkpoint(paths.extractor())));
  return [model](std::span<const std::string> tokens) { return predict(*model, tokens).prompt(); };
}

std::unique_ptr<RewardModel> make_reward_model(const ExperimentConfig& cfg, const RunPaths& paths) {
  if (cfg.reward_model == "rule") return std::make_unique<RuleRewardModel>(cfg.policy.max_len);
  return std::make_unique<RegressorRewardModel>(regressor_from(load_checkpoint(paths.regressor())));
}

Policy load_policy(const fs::path& ckpt) {
  const Checkpoint c = load_checkpoint(ckpt);
  const auto meta = c.meta();
  if (meta.value("artifact", "") != "policy") throw FormatError("checkpoint: " + ckpt.string() + " is not a policy");
  return Policy::from_params(extract_params(c, "policy."), policy_config_from(meta.at("policy")));
}

}  // namespace lenctl
