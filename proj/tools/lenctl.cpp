// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: one subcommand per pipeline stage.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lenctl/error.hpp"
#include "lenctl/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI experiment config (defaults apply when omitted)");
  cmd->add_option("--seed", c.seed, "overrides experiment.seed");
  cmd->add_option("--out", c.out, "run directory")->required();
}

lenctl::ExperimentConfig resolve(const Common& c) {
  lenctl::ExperimentConfig cfg = c.config.empty() ? lenctl::ExperimentConfig{} : lenctl::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.ppo.max_len = cfg.policy.max_len;
  cfg.validate();
  return cfg;
}

void print_eval(const std::vector<lenctl::EvalRecord>& recs, lenctl::Setting s) {
  double err = 0.0, rel = 0.0;
  for (const auto& r : recs) {
    err += r.error;
    rel += r.relevance;
  }
  const double n = recs.empty() ? 1.0 : static_cast<double>(recs.size());
  std::printf("%s: n=%zu error=%.3f relevance=%.4f\n", std::string(lenctl::setting_name(s)).c_str(), recs.size(),
              err / n, rel / n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"length-controlled generation pipeline"};
  app.require_subcommand(1);
  Common common;
  std::string setting_name;

  auto* synth = app.add_subcommand("synth-data", "write corpus and reward-regressor datasets");
  auto* extractor = app.add_subcommand("train-extractor", "train the learned prompt extractor");
  auto* reward = app.add_subcommand("train-reward", "train the reward regressor");
  auto* sft = app.add_subcommand("sft", "supervised fine-tuning of the policy");
  auto* rl = app.add_subcommand("rl", "policy optimization from the SFT checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate one setting on the eval split");
  auto* filter_eval = app.add_subcommand("filter-eval", "evaluate the filtered variant of the setting");
  auto* report = app.add_subcommand("report", "aggregate logs into summary tables");
  auto* matrix = app.add_subcommand("matrix", "every stage, all four settings, then the report");
  for (auto* cmd : {synth, extractor, reward, sft, rl, eval, filter_eval, report, matrix}) add_common(cmd, common);
  for (auto* cmd : {eval, filter_eval}) {
    cmd->add_option("--setting", setting_name, "prompt | prompt_rl | prompt_filter | prompt_rl_filter");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(common);
    const lenctl::RunPaths paths{common.out};
    if (synth->parsed()) {
      lenctl::stage_synth_data(cfg, paths);
    } else if (extractor->parsed()) {
      const auto res = lenctl::stage_train_extractor(cfg, paths);
      std::printf("extractor: best val match %.4f at epoch %d\n", res.best_val_match, res.best_epoch);
    } else if (reward->parsed()) {
      std::printf("reward regressor: test mse %.3g\n", lenctl::stage_train_reward(cfg, paths));
    } else if (sft->parsed()) {
      const auto res = lenctl::stage_sft(cfg, paths);
      std::printf("sft: val ppl %.3f -> %.3f (epoch %d)\n", res.init_val_ppl, res.best_val_ppl, res.best_epoch);
    } else if (rl->parsed()) {
      const auto res = lenctl::stage_rl(cfg, paths);
      const auto& m = res.rl.checkpoints[res.selection.index].metrics;
      std::printf("rl: selected iter %d%s, val error %.3f, relevance %.4f\n", m.iter,
                  res.selection.fallback ? " (fallback to SFT)" : "", m.val_error, m.val_relevance);
    } else if (eval->parsed() || filter_eval->parsed()) {
      auto s = setting_name.empty() ? cfg.setting : lenctl::setting_from_name(setting_name);
      if (filter_eval->parsed()) s = lenctl::with_filter(s);
      print_eval(lenctl::stage_eval(cfg, paths, s), s);
    } else {
      const auto rep = report->parsed() ? lenctl::stage_report(cfg, paths) : lenctl::run_matrix(cfg, paths);
      for (const auto& w : rep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::cout << rep.table_markdown();
      if (!rep.ablation.empty()) std::cout << '\n' << rep.ablation_markdown();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
