// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline stages behind the command-line tool, checkpoint selection,
// evaluation logs and the summary report.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lenctl/checkpoint.hpp"
#include "lenctl/config.hpp"
#include "lenctl/ppo.hpp"

namespace lenctl {

struct Selection {
  std::size_t index = 0;  // into the series; 0 is the starting (SFT) policy
  bool fallback = false;  // no RL checkpoint stayed within the relevance threshold
};

// Among entries 1.. whose relevance dropped less than `max_drop` below entry
// 0, the lowest validation error (earliest on ties); entry 0 otherwise.
Selection select_checkpoint(std::span<const RlMetrics> series, double max_drop);

struct EvalRecord {
  std::size_t index = 0;
  StandardControlPrompt truth;   // what the user asked for
  StandardControlPrompt prompt;  // what the extractor recovered
  int length = 0;
  double error = 0.0;      // against the truth
  double relevance = 0.0;
  double reward = 0.0;     // normalized, against the extracted prompt
  int selected = 0;        // candidate index
};

// Per input i, N candidates seeded derive_seed(seed, i) + j; the selected one
// is logged. N = 1 is plain sampling.
std::vector<EvalRecord> evaluate_policy(const Policy& policy, std::span<const CorpusExample> data,
                                        const PromptExtractor& extractor, const RewardModel& reward, int n,
                                        std::uint64_t seed, int max_len);

std::string eval_record_json(const EvalRecord& r, Setting setting, ControlScope scope);

struct ReportRow {
  std::string scope, setting, kind;  // kind "all" aggregates the others
  std::size_t count = 0;
  double error = 0.0;
  double relevance = 0.0;
};

struct AblationRow {
  std::string run;
  int iterations = 0;
  double sft_error = 0.0;
  int selected_iter = 0;
  double selected_error = 0.0;
  double selected_relevance = 0.0;
  bool fallback = false;
  double first_value_loss = 0.0;
  double last_value_loss = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<AblationRow> ablation;
  std::string curves_csv;  // run,iter,policy_loss,value_loss,val_reward,val_error,val_relevance
  std::vector<std::string> warnings;

  std::string table_markdown() const;
  std::string table_csv() const;
  std::string ablation_markdown() const;
};

// Reads eval/*.jsonl and metrics/rl*.jsonl under `run_dir`. Missing or empty
// directories give an empty report with a warning.
Report build_report(const std::filesystem::path& run_dir, double max_drop);

// File layout of one run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path corpus(std::string_view split) const;
  std::filesystem::path reward_data(std::string_view split) const;
  std::filesystem::path extractor() const { return root / "extractor.ckpt"; }
  std::filesystem::path regressor() const { return root / "reward.ckpt"; }
  std::filesystem::path sft() const { return root / "sft.ckpt"; }
  std::filesystem::path rl(std::string_view run) const;
  std::filesystem::path rl_series(std::string_view run, int iter) const;
  std::filesystem::path metrics(std::string_view stage) const;
  std::filesystem::path eval(ControlScope scope, Setting setting) const;
  std::filesystem::path report_dir() const { return root / "report"; }
};

// "rl" or "rl_actor_only".
std::string rl_run_name(const ExperimentConfig& cfg);

void stage_synth_data(const ExperimentConfig& cfg, const RunPaths& paths);
ExtractorTrainResult stage_train_extractor(const ExperimentConfig& cfg, const RunPaths& paths);
// Returns held-out MSE on the test split.
double stage_train_reward(const ExperimentConfig& cfg, const RunPaths& paths);
SftResult stage_sft(const ExperimentConfig& cfg, const RunPaths& paths);

struct RlStageResult {
  RlResult rl;
  Selection selection;
};
RlStageResult stage_rl(const ExperimentConfig& cfg, const RunPaths& paths);

// Uses rl.ckpt for the RL settings, sft.ckpt otherwise, and filter.n
// candidates for the filtered ones.
std::vector<EvalRecord> stage_eval(const ExperimentConfig& cfg, const RunPaths& paths, Setting setting);
Report stage_report(const ExperimentConfig& cfg, const RunPaths& paths);

// Every stage, then all four settings, then the report.
Report run_matrix(const ExperimentConfig& cfg, const RunPaths& paths);

PromptExtractor make_prompt_extractor(const ExperimentConfig& cfg, const RunPaths& paths);
std::unique_ptr<RewardModel> make_reward_model(const ExperimentConfig& cfg, const RunPaths& paths);
Policy load_policy(const std::filesystem::path& ckpt);

}  // namespace lenctl
