// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a flat INI file with one section per module.
// Unknown sections or keys and invariant violations throw ConfigError.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lenctl/control_grammar.hpp"
#include "lenctl/extractor.hpp"
#include "lenctl/ppo.hpp"
#include "lenctl/reward.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

enum class Setting : std::uint8_t { Prompt, PromptRl, PromptFilter, PromptRlFilter };
enum class ControlScope : std::uint8_t { SingleType, MultipleType };

std::string_view setting_name(Setting s);  // "prompt", "prompt_rl", ...
Setting setting_from_name(std::string_view name);
std::string_view scope_name(ControlScope s);  // "single_type", "multiple_type"
ControlScope scope_from_name(std::string_view name);
bool uses_rl(Setting s);
bool uses_filter(Setting s);
Setting with_filter(Setting s);

inline constexpr Setting kAllSettings[] = {Setting::Prompt, Setting::PromptRl, Setting::PromptFilter,
                                           Setting::PromptRlFilter};

struct ExperimentConfig {
  Setting setting = Setting::PromptRl;
  ControlScope scope = ControlScope::SingleType;
  std::uint64_t seed = 1;
  std::string prompt_extractor = "rule";  // rule | learned
  std::string reward_model = "rule";      // rule | regressor

  std::size_t n_train = 4000;
  std::size_t n_val = 300;
  std::size_t n_eval = 1000;
  CorpusConfig corpus;

  std::size_t extractor_train = 20000;
  std::size_t extractor_val = 2000;
  ExtractorConfig extractor;

  std::size_t reward_examples = 100000;  // split 80 / 10 / 10
  RegressorConfig regressor;

  SftConfig sft{.epochs = 30};
  PolicyConfig policy;
  CriticConfig critic;
  PPOConfig ppo;

  int filter_n = 8;
  double relevance_drop = 0.01;

  // Kinds the policy is trained and evaluated on.
  std::vector<ControlKind> kinds() const;
  void validate() const;
  // Canonical "section.key = value" lines; equal configs give equal strings.
  std::string canonical() const;
  std::string hash() const;  // 16 hex digits of FNV-1a over canonical()
};

ExperimentConfig parse_config(std::string_view ini_text);
// Throws DependencyError when the file is missing.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace lenctl
