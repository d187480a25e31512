// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/config.hpp"

#include <charconv>
#include <cstdio>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lenctl/error.hpp"
#include "lenctl/io.hpp"

namespace lenctl {

namespace pt = boost::property_tree;

std::string_view setting_name(Setting s) {
  switch (s) {
    case Setting::Prompt: return "prompt";
    case Setting::PromptRl: return "prompt_rl";
    case Setting::PromptFilter: return "prompt_filter";
    case Setting::PromptRlFilter: return "prompt_rl_filter";
  }
  return "prompt";
}

Setting setting_from_name(std::string_view name) {
  for (Setting s : kAllSettings) {
    if (setting_name(s) == name) return s;
  }
  throw ConfigError("unknown setting '" + std::string(name) + "'");
}

std::string_view scope_name(ControlScope s) {
  return s == ControlScope::SingleType ? "single_type" : "multiple_type";
}

ControlScope scope_from_name(std::string_view name) {
  if (name == "single_type") return ControlScope::SingleType;
  if (name == "multiple_type") return ControlScope::MultipleType;
  throw ConfigError("unknown control scope '" + std::string(name) + "'");
}

bool uses_rl(Setting s) { return s == Setting::PromptRl || s == Setting::PromptRlFilter; }
bool uses_filter(Setting s) { return s == Setting::PromptFilter || s == Setting::PromptRlFilter; }
Setting with_filter(Setting s) { return uses_rl(s) ? Setting::PromptRlFilter : Setting::PromptFilter; }

std::vector<ControlKind> ExperimentConfig::kinds() const {
  if (scope == ControlScope::SingleType) return {ControlKind::EqualTo};
  return {ControlKind::MoreThan, ControlKind::LessThan, ControlKind::EqualTo, ControlKind::Between};
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  need(prompt_extractor == "rule" || prompt_extractor == "learned", "pipeline.prompt_extractor must be rule or learned");
  need(reward_model == "rule" || reward_model == "regressor", "pipeline.reward_model must be rule or regressor");
  need(n_train >= 1 && n_val >= 1 && n_eval >= 1, "corpus sizes must be positive");
  need(corpus.doc_min >= 1 && corpus.doc_max >= corpus.doc_min, "corpus.doc_min <= corpus.doc_max");
  need(corpus.ref_min >= 1 && corpus.ref_max >= corpus.ref_min && corpus.ref_max <= corpus.doc_max,
       "corpus reference bounds inconsistent");
  need(corpus.ref_sd >= 0.0 && corpus.topic_size >= 1 && corpus.topic_prob >= 0.0 && corpus.topic_prob <= 1.0,
       "corpus topic parameters out of range");
  need(extractor_train >= 1 && extractor_val >= 1, "extractor sizes must be positive");
  need(extractor.embed >= 1 && extractor.lr > 0.0 && extractor.epochs >= 1 && extractor.batch_size >= 1,
       "extractor hyperparameters out of range");
  need(reward_examples >= 10, "reward.examples must be at least 10");
  need(regressor.hidden >= 1 && regressor.lr > 0.0 && regressor.epochs >= 1 && regressor.batch_size >= 1,
       "reward hyperparameters out of range");
  need(regressor.max_length == policy.max_len, "reward.max_length must equal policy.max_len");
  need(sft.lr > 0.0 && sft.epochs >= 1 && sft.batch_size >= 1, "sft hyperparameters out of range");
  need(policy.vocab_size == Vocab::standard().size() && critic.vocab_size == policy.vocab_size,
       "policy and critic must use the standard vocabulary");
  need(policy.embed >= 1 && policy.hidden >= 1 && policy.max_len >= 1, "policy dimensions out of range");
  need(critic.embed >= 1 && critic.hidden >= 1 && critic.positions >= 1, "critic dimensions out of range");
  need(ppo.max_len == policy.max_len, "ppo.max_len must equal policy.max_len");
  need(filter_n >= 1, "filter.n must be at least 1");
  need(relevance_drop >= 0.0, "select.relevance_drop must be non-negative");
  ppo.validate();
}

namespace {

// One place lists every key, used for parsing, unknown-key detection and the
// canonical dump.
template <class Visitor>
void visit(ExperimentConfig& c, Visitor&& v) {
  std::string setting(setting_name(c.setting)), scope(scope_name(c.scope));
  v("experiment.setting", setting);
  v("experiment.scope", scope);
  v("experiment.seed", c.seed);
  c.setting = setting_from_name(setting);
  c.scope = scope_from_name(scope);
  v("pipeline.prompt_extractor", c.prompt_extractor);
  v("pipeline.reward_model", c.reward_model);

  v("corpus.train", c.n_train);
  v("corpus.val", c.n_val);
  v("corpus.eval", c.n_eval);
  v("corpus.doc_min", c.corpus.doc_min);
  v("corpus.doc_max", c.corpus.doc_max);
  v("corpus.ref_mean", c.corpus.ref_mean);
  v("corpus.ref_sd", c.corpus.ref_sd);
  v("corpus.ref_min", c.corpus.ref_min);
  v("corpus.ref_max", c.corpus.ref_max);
  v("corpus.topic_size", c.corpus.topic_size);
  v("corpus.topic_prob", c.corpus.topic_prob);

  v("extractor.train", c.extractor_train);
  v("extractor.val", c.extractor_val);
  v("extractor.embed", c.extractor.embed);
  v("extractor.lr", c.extractor.lr);
  v("extractor.momentum", c.extractor.momentum);
  v("extractor.epochs", c.extractor.epochs);
  v("extractor.batch", c.extractor.batch_size);
  v("extractor.init_sd", c.extractor.init_sd);
  v("extractor.feature_norm", c.extractor.feature_norm);

  v("reward.examples", c.reward_examples);
  v("reward.hidden", c.regressor.hidden);
  v("reward.max_length", c.regressor.max_length);
  v("reward.lr", c.regressor.lr);
  v("reward.epochs", c.regressor.epochs);
  v("reward.batch", c.regressor.batch_size);

  v("sft.lr", c.sft.lr);
  v("sft.epochs", c.sft.epochs);
  v("sft.batch", c.sft.batch_size);
  v("sft.clip_norm", c.sft.clip_norm);

  v("policy.embed", c.policy.embed);
  v("policy.hidden", c.policy.hidden);
  v("policy.max_len", c.policy.max_len);
  v("critic.embed", c.critic.embed);
  v("critic.hidden", c.critic.hidden);
  v("critic.positions", c.critic.positions);

  v("ppo.clip_eps", c.ppo.clip_eps);
  v("ppo.entropy_coef", c.ppo.entropy_coef);
  v("ppo.kl_coef", c.ppo.kl_coef);
  v("ppo.actor_lr", c.ppo.actor_lr);
  v("ppo.critic_lr", c.ppo.critic_lr);
  v("ppo.adam_eps", c.ppo.adam_eps);
  v("ppo.update_timestep", c.ppo.update_timestep);
  v("ppo.surrogate_epochs", c.ppo.surrogate_epochs);
  v("ppo.minibatch", c.ppo.minibatch);
  v("ppo.iterations", c.ppo.iterations);
  v("ppo.actor_only", c.ppo.actor_only);
  v("ppo.entropy_sign", c.ppo.entropy_sign);
  v("ppo.filter_rollouts", c.ppo.filter_rollouts);

  v("filter.n", c.filter_n);
  v("select.relevance_drop", c.relevance_drop);
}

std::string format_value(const std::string& s) { return s; }
std::string format_value(bool b) { return b ? "true" : "false"; }
std::string format_value(double d) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);  // shortest exact form
  return std::string(buf, res.ptr);
}
template <class T>
std::string format_value(T v) {
  return std::to_string(v);
}

template <class T>
void read_value(const pt::ptree& tree, const std::string& key, T& out) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return;
  const std::string text = node->data();
  if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else throw ConfigError("config: " + key + " must be true or false, got '" + text + "'");
  } else {
    std::istringstream in(text);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("config: cannot parse " + key + " = '" + text + "'");
    if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text[0] == '-') throw ConfigError("config: " + key + " must be non-negative");
    }
    out = v;
  }
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  ExperimentConfig copy = *this;
  std::string out;
  visit(copy, [&](const char* key, auto& value) { out += std::string(key) + " = " + format_value(value) + "\n"; });
  return out;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_config(std::string_view ini_text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(ini_text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  std::set<std::string> known;
  visit(cfg, [&](const char* key, auto& value) {
    known.insert(key);
    read_value(tree, key, value);
  });
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, unused] : body) {
      if (!known.contains(section + "." + key)) throw ConfigError("config: unknown key " + section + "." + key);
    }
  }
  cfg.ppo.max_len = cfg.policy.max_len;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

}  // namespace lenctl
