// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Clipped-surrogate policy optimization with a terminal length reward, an
// entropy term, a KL penalty against the rollout policy and a value baseline.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lenctl/control_grammar.hpp"
#include "lenctl/optim.hpp"
#include "lenctl/reward.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

struct PPOConfig {
  double clip_eps = 0.2;
  double entropy_coef = 0.01;
  double kl_coef = 0.1;
  double actor_lr = 1e-4;
  double critic_lr = 3e-4;
  double adam_eps = 1e-7;
  int update_timestep = 512;  // M, trajectories per buffer
  int surrogate_epochs = 16;
  int minibatch = 32;
  int iterations = 40;
  bool actor_only = false;
  // false: the entropy term is a bonus (loss += c * S, S <= 0).
  // true: loss -= c * S.
  bool entropy_sign = false;
  bool filter_rollouts = false;
  int filter_n = 8;
  int max_len = 256;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

struct Trajectory {
  PolicyInput input;              // s' tokens + [SEP], document
  StandardControlPrompt prompt;   // s'
  std::vector<int> prompt_tokens; // s' without [SEP]; what the critic reads
  std::vector<int> a;
  std::vector<double> old_log_probs;  // per step
  std::vector<double> old_probs;      // steps x V
  double old_seq_log_prob = 0.0;
  double reward = 0.0;  // normalized
  double old_value = 0.0;
  int length = 0;
  std::vector<int> reference;
};

struct RolloutBuffer {
  std::vector<Trajectory> items;
  std::size_t skipped = 0;  // utterances the extractor could not resolve
};

using PromptExtractor = std::function<StandardControlPrompt(std::span<const std::string>)>;
// The template parser; AmbiguousConstraintError and unrecognised length
// phrases both count as skips in collect_rollouts.
PromptExtractor rule_extractor(const TemplateSet& templates = TemplateSet::builtin());

// Cycles through `stream` from `cursor` (advanced in place) until M
// trajectories are stored. Sample seeds come from (cfg.seed, sample_counter).
RolloutBuffer collect_rollouts(const Policy& policy, const Critic& critic, const RewardModel& reward,
                               const PromptExtractor& extractor, std::span<const CorpusExample> stream,
                               std::size_t& cursor, std::uint64_t& sample_counter, const PPOConfig& cfg);

enum class AdvantageMode { ActorCritic, ActorOnly };

double advantage(const Trajectory& t, AdvantageMode mode);
// exp of the clamped log difference to the stored sequence log-prob.
double ratio(double seq_log_prob, double old_seq_log_prob);
double ratio(const Policy& policy, const Trajectory& t);
double clip_surrogate(double r, double adv, double eps);
// Mean over steps and vocabulary of p log p; `probs` is steps x V.
double entropy_term(std::span<const double> probs, std::size_t vocab);
// Mean over steps of KL(p || q). Throws ShapeError on mismatched sizes.
double kl_penalty(std::span<const double> p, std::span<const double> q, std::size_t vocab);

struct PolicyLossParts {
  double loss = 0.0;
  double surrogate = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
};

// Minibatch mean of surrogate + entropy + KL terms; gradient accumulated into
// `grad` when non-null. Throws DivergenceError on a non-finite loss.
PolicyLossParts policy_loss(const Policy& policy, std::span<const Trajectory* const> batch,
                            const PPOConfig& cfg, ParamSet* grad);
// Mean of (V(s', a) - R)^2.
double value_loss(const Critic& critic, std::span<const Trajectory* const> batch, ParamSet* grad);

struct UpdateStats {
  std::size_t steps = 0;
  double policy_loss = 0.0;  // means over minibatch steps
  double value_loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
};

// n_epoch shuffled passes in minibatches of B, one optimizer step per
// minibatch for the policy and, unless actor_only, the critic. The buffer is
// cleared. On divergence both networks are restored and the error rethrown.
UpdateStats ppo_update(Policy& policy, Critic& critic, RolloutBuffer& buffer, const PPOConfig& cfg,
                       AdamW& actor_opt, AdamW& critic_opt, Rng& rng);

struct RlMetrics {
  int iter = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double val_reward = 0.0;     // normalized
  double val_error = 0.0;      // tokens
  double val_relevance = 0.0;
  std::size_t skipped = 0;

  std::string to_json() const;  // one JSONL line, no newline
};

struct RlCheckpoint {
  RlMetrics metrics;
  ParamSet policy;
  ParamSet critic;
};

struct ValidationResult {
  double reward = 0.0;
  double error = 0.0;
  double relevance = 0.0;
};

// One sampled generation per validation example with seeds fixed by `seed`.
ValidationResult validate_policy(const Policy& policy, const RewardModel& reward,
                                 const PromptExtractor& extractor, std::span<const CorpusExample> val,
                                 std::uint64_t seed, int max_len);

struct RlResult {
  Policy policy;
  Critic critic;
  std::vector<RlCheckpoint> checkpoints;  // [0] is the starting policy
};

// Iteration 0 evaluates the starting policy; each later iteration collects one
// buffer and runs ppo_update. `on_metrics` sees every row as it is produced.
RlResult train_rl(Policy policy, Critic critic, const PPOConfig& cfg, std::span<const CorpusExample> train,
                  std::span<const CorpusExample> val, const RewardModel& reward,
                  const PromptExtractor& extractor,
                  const std::function<void(const RlMetrics&)>& on_metrics = {});

}  // namespace lenctl
