// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include <nlohmann/json.hpp>

#include "lenctl/error.hpp"
#include "lenctl/filtering.hpp"

namespace lenctl {

namespace {

constexpr double kLogRatioClamp = 20.0;
constexpr double kProbFloor = 1e-300;

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

// Nothing when the extractor cannot resolve the utterance.
std::optional<StandardControlPrompt> try_extract(const PromptExtractor& extractor,
                                                 std::span<const std::string> text) {
  try {
    StandardControlPrompt p = extractor(text);
    p.validate();
    return p;
  } catch (const AmbiguousConstraintError&) {
    return std::nullopt;
  } catch (const InvalidPromptError&) {
    return std::nullopt;
  }
}

}  // namespace

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("ppo: clip_eps must lie in (0, 1)");
  if (!(actor_lr >= 0.0) || !(critic_lr >= 0.0)) throw ConfigError("ppo: learning rates must be non-negative");
  if (minibatch < 1 || update_timestep < minibatch) throw ConfigError("ppo: need update_timestep >= minibatch >= 1");
  if (surrogate_epochs < 1) throw ConfigError("ppo: surrogate_epochs must be at least 1");
  if (iterations < 0) throw ConfigError("ppo: iterations must be non-negative");
  if (entropy_coef < 0.0 || kl_coef < 0.0) throw ConfigError("ppo: loss weights must be non-negative");
  if (filter_n < 1) throw ConfigError("ppo: filter_n must be at least 1");
  if (max_len < 1) throw ConfigError("ppo: max_len must be at least 1");
  if (!(adam_eps > 0.0)) throw ConfigError("ppo: adam_eps must be positive");
}

PromptExtractor rule_extractor(const TemplateSet& templates) {
  return [parser = UtteranceParser(templates)](std::span<const std::string> tokens) {
    const ParseResult r = parser.parse(tokens);
    if (r.outcome == ParseOutcome::UnrecognizedPhrase) {
      throw InvalidPromptError("utterance has a length phrase outside every template");
    }
    return r.prompt;
  };
}

RolloutBuffer collect_rollouts(const Policy& policy, const Critic& critic, const RewardModel& reward,
                               const PromptExtractor& extractor, std::span<const CorpusExample> stream,
                               std::size_t& cursor, std::uint64_t& sample_counter, const PPOConfig& cfg) {
  if (cfg.update_timestep < 1) throw ConfigError("collect_rollouts: M must be at least 1");
  if (stream.empty()) throw EmptyInputError("collect_rollouts: empty data stream");
  const Vocab& vocab = Vocab::standard();
  const auto m = static_cast<std::size_t>(cfg.update_timestep);
  RolloutBuffer buf;
  buf.items.reserve(m);
  std::size_t misses = 0;
  while (buf.items.size() < m) {
    const CorpusExample& ex = stream[cursor];
    cursor = (cursor + 1) % stream.size();
    const auto parsed = try_extract(extractor, ex.utterance.text);
    if (!parsed) {
      ++buf.skipped;
      if (++misses > stream.size()) throw EmptyInputError("collect_rollouts: no usable utterance in the stream");
      continue;
    }
    misses = 0;
    const StandardControlPrompt& p = *parsed;

    Trajectory t;
    t.input = make_policy_input(vocab, p, ex.doc);
    t.prompt = p;
    t.prompt_tokens.assign(t.input.prompt.begin(), t.input.prompt.end() - 1);
    t.reference = ex.ref;
    const std::uint64_t seed = derive_seed(cfg.seed, sample_counter++);
    GenerationSample s;
    if (cfg.filter_rollouts) {
      auto cands = rank_and_select(generate_candidates(policy, t.input, cfg.filter_n, seed, cfg.max_len, true),
                                   reward, p, ex.ref);
      s = std::move(cands.candidates[static_cast<std::size_t>(cands.selected)]);
    } else {
      s = sample_sequence(policy, t.input, seed, cfg.max_len, true);
    }
    t.a = std::move(s.tokens);
    t.old_log_probs = std::move(s.step_log_probs);
    t.old_probs = std::move(s.step_probs);
    t.old_seq_log_prob = std::accumulate(t.old_log_probs.begin(), t.old_log_probs.end(), 0.0);
    t.length = s.length;
    t.reward = reward.score(p, s.length).normalized;
    t.old_value = cfg.actor_only ? 0.0 : critic_value(critic, t.prompt_tokens, t.a);
    buf.items.push_back(std::move(t));
  }
  return buf;
}

double advantage(const Trajectory& t, AdvantageMode mode) {
  return mode == AdvantageMode::ActorOnly ? t.reward : t.reward - t.old_value;
}

double ratio(double seq_log_prob, double old_seq_log_prob) {
  return std::exp(std::clamp(seq_log_prob - old_seq_log_prob, -kLogRatioClamp, kLogRatioClamp));
}

double ratio(const Policy& policy, const Trajectory& t) {
  const auto tr = policy_forward(policy, t.input, t.a);
  return ratio(std::accumulate(tr.token_log_probs.begin(), tr.token_log_probs.end(), 0.0), t.old_seq_log_prob);
}

double clip_surrogate(double r, double adv, double eps) {
  return -std::min(r * adv, std::clamp(r, 1.0 - eps, 1.0 + eps) * adv);
}

double entropy_term(std::span<const double> probs, std::size_t vocab) {
  if (vocab == 0 || probs.size() % vocab != 0) throw ShapeError("entropy_term: size is not a multiple of V");
  if (probs.empty()) return 0.0;
  double s = 0.0;
  for (double p : probs) s += plogp(p);
  return s / static_cast<double>(probs.size());
}

double kl_penalty(std::span<const double> p, std::span<const double> q, std::size_t vocab) {
  if (p.size() != q.size() || vocab == 0 || p.size() % vocab != 0) {
    throw ShapeError("kl_penalty: distribution shapes differ");
  }
  const std::size_t steps = p.size() / vocab;
  if (steps == 0) return 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbFloor)));
  }
  return kl / static_cast<double>(steps);
}

PolicyLossParts policy_loss(const Policy& policy, std::span<const Trajectory* const> batch,
                            const PPOConfig& cfg, ParamSet* grad) {
  PolicyLossParts out;
  if (batch.empty()) return out;
  const auto v = static_cast<std::size_t>(policy.config().vocab_size);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double ent_w = cfg.entropy_sign ? -cfg.entropy_coef : cfg.entropy_coef;
  const AdvantageMode mode = cfg.actor_only ? AdvantageMode::ActorOnly : AdvantageMode::ActorCritic;
  std::vector<double> dlogits;
  std::vector<double> logq;

  for (const Trajectory* t : batch) {
    const auto tr = policy_forward(policy, t->input, t->a);
    const std::size_t n = tr.steps;
    if (t->old_probs.size() != n * v) throw ShapeError("policy_loss: stored distributions do not match a");
    const double lp = std::accumulate(tr.token_log_probs.begin(), tr.token_log_probs.end(), 0.0);
    const double diff = lp - t->old_seq_log_prob;
    const double r = ratio(lp, t->old_seq_log_prob);
    const double adv = advantage(*t, mode);
    const double rc = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double surr = clip_surrogate(r, adv, cfg.clip_eps);
    const double ent = entropy_term(tr.probs, v);
    const double kl = kl_penalty(tr.probs, t->old_probs, v);
    out.surrogate += surr * inv_b;
    out.entropy += ent * inv_b;
    out.kl += kl * inv_b;
    out.clip_fraction += (r != rc ? 1.0 : 0.0) * inv_b;
    out.loss += (surr + ent_w * ent + cfg.kl_coef * kl) * inv_b;
    if (grad == nullptr) continue;

    // The unclipped branch carries the gradient only when it is the minimum.
    const bool flows = r * adv <= rc * adv && std::abs(diff) < kLogRatioClamp;
    const double dlp = flows ? -adv * r * inv_b : 0.0;
    const double ent_scale = ent_w * inv_b / static_cast<double>(n * v);
    const double kl_scale = cfg.kl_coef * inv_b / static_cast<double>(n);
    dlogits.assign(n * v, 0.0);
    logq.resize(v);
    for (std::size_t k = 0; k < n; ++k) {
      const double* pk = tr.probs.data() + k * v;
      const double* qk = t->old_probs.data() + k * v;
      double* dk = dlogits.data() + k * v;
      double sum_plogp = 0.0, kl_k = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        sum_plogp += plogp(pk[j]);
        logq[j] = std::log(std::max(qk[j], kProbFloor));
        if (pk[j] > 0.0) kl_k += pk[j] * (std::log(pk[j]) - logq[j]);
      }
      for (std::size_t j = 0; j < v; ++j) {
        const double p = pk[j];
        const double logp = p > 0.0 ? std::log(p) : 0.0;
        double d = -dlp * p;
        if (p > 0.0) {
          d += ent_scale * p * (logp - sum_plogp);
          d += kl_scale * p * (logp - logq[j] - kl_k);
        }
        dk[j] = d;
      }
      dk[static_cast<std::size_t>(t->a[k])] += dlp;
    }
    policy_backward(policy, t->input, t->a, tr, dlogits, *grad);
  }
  if (!std::isfinite(out.loss)) throw DivergenceError("policy loss", 0);
  return out;
}

double value_loss(const Critic& critic, std::span<const Trajectory* const> batch, ParamSet* grad) {
  if (batch.empty()) return 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Trajectory* t : batch) {
    const double e = critic_value(critic, t->prompt_tokens, t->a) - t->reward;
    if (grad != nullptr) critic_backward(critic, t->prompt_tokens, t->a, 2.0 * e * inv_b, *grad);
    loss += e * e * inv_b;
  }
  return loss;
}

UpdateStats ppo_update(Policy& policy, Critic& critic, RolloutBuffer& buffer, const PPOConfig& cfg,
                       AdamW& actor_opt, AdamW& critic_opt, Rng& rng) {
  UpdateStats stats;
  if (buffer.items.empty()) return stats;
  const ParamSet theta_old = policy.params();
  const ParamSet phi_old = critic.params();
  std::vector<const Trajectory*> order;
  order.reserve(buffer.items.size());
  for (const auto& t : buffer.items) order.push_back(&t);
  const auto b = static_cast<std::size_t>(cfg.minibatch);
  ParamSet g_actor = policy.params().zeros_like();
  ParamSet g_critic = critic.params().zeros_like();

  try {
    for (int epoch = 0; epoch < cfg.surrogate_epochs; ++epoch) {
      rng.shuffle(std::span<const Trajectory*>(order));
      for (std::size_t start = 0; start < order.size(); start += b) {
        const auto mb = std::span<const Trajectory* const>(order).subspan(start, std::min(b, order.size() - start));
        g_actor.fill(0.0);
        const auto parts = policy_loss(policy, mb, cfg, &g_actor);
        if (!g_actor.all_finite()) throw DivergenceError("policy gradient", stats.steps);
        actor_opt.step(policy.params(), g_actor);
        double vl = 0.0;
        if (!cfg.actor_only) {
          g_critic.fill(0.0);
          vl = value_loss(critic, mb, &g_critic);
          if (!std::isfinite(vl) || !g_critic.all_finite()) throw DivergenceError("value loss", stats.steps);
          critic_opt.step(critic.params(), g_critic);
        } else {
          vl = value_loss(critic, mb, nullptr);
        }
        stats.policy_loss += parts.loss;
        stats.value_loss += vl;
        stats.kl += parts.kl;
        stats.clip_fraction += parts.clip_fraction;
        ++stats.steps;
      }
    }
    if (!policy.params().all_finite()) throw DivergenceError("policy parameters", stats.steps);
  } catch (const DivergenceError&) {
    policy.params() = theta_old;
    critic.params() = phi_old;
    buffer.items.clear();
    throw;
  }
  const double inv = 1.0 / static_cast<double>(stats.steps);
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.kl *= inv;
  stats.clip_fraction *= inv;
  buffer.items.clear();
  return stats;
}

std::string RlMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["iter"] = iter;
  j["policy_loss"] = policy_loss;
  j["value_loss"] = value_loss;
  j["val_reward"] = val_reward;
  j["val_error"] = val_error;
  j["val_relevance"] = val_relevance;
  j["skipped"] = skipped;
  return j.dump();
}

ValidationResult validate_policy(const Policy& policy, const RewardModel& reward,
                                 const PromptExtractor& extractor, std::span<const CorpusExample> val,
                                 std::uint64_t seed, int max_len) {
  ValidationResult out;
  if (val.empty()) return out;
  const Vocab& vocab = Vocab::standard();
  std::size_t used = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto parsed = try_extract(extractor, val[i].utterance.text);
    if (!parsed) continue;
    const StandardControlPrompt& p = *parsed;
    const auto s = sample_sequence(policy, make_policy_input(vocab, p, val[i].doc), derive_seed(seed, i), max_len);
    out.reward += reward.score(p, s.length).normalized;
    out.error += control_error(p, s.length);
    out.relevance += relevance_proxy(val[i].ref, s.tokens);
    ++used;
  }
  if (used > 0) {
    out.reward /= static_cast<double>(used);
    out.error /= static_cast<double>(used);
    out.relevance /= static_cast<double>(used);
  }
  return out;
}

RlResult train_rl(Policy policy, Critic critic, const PPOConfig& cfg, std::span<const CorpusExample> train,
                  std::span<const CorpusExample> val, const RewardModel& reward,
                  const PromptExtractor& extractor, const std::function<void(const RlMetrics&)>& on_metrics) {
  cfg.validate();
  AdamW actor_opt(policy.params(), {.lr = cfg.actor_lr, .eps = cfg.adam_eps});
  AdamW critic_opt(critic.params(), {.lr = cfg.critic_lr, .eps = cfg.adam_eps});
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  const std::uint64_t val_seed = derive_seed(cfg.seed, 2);
  const std::uint64_t rollout_seed = derive_seed(cfg.seed, 3);
  PPOConfig rollout_cfg = cfg;
  rollout_cfg.seed = rollout_seed;

  RlResult res{policy, critic, {}};
  auto record = [&](RlMetrics m) {
    const auto v = validate_policy(res.policy, reward, extractor, val, val_seed, cfg.max_len);
    m.val_reward = v.reward;
    m.val_error = v.error;
    m.val_relevance = v.relevance;
    if (on_metrics) on_metrics(m);
    res.checkpoints.push_back({m, res.policy.params(), res.critic.params()});
  };
  record(RlMetrics{});

  std::size_t cursor = 0;
  std::uint64_t counter = 0;
  for (int it = 1; it <= cfg.iterations; ++it) {
    auto buf = collect_rollouts(res.policy, res.critic, reward, extractor, train, cursor, counter, rollout_cfg);
    RlMetrics m;
    m.iter = it;
    m.skipped = buf.skipped;
    const auto st = ppo_update(res.policy, res.critic, buf, cfg, actor_opt, critic_opt, shuffle_rng);
    m.policy_loss = st.policy_loss;
    m.value_loss = st.value_loss;
    record(m);
  }
  return res;
}

}  // namespace lenctl
