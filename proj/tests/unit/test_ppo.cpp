// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lenctl/error.hpp"
#include "lenctl/ppo.hpp"
#include "oracles.hpp"

using namespace lenctl;

namespace {

constexpr PolicyConfig kSmall{.vocab_size = 12, .embed = 5, .hidden = 7, .max_len = 16};
constexpr CriticConfig kSmallCritic{.vocab_size = 12, .embed = 4, .hidden = 5, .positions = 4};

Policy random_policy(PolicyConfig cfg, std::uint64_t seed, double sd = 0.5) {
  Policy p(cfg);
  Rng rng(seed);
  p.init_random(rng);
  for (auto& e : p.params().entries()) {
    for (double& w : e.value.data) w += rng.normal(0.0, sd);
  }
  return p;
}

Critic random_critic(CriticConfig cfg, std::uint64_t seed) {
  Critic c(cfg);
  Rng rng(seed);
  for (auto& e : c.params().entries()) {
    for (double& w : e.value.data) w = rng.normal(0.0, 0.5);
  }
  return c;
}

PolicyInput small_input(int variant) {
  return {{4, 5 + variant % 3, 6, Vocab::kSep}, {7, 8, 9, 10, 11, 7 + variant % 4}};
}

// A trajectory sampled from `old` with a hand-set reward and value.
Trajectory sampled(const Policy& old, int variant, double reward, double value, int max_len = 8) {
  Trajectory t;
  t.input = small_input(variant);
  t.prompt_tokens.assign(t.input.prompt.begin(), t.input.prompt.end() - 1);
  const auto s = sample_sequence(old, t.input, 100 + static_cast<std::uint64_t>(variant), max_len, true);
  t.a = s.tokens;
  t.length = s.length;
  t.old_log_probs = s.step_log_probs;
  t.old_probs = s.step_probs;
  t.old_seq_log_prob = std::accumulate(s.step_log_probs.begin(), s.step_log_probs.end(), 0.0);
  t.reward = reward;
  t.old_value = value;
  return t;
}

std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& ts) {
  std::vector<const Trajectory*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

std::vector<Trajectory> small_buffer(const Policy& old, int n) {
  std::vector<Trajectory> ts;
  Rng rng(21);
  for (int i = 0; i < n; ++i) ts.push_back(sampled(old, i, -rng.uniform() * 0.3, -rng.uniform() * 0.2));
  return ts;
}

std::vector<CorpusExample> eq_corpus(std::uint64_t seed, std::size_t n) {
  const ControlKind eq[] = {ControlKind::EqualTo};
  return synth_corpus(seed, n, eq);
}

PPOConfig fast_cfg() {
  PPOConfig cfg;
  cfg.update_timestep = 24;
  cfg.minibatch = 8;
  cfg.surrogate_epochs = 2;
  cfg.iterations = 2;
  cfg.max_len = 40;
  cfg.seed = 77;
  cfg.actor_lr = 1e-3;
  cfg.critic_lr = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("clipped surrogate") {
  CHECK(clip_surrogate(1.5, 2.0, 0.2) == -2.4);
  CHECK(clip_surrogate(0.5, -1.0, 0.2) == 0.8);
  for (double adv : {-3.0, -0.1, 0.0, 0.7, 5.0}) {
    for (double eps : {0.1, 0.2, 0.5}) CHECK(clip_surrogate(1.0, adv, eps) == -adv);
  }
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double r = std::exp(rng.normal(0.0, 1.0));
    const double adv = rng.normal(0.0, 2.0);
    const double eps = 0.05 + 0.9 * rng.uniform();
    const double s = clip_surrogate(r, adv, eps);
    REQUIRE(-s <= r * adv);
    if (adv > 0) REQUIRE(s >= -std::max(r, 1.0 + eps) * adv);
  }
}

TEST_CASE("advantage") {
  Trajectory t;
  t.reward = -10.0;
  t.old_value = -12.0;
  CHECK(advantage(t, AdvantageMode::ActorCritic) == 2.0);
  CHECK(advantage(t, AdvantageMode::ActorOnly) == -10.0);

  // Under a critic that predicts the buffer mean the advantages average to 0.
  std::vector<Trajectory> ts(500);
  Rng rng(2);
  for (auto& x : ts) x.reward = -rng.uniform() * 0.5;
  const double mean =
      std::accumulate(ts.begin(), ts.end(), 0.0, [](double s, const Trajectory& x) { return s + x.reward; }) / 500;
  double adv_sum = 0.0;
  for (auto& x : ts) {
    x.old_value = mean;
    adv_sum += advantage(x, AdvantageMode::ActorCritic);
  }
  CHECK(std::abs(adv_sum / 500) <= 1e-12);
}

TEST_CASE("entropy term") {
  const std::vector<double> uniform(4, 0.25);
  CHECK(entropy_term(uniform, 4) == doctest::Approx(-std::log(4.0) / 4).epsilon(1e-15));
  CHECK(entropy_term(std::vector<double>{0, 0, 1, 0, 1, 0, 0, 0}, 4) == 0.0);
  CHECK_THROWS_AS(entropy_term(std::vector<double>(5, 0.2), 4), ShapeError);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(3 * 6);
    for (int k = 0; k < 3; ++k) {
      double z = 0;
      for (int j = 0; j < 6; ++j) z += p[k * 6 + j] = std::exp(2 * rng.normal());
      for (int j = 0; j < 6; ++j) p[k * 6 + j] /= z;
    }
    const double s = entropy_term(p, 6);
    REQUIRE(s <= 0.0);
    REQUIRE(s >= -std::log(6.0) / 6 - 1e-15);
  }
}

TEST_CASE("KL penalty") {
  Rng rng(4);
  auto draw = [&] {
    std::vector<double> p(4);
    double z = 0;
    for (double& x : p) z += x = std::exp(rng.normal());
    for (double& x : p) x /= z;
    return p;
  };
  for (int i = 0; i < 500; ++i) {
    const auto p = draw();
    const auto q = draw();
    REQUIRE(kl_penalty(p, p, 4) == 0.0);
    const double kl = kl_penalty(p, q, 4);
    REQUIRE(kl >= 0.0);
    REQUIRE(std::abs(kl - oracle::kl_direct(p, q)) <= 1e-10);
  }
  // Mean over steps.
  const auto p1 = draw(), q1 = draw(), p2 = draw(), q2 = draw();
  std::vector<double> p(p1), q(q1);
  p.insert(p.end(), p2.begin(), p2.end());
  q.insert(q.end(), q2.begin(), q2.end());
  CHECK(kl_penalty(p, q, 4) == doctest::Approx((oracle::kl_direct(p1, q1) + oracle::kl_direct(p2, q2)) / 2));
  CHECK_THROWS_AS(kl_penalty(p1, p, 4), ShapeError);
}

TEST_CASE("probability ratio") {
  const Policy old = random_policy(kSmall, 5);
  for (int i = 0; i < 20; ++i) {
    const auto t = sampled(old, i, 0, 0);
    REQUIRE(ratio(old, t) == 1.0);
    REQUIRE(kl_penalty(policy_forward(old, t.input, t.a).probs, t.old_probs, 12) == 0.0);
  }

  {  // doubling one step's probability
    auto t = sampled(old, 1, 0, 0);
    REQUIRE(t.a.size() >= 2);
    t.old_seq_log_prob -= std::log(2.0);
    CHECK(ratio(old, t) == doctest::Approx(2.0).epsilon(1e-12));
  }

  {  // against the direct quotient on short sequences
    const Policy moved = random_policy(kSmall, 5, 0.5);
    Policy now = old;
    now.params().axpy(0.1, moved.params());
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      const auto t = sampled(old, i, 0, 0, 5);
      REQUIRE(t.a.size() <= 5);
      double num = 1.0, den = 1.0;
      std::vector<int> prefix;
      for (std::size_t k = 0; k < t.a.size(); ++k) {
        num *= step_distribution(now, t.input, prefix)[static_cast<std::size_t>(t.a[k])];
        den *= t.old_probs[k * 12 + static_cast<std::size_t>(t.a[k])];
        prefix.push_back(t.a[k]);
      }
      REQUIRE(std::abs(ratio(now, t) - num / den) <= 1e-10 * (num / den));
    }
  }
  CHECK(ratio(100.0, 0.0) == std::exp(20.0));
  CHECK(ratio(-100.0, 0.0) == std::exp(-20.0));
}

TEST_CASE("policy loss") {
  const Policy old = random_policy(kSmall, 7);
  const auto ts = small_buffer(old, 6);
  const auto batch = pointers(ts);
  CHECK(old.params().total_size() <= 5000);

  SUBCASE("at the rollout policy without extra terms the loss is minus the mean advantage") {
    PPOConfig cfg;
    cfg.entropy_coef = 0.0;
    cfg.kl_coef = 0.0;
    double mean_adv = 0.0;
    for (const auto& t : ts) mean_adv += (t.reward - t.old_value) / ts.size();
    CHECK(policy_loss(old, batch, cfg, nullptr).loss == doctest::Approx(-mean_adv).epsilon(1e-14));
  }

  SUBCASE("gradient matches central differences") {
    Policy now = old;
    now.params().axpy(0.1, random_policy(kSmall, 8, 0.5).params());
    for (bool literal : {false, true}) {
      PPOConfig cfg;
      cfg.entropy_coef = 0.3;
      cfg.kl_coef = 0.2;
      cfg.entropy_sign = literal;
      ParamSet grad = now.params().zeros_like();
      policy_loss(now, batch, cfg, &grad);
      const auto numeric = numerical_gradient(now.params(), [&](const ParamSet& p) {
        return policy_loss(Policy::from_params(p, kSmall), batch, cfg, nullptr).loss;
      });
      CHECK(max_relative_error(grad, numeric) <= 1e-4);
    }
  }

  SUBCASE("first surrogate step is the plain policy gradient") {
    PPOConfig cfg;
    cfg.entropy_coef = 0.0;
    cfg.kl_coef = 0.0;
    ParamSet grad = old.params().zeros_like();
    policy_loss(old, batch, cfg, &grad);
    ParamSet pg = old.params().zeros_like();
    for (const auto& t : ts) {
      const auto dlp = numerical_gradient(old.params(), [&](const ParamSet& p) {
        return sequence_log_prob(Policy::from_params(p, kSmall), t.input, t.a);
      });
      pg.axpy(-(t.reward - t.old_value) / ts.size(), dlp);
    }
    CHECK(max_relative_error(grad, pg) <= 1e-6);
  }

  SUBCASE("non-finite loss is a divergence") {
    auto bad = ts;
    bad[0].reward = std::nan("");
    CHECK_THROWS_AS(policy_loss(old, pointers(bad), PPOConfig{}, nullptr), DivergenceError);
  }
}

TEST_CASE("value loss") {
  const Policy old = random_policy(kSmall, 9);
  auto ts = small_buffer(old, 5);
  Critic zero(kSmallCritic);
  for (auto& t : ts) t.reward = -10.0;
  CHECK(value_loss(zero, pointers(ts), nullptr) == 100.0);

  Critic constant(kSmallCritic);
  constant.params()[Critic::kB2][0] = -0.25;
  for (auto& t : ts) t.reward = -0.25;
  CHECK(value_loss(constant, pointers(ts), nullptr) == 0.0);

  const Critic c = random_critic(kSmallCritic, 10);
  ts = small_buffer(old, 5);
  ParamSet grad = c.params().zeros_like();
  value_loss(c, pointers(ts), &grad);
  const auto numeric = numerical_gradient(c.params(), [&](const ParamSet& p) {
    return value_loss(Critic::from_params(p, kSmallCritic), pointers(ts), nullptr);
  });
  CHECK(max_relative_error(grad, numeric) <= 1e-4);
}

TEST_CASE("collect_rollouts") {
  const auto corpus = eq_corpus(3, 30);
  const Policy policy = random_policy(PolicyConfig{}, 11, 0.0);
  const Critic critic = random_critic(CriticConfig{}, 12);
  const RuleRewardModel reward;
  const auto extractor = rule_extractor();
  PPOConfig cfg = fast_cfg();
  cfg.update_timestep = 40;

  std::size_t cursor = 0;
  std::uint64_t counter = 0;
  const auto buf = collect_rollouts(policy, critic, reward, extractor, corpus, cursor, counter, cfg);
  CHECK(buf.items.size() == 40);
  CHECK(buf.skipped == 0);
  CHECK(cursor == 10);
  CHECK(counter == 40);
  for (std::size_t i = 0; i < buf.items.size(); ++i) {
    const auto& t = buf.items[i];
    const auto& ex = corpus[i % corpus.size()];
    REQUIRE(t.prompt == ex.utterance.truth);
    REQUIRE(t.reward == rule_reward(t.prompt, t.length).normalized);
    REQUIRE(t.length == static_cast<int>(std::count_if(t.a.begin(), t.a.end(), [](int x) { return x != Vocab::kEos; })));
    REQUIRE(t.old_probs.size() == t.a.size() * 64);
    REQUIRE(ratio(policy, t) == 1.0);
    // The critic sees only the prompt and the generation.
    REQUIRE(t.old_value == critic_value(critic, t.prompt_tokens, t.a));
  }

  std::size_t c2 = 0;
  std::uint64_t n2 = 0;
  const auto again = collect_rollouts(policy, critic, reward, extractor, corpus, c2, n2, cfg);
  for (std::size_t i = 0; i < buf.items.size(); ++i) REQUIRE(again.items[i].a == buf.items[i].a);

  {  // unresolvable utterances are skipped and counted
    auto mixed = corpus;
    mixed[1].utterance.text = lex("Could you condense this into roughly 90 words");
    mixed[2].utterance.text = lex("I want more than 80 tokens and less than 120 tokens please");
    std::size_t c3 = 0;
    std::uint64_t n3 = 0;
    cfg.update_timestep = 5;
    const auto skipped = collect_rollouts(policy, critic, reward, extractor, mixed, c3, n3, cfg);
    CHECK(skipped.items.size() == 5);
    CHECK(skipped.skipped == 2);
    CHECK(c3 == 7);
  }
}

TEST_CASE("ppo_update") {
  const Policy old = random_policy(kSmall, 13);
  const Critic critic0 = random_critic(kSmallCritic, 14);
  auto make_buffer = [&](int n) {
    RolloutBuffer b;
    b.items = small_buffer(old, n);
    for (auto& t : b.items) t.old_value = critic_value(critic0, t.prompt_tokens, t.a);
    return b;
  };
  PPOConfig cfg;
  cfg.update_timestep = 40;
  cfg.minibatch = 16;

  SUBCASE("step count and buffer reset") {
    Policy p = old;
    Critic c = critic0;
    auto buf = make_buffer(40);
    AdamW ao(p.params(), {.lr = cfg.actor_lr}), co(c.params(), {.lr = cfg.critic_lr});
    Rng rng(1);
    const auto st = ppo_update(p, c, buf, cfg, ao, co, rng);
    CHECK(st.steps == 16 * 3);
    CHECK(ao.steps() == 48);
    CHECK(co.steps() == 48);
    CHECK(buf.items.empty());
    CHECK_FALSE(p.params() == old.params());
    CHECK_FALSE(c.params() == critic0.params());
  }

  SUBCASE("actor-only leaves the critic untouched") {
    cfg.actor_only = true;
    Policy p = old;
    Critic c = critic0;
    auto buf = make_buffer(40);
    AdamW ao(p.params(), {.lr = cfg.actor_lr}), co(c.params(), {.lr = cfg.critic_lr});
    Rng rng(1);
    ppo_update(p, c, buf, cfg, ao, co, rng);
    CHECK(c.params() == critic0.params());
    CHECK(co.steps() == 0);
    CHECK_FALSE(p.params() == old.params());
  }

  SUBCASE("constant reward with a converged critic is a near fixed point") {
    // Fit the critic to the constant reward first.
    auto buf = make_buffer(40);
    for (auto& t : buf.items) t.reward = -0.1;
    Critic c = critic0;
    AdamW fit(c.params(), {.lr = 1e-2});
    const auto all = pointers(buf.items);
    for (int i = 0; i < 2000; ++i) {
      ParamSet g = c.params().zeros_like();
      value_loss(c, all, &g);
      fit.step(c.params(), g);
    }
    REQUIRE(value_loss(c, all, nullptr) < 1e-6);
    for (auto& t : buf.items) t.old_value = critic_value(c, t.prompt_tokens, t.a);
    auto reference = buf;
    for (auto& t : reference.items) t.old_value = t.reward;  // zero advantage exactly

    auto run = [&](RolloutBuffer b) {
      Policy p = old;
      Critic cc = c;
      AdamW ao(p.params(), {.lr = cfg.actor_lr}), co(cc.params(), {.lr = cfg.critic_lr});
      Rng rng(2);
      ppo_update(p, cc, b, cfg, ao, co, rng);
      ParamSet d = p.params();
      d.axpy(-1.0, old.params());
      return d.norm();
    };
    const double moved = run(buf);
    const double regularizer_only = run(reference);
    MESSAGE("step " << moved << " vs entropy/KL-only " << regularizer_only);
    CHECK(moved <= 10.0 * regularizer_only);
  }

  SUBCASE("divergence restores the rollout parameters") {
    auto buf = make_buffer(40);
    buf.items[3].reward = std::nan("");
    Policy p = old;
    Critic c = critic0;
    AdamW ao(p.params(), {.lr = cfg.actor_lr}), co(c.params(), {.lr = cfg.critic_lr});
    Rng rng(4);
    CHECK_THROWS_AS(ppo_update(p, c, buf, cfg, ao, co, rng), DivergenceError);
    CHECK(p.params() == old.params());
    CHECK(c.params() == critic0.params());
  }
}

TEST_CASE("config validation") {
  PPOConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.clip_eps = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.minibatch = 600;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.actor_lr = -1e-4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("train_rl") {
  const auto corpus = eq_corpus(4, 80);
  const std::span<const CorpusExample> train(corpus.data(), 60), val(corpus.data() + 60, 20);
  const Policy policy = random_policy(PolicyConfig{}, 15, 0.0);
  Critic critic;
  Rng rng(16);
  critic.init_random(rng);
  const RuleRewardModel reward;

  SUBCASE("same seeds give the same metric stream") {
    std::vector<std::string> a, b;
    const auto r1 = train_rl(policy, critic, fast_cfg(), train, val, reward, rule_extractor(),
                             [&](const RlMetrics& m) { a.push_back(m.to_json()); });
    train_rl(policy, critic, fast_cfg(), train, val, reward, rule_extractor(),
             [&](const RlMetrics& m) { b.push_back(m.to_json()); });
    CHECK(a.size() == 3);
    CHECK(a == b);
    CHECK(r1.checkpoints.size() == 3);
    CHECK(r1.checkpoints[0].policy == policy.params());
    CHECK(r1.checkpoints.back().policy == r1.policy.params());
  }

  SUBCASE("no-op training keeps the validation metrics constant") {
    PPOConfig cfg = fast_cfg();
    cfg.actor_lr = 0.0;
    cfg.critic_lr = 0.0;
    cfg.entropy_coef = 0.0;
    cfg.kl_coef = 0.0;
    const auto r = train_rl(policy, critic, cfg, train, val, reward, rule_extractor());
    for (const auto& c : r.checkpoints) {
      CHECK(c.metrics.val_error == r.checkpoints[0].metrics.val_error);
      CHECK(c.metrics.val_reward == r.checkpoints[0].metrics.val_reward);
      CHECK(c.metrics.val_relevance == r.checkpoints[0].metrics.val_relevance);
    }
    CHECK(r.policy.params() == policy.params());
  }

  SUBCASE("zero iterations return the starting policy") {
    PPOConfig cfg = fast_cfg();
    cfg.iterations = 0;
    const auto r = train_rl(policy, critic, cfg, train, val, reward, rule_extractor());
    CHECK(r.checkpoints.size() == 1);
    CHECK(r.policy.params() == policy.params());
  }

  SUBCASE("metrics line") {
    RlMetrics m;
    m.iter = 3;
    m.val_error = 1.5;
    CHECK(m.to_json() ==
          R"({"iter":3,"policy_loss":0.0,"value_loss":0.0,"val_reward":0.0,"val_error":1.5,"val_relevance":0.0,"skipped":0})");
  }
}

TEST_CASE("a large KL weight pins the sequence log-probabilities") {
  // Gradient descent on the policy loss to its stationary point.
  const Policy old = random_policy(kSmall, 13);
  const auto ts = small_buffer(old, 40);
  const auto batch = pointers(ts);
  auto settle = [&](double beta) {
    PPOConfig cfg;
    cfg.kl_coef = beta;
    Policy p = old;
    for (int k = 0; k < 5000; ++k) {
      ParamSet g = p.params().zeros_like();
      policy_loss(p, batch, cfg, &g);
      p.params().axpy(-0.05 / beta, g);
    }
    double worst = 0.0;
    for (const auto& t : ts) worst = std::max(worst, std::abs(sequence_log_prob(p, t.input, t.a) - t.old_seq_log_prob));
    return worst;
  };
  const double d3 = settle(1e3);
  const double d4 = settle(1e4);
  MESSAGE("log-prob drift " << d3 << " at beta 1e3, " << d4 << " at beta 1e4");
  CHECK(d3 / d4 == doctest::Approx(10.0).epsilon(0.2));
  CHECK(d3 <= 1e-3);
}
