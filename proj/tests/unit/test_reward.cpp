// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "lenctl/reward.hpp"
#include "oracles.hpp"

using namespace lenctl;

TEST_CASE("rule_reward hand cases") {
  CHECK(rule_reward(StandardControlPrompt::equal_to(100), 90).value == -10.0);
  CHECK(rule_reward(StandardControlPrompt::more_than(80), 100).value == 0.0);
  CHECK(rule_reward(StandardControlPrompt::between(50, 150), 40).value == -10.0);
  CHECK(rule_reward(StandardControlPrompt::less_than(60), 75).value == -15.0);
  CHECK(rule_reward(StandardControlPrompt::none(), 999).value == 0.0);
  CHECK(rule_reward(StandardControlPrompt::equal_to(100), 90, 256).normalized ==
        doctest::Approx(-10.0 / 256));
}

TEST_CASE("rule_reward equals the brute-force distance to the feasible set") {
  for (ControlKind kind : kAllKinds) {
    for (int a : {50, 100, 150}) {
      for (int b : {50, 100, 150}) {
        if (kind == ControlKind::Between && b < a) continue;
        if (kind != ControlKind::Between && b != a) continue;
        StandardControlPrompt p = kind == ControlKind::Between ? StandardControlPrompt::between(a, b)
                                                               : StandardControlPrompt::from_bounds(
                                                                     kind, std::vector<int>(kind_arity(kind), a));
        for (int lg = 0; lg <= 300; ++lg) {
          REQUIRE(rule_reward(p, lg).value == oracle::brute_force_reward(p, lg));
        }
      }
    }
  }
}

TEST_CASE("control_error is the negated reward") {
  CHECK(control_error(StandardControlPrompt::equal_to(100), 90) == 10.0);
  CHECK(control_error(StandardControlPrompt::none(), 17) == 0.0);
  double total = 0.0;
  const std::vector<int> lengths = {80, 95, 130};
  for (int l : lengths) total += control_error(StandardControlPrompt::between(90, 120), l);
  // |80-90| + 0 + |130-120| averaged.
  CHECK(total / lengths.size() == doctest::Approx(20.0 / 3.0));
}

TEST_CASE("rule_reward properties") {
  SUBCASE("translation consistency for equal_to") {
    for (int t = 1; t <= 60; ++t) {
      for (int g = 0; g <= 60; ++g) {
        for (int k = -std::min(t - 1, g); k <= 20; k += 3) {
          REQUIRE(rule_reward(StandardControlPrompt::equal_to(t), g).value ==
                  rule_reward(StandardControlPrompt::equal_to(t + k), g + k).value);
        }
      }
    }
  }
  SUBCASE("degenerate between equals equal_to") {
    for (int t = 50; t <= 150; t += 10) {
      for (int g = 0; g <= 300; ++g) {
        REQUIRE(rule_reward(StandardControlPrompt::between(t, t), g).value ==
                rule_reward(StandardControlPrompt::equal_to(t), g).value);
      }
    }
  }
  SUBCASE("zero exactly on the feasible set, slope in {-1,0,1}") {
    const std::vector<StandardControlPrompt> prompts = {
        StandardControlPrompt::more_than(70), StandardControlPrompt::less_than(120),
        StandardControlPrompt::equal_to(90), StandardControlPrompt::between(60, 140),
        StandardControlPrompt::none()};
    for (const auto& p : prompts) {
      int slope_changes = 0;
      double prev_slope = 0.0;
      for (int g = 0; g <= 300; ++g) {
        const double r = rule_reward(p, g).value;
        REQUIRE(r <= 0.0);
        REQUIRE((r == 0.0) == oracle::feasible(p, g));
        if (g > 0) {
          const double slope = r - rule_reward(p, g - 1).value;
          REQUIRE((slope == -1.0 || slope == 0.0 || slope == 1.0));
          if (g > 1 && slope != prev_slope) ++slope_changes;
          prev_slope = slope;
        }
      }
      CHECK(slope_changes <= 2);
    }
  }
}

TEST_CASE("reward dataset simulation and JSONL round trip") {
  const auto rows = simulate_reward_dataset(5, 400);
  for (const auto& r : rows) {
    REQUIRE(r.length >= kMinTargetLength);
    REQUIRE(r.length <= kMaxTargetLength);
    REQUIRE(r.reward_norm == rule_reward(r.prompt, r.length).normalized);
  }
  const auto path = std::filesystem::temp_directory_path() / "lenctl_reward_rows.jsonl";
  write_reward_dataset(path, rows);
  const auto back = read_reward_dataset(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(back[i].prompt == rows[i].prompt);
    REQUIRE(back[i].length == rows[i].length);
    REQUIRE(back[i].reward_norm == rows[i].reward_norm);
  }
  std::filesystem::remove(path);
}

TEST_CASE("reward regressor") {
  SUBCASE("zero params predict zero and fit all-zero labels exactly") {
    RewardRegressor zero(8);
    CHECK(predict_reward(zero, StandardControlPrompt::equal_to(80), 100).value == 0.0);
    auto rows = simulate_reward_dataset(1, 50);
    for (auto& r : rows) r.reward_norm = 0.0;
    CHECK(zero.loss(rows, nullptr) == 0.0);
  }
  SUBCASE("analytic gradient matches central differences") {
    RewardRegressor model(6);
    Rng rng(2);
    for (auto& e : model.params().entries()) {
      for (double& w : e.value.data) w = rng.normal(0.0, 0.7);
    }
    const auto rows = simulate_reward_dataset(3, 20);
    ParamSet grad = model.params().zeros_like();
    model.loss(rows, &grad);
    const auto numeric = numerical_gradient(model.params(), [&](const ParamSet& p) {
      return RewardRegressor::from_params(p, kDefaultMaxLength).loss(rows, nullptr);
    });
    CHECK(max_relative_error(grad, numeric) <= 1e-4);
  }
  SUBCASE("short training run fits the piecewise target") {
    const auto train = simulate_reward_dataset(10, 20000);
    const auto val = simulate_reward_dataset(11, 2000);
    RegressorConfig cfg;
    cfg.epochs = 8;
    const auto result = train_reward_regressor(train, val, cfg);
    CHECK(result.best_val_mse < 2e-3);
    // Satisfied constraint predicts near zero.
    CHECK(std::abs(predict_reward(result.model, StandardControlPrompt::between(60, 140), 100).normalized) <=
          0.02);

    // Top-1 agreement with the rule over random sets of 8 candidate lengths.
    // Ties under the rule count as agreement when the pick is one of the best.
    Rng rng(12);
    int agree = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
      const auto p = sample_control_prompt(rng, kAllKinds);
      int pick = -1;
      double pick_score = -1e300;
      double best_rule = -1e300;
      std::vector<int> lens(8);
      for (int& l : lens) {
        l = static_cast<int>(rng.uniform_int(kMinTargetLength, kMaxTargetLength));
        best_rule = std::max(best_rule, oracle::brute_force_reward(p, l));
      }
      for (int i = 0; i < 8; ++i) {
        const double s = result.model.forward(p, lens[i]);
        if (s > pick_score) pick_score = s, pick = i;
      }
      if (oracle::brute_force_reward(p, lens[pick]) == best_rule) ++agree;
    }
    MESSAGE("val mse " << result.best_val_mse << ", top-1 agreement " << agree / double(trials));
    CHECK(agree >= 0.9 * trials);
  }
}
