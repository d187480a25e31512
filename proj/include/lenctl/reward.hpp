// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "lenctl/control_grammar.hpp"
#include "lenctl/tensor.hpp"

namespace lenctl {

// Normalization constant for lengths and rewards in the toy setting.
inline constexpr int kDefaultMaxLength = 256;

struct RewardScore {
  double value = 0.0;       // token units, always <= 0
  double normalized = 0.0;  // value / max_length
};

// Piecewise-linear length reward: zero inside the feasible set of `p`, minus
// the distance to it outside.
RewardScore rule_reward(const StandardControlPrompt& p, int generated_length,
                        int max_length = kDefaultMaxLength);

// Distance from the generated length to the feasible set (= -reward).
double control_error(const StandardControlPrompt& p, int generated_length);

class RewardModel {
 public:
  virtual ~RewardModel() = default;
  virtual RewardScore score(const StandardControlPrompt& p, int generated_length) const = 0;
};

class RuleRewardModel final : public RewardModel {
 public:
  explicit RuleRewardModel(int max_length = kDefaultMaxLength) : max_length_(max_length) {}
  RewardScore score(const StandardControlPrompt& p, int generated_length) const override {
    return rule_reward(p, generated_length, max_length_);
  }

 private:
  int max_length_;
};

struct RewardExample {
  StandardControlPrompt prompt;
  int length = 0;
  double reward_norm = 0.0;
};

// Random prompt (uniform over `kinds`) and a random generated length in
// [50, 150], labelled with the rule reward.
std::vector<RewardExample> simulate_reward_dataset(std::uint64_t seed, std::size_t n,
                                                   int max_length = kDefaultMaxLength,
                                                   std::span<const ControlKind> kinds = kAllKinds);

// JSONL rows: {"kind":..., "l_min":..., "l_max":..., "len":..., "reward_norm":...}
void write_reward_dataset(const std::filesystem::path& path, std::span<const RewardExample> rows);
std::vector<RewardExample> read_reward_dataset(const std::filesystem::path& path);

struct RegressorConfig {
  int hidden = 32;
  int max_length = kDefaultMaxLength;
  double lr = 3e-3;
  int epochs = 40;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

// Two-layer tanh network over (one-hot kind, l_min, l_max, length), all
// divided by max_length, predicting the normalized reward.
class RewardRegressor {
 public:
  static constexpr std::size_t kInputs = 8;
  enum : std::size_t { kW1, kB1, kW2, kB2 };

  RewardRegressor(int hidden = 32, int max_length = kDefaultMaxLength);
  static RewardRegressor from_params(ParamSet params, int max_length);

  static std::array<double, kInputs> features(const StandardControlPrompt& p, int length,
                                              int max_length);

  // Unclamped network output.
  double forward(const StandardControlPrompt& p, int length) const;
  // Mean squared error over `batch`; accumulates d(loss)/d(params) into `grad`
  // when it is non-null.
  double loss(std::span<const RewardExample> batch, ParamSet* grad) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int max_length() const { return max_length_; }
  int hidden() const { return static_cast<int>(params_[kB1].size()); }

 private:
  ParamSet params_;
  int max_length_;
};

// Prediction clamped to <= 0, reported in both unit systems.
RewardScore predict_reward(const RewardRegressor& model, const StandardControlPrompt& p,
                           int generated_length);

struct RegressorTrainResult {
  RewardRegressor model;
  double best_val_mse = 0.0;
  int best_epoch = -1;
};

// Minibatch AdamW on MSE; keeps the parameters with the lowest validation MSE.
RegressorTrainResult train_reward_regressor(std::span<const RewardExample> train,
                                            std::span<const RewardExample> val,
                                            const RegressorConfig& cfg);

class RegressorRewardModel final : public RewardModel {
 public:
  explicit RegressorRewardModel(RewardRegressor model) : model_(std::move(model)) {}
  RewardScore score(const StandardControlPrompt& p, int generated_length) const override {
    return predict_reward(model_, p, generated_length);
  }

 private:
  RewardRegressor model_;
};

}  // namespace lenctl
