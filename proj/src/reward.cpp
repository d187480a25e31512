// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "lenctl/error.hpp"
#include "lenctl/io.hpp"
#include "lenctl/optim.hpp"
#include "lenctl/rng.hpp"

namespace lenctl {

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

RewardScore rule_reward(const StandardControlPrompt& p, int generated_length, int max_length) {
  const double lg = generated_length;
  double v = 0.0;
  switch (p.kind) {
    case ControlKind::MoreThan: v = -relu(*p.l_min - lg); break;
    case ControlKind::LessThan: v = -relu(lg - *p.l_max); break;
    case ControlKind::EqualTo: v = -std::abs(*p.l_min - lg); break;
    case ControlKind::Between: v = -(relu(*p.l_min - lg) + relu(lg - *p.l_max)); break;
    case ControlKind::None: v = 0.0; break;
  }
  // Avoid -0.0 so serialized values compare cleanly.
  if (v == 0.0) v = 0.0;
  return {v, v / max_length};
}

double control_error(const StandardControlPrompt& p, int generated_length) {
  return -rule_reward(p, generated_length).value;
}

std::vector<RewardExample> simulate_reward_dataset(std::uint64_t seed, std::size_t n,
                                                   int max_length,
                                                   std::span<const ControlKind> kinds) {
  Rng rng(seed);
  std::vector<RewardExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RewardExample ex;
    ex.prompt = sample_control_prompt(rng, kinds);
    ex.length = static_cast<int>(rng.uniform_int(kMinTargetLength, kMaxTargetLength));
    ex.reward_norm = rule_reward(ex.prompt, ex.length, max_length).normalized;
    out.push_back(ex);
  }
  return out;
}

void write_reward_dataset(const std::filesystem::path& path, std::span<const RewardExample> rows) {
  std::string text;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(r.prompt.kind);
    j["l_min"] = r.prompt.l_min ? nlohmann::ordered_json(*r.prompt.l_min) : nlohmann::ordered_json();
    j["l_max"] = r.prompt.l_max ? nlohmann::ordered_json(*r.prompt.l_max) : nlohmann::ordered_json();
    j["len"] = r.length;
    j["reward_norm"] = r.reward_norm;
    text += j.dump();
    text += '\n';
  }
  atomic_write(path, text);
}

std::vector<RewardExample> read_reward_dataset(const std::filesystem::path& path) {
  std::vector<RewardExample> out;
  for (const auto& line : read_lines(path)) {
    const auto j = nlohmann::json::parse(line);
    RewardExample r;
    r.prompt.kind = kind_from_name(j.at("kind").get<std::string>());
    if (!j.at("l_min").is_null()) r.prompt.l_min = j.at("l_min").get<int>();
    if (!j.at("l_max").is_null()) r.prompt.l_max = j.at("l_max").get<int>();
    r.prompt.validate();
    r.length = j.at("len").get<int>();
    r.reward_norm = j.at("reward_norm").get<double>();
    out.push_back(r);
  }
  return out;
}

RewardRegressor::RewardRegressor(int hidden, int max_length) : max_length_(max_length) {
  const auto h = static_cast<std::size_t>(hidden);
  params_.add("reward.w1", {h, kInputs});
  params_.add("reward.b1", {h});
  params_.add("reward.w2", {h});
  params_.add("reward.b2", {1});
}

RewardRegressor RewardRegressor::from_params(ParamSet params, int max_length) {
  RewardRegressor r(static_cast<int>(params.get("reward.b1").size()), max_length);
  if (!params.same_layout(r.params_)) throw FormatError("reward regressor: unexpected layout");
  r.params_ = std::move(params);
  return r;
}

std::array<double, RewardRegressor::kInputs> RewardRegressor::features(
    const StandardControlPrompt& p, int length, int max_length) {
  std::array<double, kInputs> x{};
  x[static_cast<std::size_t>(p.kind)] = 1.0;
  const double scale = 1.0 / max_length;
  x[5] = p.l_min ? *p.l_min * scale : 0.0;
  x[6] = p.l_max ? *p.l_max * scale : 0.0;
  x[7] = length * scale;
  return x;
}

double RewardRegressor::forward(const StandardControlPrompt& p, int length) const {
  const auto x = features(p, length, max_length_);
  const auto& w1 = params_[kW1];
  const auto& b1 = params_[kB1];
  const auto& w2 = params_[kW2];
  double y = params_[kB2][0];
  for (std::size_t j = 0; j < b1.size(); ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < kInputs; ++i) a += w1(j, i) * x[i];
    y += w2[j] * std::tanh(a);
  }
  return y;
}

double RewardRegressor::loss(std::span<const RewardExample> batch, ParamSet* grad) const {
  if (batch.empty()) return 0.0;
  const auto& w1 = params_[kW1];
  const auto& b1 = params_[kB1];
  const auto& w2 = params_[kW2];
  const std::size_t h = b1.size();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> act(h);
  double total = 0.0;
  for (const auto& ex : batch) {
    const auto x = features(ex.prompt, ex.length, max_length_);
    double y = params_[kB2][0];
    for (std::size_t j = 0; j < h; ++j) {
      double a = b1[j];
      for (std::size_t i = 0; i < kInputs; ++i) a += w1(j, i) * x[i];
      act[j] = std::tanh(a);
      y += w2[j] * act[j];
    }
    const double diff = y - ex.reward_norm;
    total += diff * diff;
    if (grad) {
      const double dy = 2.0 * diff * inv_n;
      (*grad)[kB2][0] += dy;
      for (std::size_t j = 0; j < h; ++j) {
        (*grad)[kW2][j] += dy * act[j];
        const double da = dy * w2[j] * (1.0 - act[j] * act[j]);
        (*grad)[kB1][j] += da;
        for (std::size_t i = 0; i < kInputs; ++i) (*grad)[kW1](j, i) += da * x[i];
      }
    }
  }
  return total * inv_n;
}

RewardScore predict_reward(const RewardRegressor& model, const StandardControlPrompt& p,
                           int generated_length) {
  const double y = std::min(0.0, model.forward(p, generated_length));
  const double norm = y == 0.0 ? 0.0 : y;
  return {norm * model.max_length(), norm};
}

RegressorTrainResult train_reward_regressor(std::span<const RewardExample> train,
                                            std::span<const RewardExample> val,
                                            const RegressorConfig& cfg) {
  if (train.empty()) throw ConfigError("train_reward_regressor: empty training set");
  RewardRegressor model(cfg.hidden, cfg.max_length);
  Rng rng(cfg.seed);
  // Xavier-style init for the hidden layer; the output starts at zero.
  const double scale = std::sqrt(1.0 / RewardRegressor::kInputs);
  for (double& w : model.params()[RewardRegressor::kW1].data) w = rng.normal(0.0, 1.0) * scale * 2.0;
  for (double& b : model.params()[RewardRegressor::kB1].data) b = rng.normal(0.0, 0.5);

  AdamW opt(model.params(), {.lr = cfg.lr});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<RewardExample> batch;
  ParamSet grad = model.params().zeros_like();

  const auto eval = val.empty() ? train : val;
  RegressorTrainResult best{model, model.loss(eval, nullptr), 0};
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    // Step decay over the last half of training.
    const double frac = static_cast<double>(epoch - 1) / cfg.epochs;
    opt.set_lr(cfg.lr * (frac < 0.5 ? 1.0 : frac < 0.75 ? 0.3 : 0.1));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
      grad.fill(0.0);
      const double l = model.loss(batch, &grad);
      ++step;
      if (!std::isfinite(l)) throw DivergenceError("reward regressor", step);
      opt.step(model.params(), grad);
    }
    const double v = model.loss(eval, nullptr);
    if (v < best.best_val_mse) best = {model, v, epoch};
  }
  return best;
}

}  // namespace lenctl
