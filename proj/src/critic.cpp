// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "lenctl/error.hpp"
#include "lenctl/toy_lm.hpp"

namespace lenctl {

namespace {

struct CriticFeatures {
  std::vector<double> f;    // 2 * embed
  std::vector<double> act;  // hidden
  std::size_t prompt_used = 0;
  std::size_t gen_count = 0;
  double value = 0.0;
};

CriticFeatures critic_forward(const Critic& c, std::span<const int> s_prime, std::span<const int> a) {
  const auto& cfg = c.config();
  const auto d = static_cast<std::size_t>(cfg.embed);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  const ParamSet& p = c.params();
  CriticFeatures out;
  out.f.assign(2 * d, 0.0);
  out.prompt_used = std::min(s_prime.size(), static_cast<std::size_t>(cfg.positions));
  for (std::size_t i = 0; i < out.prompt_used; ++i) {
    const int t = s_prime[i];
    if (t < 0 || t >= cfg.vocab_size) throw InvalidTokenError("critic: prompt token outside vocabulary");
    for (std::size_t j = 0; j < d; ++j) out.f[j] += p[Critic::kEmb](static_cast<std::size_t>(t), j) * p[Critic::kPos](i, j);
  }
  for (int t : a) {
    if (t < 0 || t >= cfg.vocab_size) throw InvalidTokenError("critic: generated token outside vocabulary");
    if (t == Vocab::kEos) continue;
    ++out.gen_count;
    for (std::size_t j = 0; j < d; ++j) out.f[d + j] += p[Critic::kEmb](static_cast<std::size_t>(t), j);
  }
  if (out.gen_count > 0) {
    for (std::size_t j = 0; j < d; ++j) out.f[d + j] /= static_cast<double>(out.gen_count);
  }
  out.act.assign(h, 0.0);
  out.value = p[Critic::kB2][0];
  for (std::size_t k = 0; k < h; ++k) {
    double z = p[Critic::kB1][k];
    for (std::size_t j = 0; j < 2 * d; ++j) z += p[Critic::kW1](k, j) * out.f[j];
    out.act[k] = std::tanh(z);
    out.value += p[Critic::kW2][k] * out.act[k];
  }
  return out;
}

}  // namespace

Critic::Critic(CriticConfig cfg) : cfg_(cfg) {
  if (cfg.vocab_size < 4 || cfg.embed < 1 || cfg.hidden < 1 || cfg.positions < 1) {
    throw ConfigError("critic: invalid dimensions");
  }
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.embed);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  params_.add("critic.emb", {v, d});
  params_.add("critic.pos", {static_cast<std::size_t>(cfg.positions), d});
  params_.add("critic.w1", {h, 2 * d});
  params_.add("critic.b1", {h});
  params_.add("critic.w2", {h});
  params_.add("critic.b2", {1});
}

Critic Critic::from_params(ParamSet params, CriticConfig cfg) {
  Critic c(cfg);
  if (!params.same_layout(c.params_)) throw FormatError("critic: parameter layout does not match config");
  c.params_ = std::move(params);
  return c;
}

void Critic::init_random(Rng& rng) {
  for (double& w : params_[kEmb].data) w = rng.normal(0.0, 1.0);
  for (double& w : params_[kPos].data) w = rng.normal(0.0, 1.0);
  const double sd = 1.0 / std::sqrt(2.0 * cfg_.embed);
  for (double& w : params_[kW1].data) w = rng.normal(0.0, sd);
  // Output layer starts at zero so the initial value estimate is exactly 0.
  params_[kB1].data.assign(params_[kB1].size(), 0.0);
  params_[kW2].data.assign(params_[kW2].size(), 0.0);
  params_[kB2][0] = 0.0;
}

double critic_value(const Critic& critic, std::span<const int> s_prime, std::span<const int> a) {
  return critic_forward(critic, s_prime, a).value;
}

double critic_backward(const Critic& critic, std::span<const int> s_prime, std::span<const int> a,
                       double dv, ParamSet& grad) {
  const auto fw = critic_forward(critic, s_prime, a);
  const auto& cfg = critic.config();
  const auto d = static_cast<std::size_t>(cfg.embed);
  const auto h = static_cast<std::size_t>(cfg.hidden);
  const ParamSet& p = critic.params();
  grad[Critic::kB2][0] += dv;
  std::vector<double> df(2 * d, 0.0);
  for (std::size_t k = 0; k < h; ++k) {
    grad[Critic::kW2][k] += dv * fw.act[k];
    const double dz = dv * p[Critic::kW2][k] * (1.0 - fw.act[k] * fw.act[k]);
    if (dz == 0.0) continue;
    grad[Critic::kB1][k] += dz;
    for (std::size_t j = 0; j < 2 * d; ++j) {
      grad[Critic::kW1](k, j) += dz * fw.f[j];
      df[j] += dz * p[Critic::kW1](k, j);
    }
  }
  for (std::size_t i = 0; i < fw.prompt_used; ++i) {
    const auto t = static_cast<std::size_t>(s_prime[i]);
    for (std::size_t j = 0; j < d; ++j) {
      grad[Critic::kEmb](t, j) += df[j] * p[Critic::kPos](i, j);
      grad[Critic::kPos](i, j) += df[j] * p[Critic::kEmb](t, j);
    }
  }
  if (fw.gen_count > 0) {
    const double inv = 1.0 / static_cast<double>(fw.gen_count);
    for (int t : a) {
      if (t == Vocab::kEos) continue;
      for (std::size_t j = 0; j < d; ++j) grad[Critic::kEmb](static_cast<std::size_t>(t), j) += df[d + j] * inv;
    }
  }
  return fw.value;
}

}  // namespace lenctl
