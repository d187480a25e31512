// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/optim.hpp"

#include <cmath>

#include "lenctl/error.hpp"

namespace lenctl {

AdamW::AdamW(const ParamSet& layout, AdamWConfig cfg)
    : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void AdamW::step(ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) {
    throw ShapeError("AdamW::step: layout mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
    }
  }
}

SgdMomentum::SgdMomentum(const ParamSet& layout, double lr, double momentum)
    : lr_(lr), momentum_(momentum), velocity_(layout.zeros_like()) {}

void SgdMomentum::step(ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(velocity_) || !grads.same_layout(velocity_)) {
    throw ShapeError("SgdMomentum::step: layout mismatch");
  }
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& u = velocity_[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      u[j] = momentum_ * u[j] + g[j];
      p[j] -= lr_ * u[j];
    }
  }
}

}  // namespace lenctl
