// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "lenctl/tensor.hpp"

namespace lenctl {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ParamSet& layout, AdamWConfig cfg);

  void step(ParamSet& params, const ParamSet& grads);
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::int64_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  ParamSet m_;
  ParamSet v_;
  std::int64_t t_ = 0;
};

// Heavy-ball gradient descent.
class SgdMomentum {
 public:
  SgdMomentum(const ParamSet& layout, double lr, double momentum);

  void step(ParamSet& params, const ParamSet& grads);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  ParamSet velocity_;
};

}  // namespace lenctl
