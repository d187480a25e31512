// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#include "lenctl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lenctl/error.hpp"

namespace lenctl {

Tensor::Tensor(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        std::multiplies<>());
  data.assign(n, fill);
}

Tensor& ParamSet::add(std::string name, std::vector<std::size_t> shape) {
  if (contains(name)) throw ShapeError("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), Tensor(std::move(shape))});
  return entries_.back().value;
}

Tensor& ParamSet::get(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw ShapeError("unknown parameter: " + std::string(name));
}

const Tensor& ParamSet::get(std::string_view name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, e.value.shape);
  return out;
}

void ParamSet::fill(double v) {
  for (auto& e : entries_) std::fill(e.value.data.begin(), e.value.data.end(), v);
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_) {
    for (double x : e.value.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape != other.entries_[i].value.shape) {
      return false;
    }
  }
  return true;
}

void ParamSet::axpy(double alpha, const ParamSet& other) {
  if (!same_layout(other)) throw ShapeError("axpy: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].value.data;
    const auto& src = other.entries_[i].value.data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += alpha * src[j];
  }
}

double ParamSet::dot(const ParamSet& other) const {
  if (!same_layout(other)) throw ShapeError("dot: layout mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i].value.data;
    const auto& b = other.entries_[i].value.data;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  }
  return s;
}

double& ParamSet::flat(std::size_t i) {
  for (auto& e : entries_) {
    if (i < e.value.size()) return e.value.data[i];
    i -= e.value.size();
  }
  throw ShapeError("flat index out of range");
}

double max_relative_error(const ParamSet& a, const ParamSet& b, double floor) {
  if (!a.same_layout(b)) throw ShapeError("max_relative_error: layout mismatch");
  double max_diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < a.count(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      max_diff = std::max(max_diff, std::abs(a[i][j] - b[i][j]));
      scale = std::max(scale, std::abs(b[i][j]));
    }
  }
  return max_diff / scale;
}

}  // namespace lenctl
