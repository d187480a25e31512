// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lenctl {

// Dense row-major float64 array.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool operator==(const Tensor&) const = default;
};

// Ordered collection of named tensors. Models address entries by position in
// hot loops and by name for persistence.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool operator==(const Entry&) const = default;
  };

  Tensor& add(std::string name, std::vector<std::size_t> shape);

  Tensor& operator[](std::size_t i) { return entries_[i].value; }
  const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const;
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  void fill(double v);
  bool all_finite() const;
  bool same_layout(const ParamSet& other) const;

  // this += alpha * other
  void axpy(double alpha, const ParamSet& other);
  double dot(const ParamSet& other) const;
  double norm() const { return std::sqrt(dot(*this)); }

  // Element i of the concatenation of all tensors, in entry order.
  double& flat(std::size_t i);

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<Entry> entries_;
};

// Central-difference gradient of `loss` at `params`, element by element.
template <class LossFn>
ParamSet numerical_gradient(ParamSet params, LossFn&& loss, double h = 1e-5) {
  ParamSet grad = params.zeros_like();
  const std::size_t n = params.total_size();
  for (std::size_t i = 0; i < n; ++i) {
    double& x = params.flat(i);
    const double saved = x;
    x = saved + h;
    const double up = loss(params);
    x = saved - h;
    const double down = loss(params);
    x = saved;
    grad.flat(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor): a scale-aware comparison for
// gradient checks that is insensitive to near-zero individual entries.
double max_relative_error(const ParamSet& a, const ParamSet& b, double floor = 1e-8);

}  // namespace lenctl
