// Copyright 2026 The SAGE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sage/common.hpp"

namespace sage {

// Dense row-major tensor of 64-bit reals. No views, no strides; the only
// broadcast the op layer supports is a trailing-shape operand against
// leading batch dims.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (v.size() != numel_of(shape)) {
      throw StructuralError("tensor values do not match shape " + shape_str());
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor scalar(double x) { return Tensor({1}, {x}); }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  // Size of the last axis.
  std::size_t last() const { return shape.empty() ? 1 : shape.back(); }
  // Product of all axes except the last.
  std::size_t rows() const { return last() == 0 ? 0 : numel() / last(); }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& at(std::size_t r, std::size_t c) { return v[r * last() + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * last() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
  }
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const std::vector<double>& a) {
  return std::sqrt(dot(a, a));
}

}  // namespace sage
