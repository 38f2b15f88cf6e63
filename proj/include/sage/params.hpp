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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sage/common.hpp"
#include "sage/rng.hpp"
#include "sage/tensor.hpp"

namespace sage {

// Named, shaped parameter tensors for one network. Names are unique and
// shapes are immutable after creation; insertion order is kept so that
// checkpoints and gradient reductions are deterministic.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, std::vector<std::size_t> shape) {
    if (entries_.count(name)) {
      throw StructuralError("parameter already exists: " + name);
    }
    order_.push_back(name);
    return entries_.emplace(name, Tensor(std::move(shape))).first->second;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw StructuralError("unknown parameter: " + name);
    }
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw StructuralError("unknown parameter: " + name);
    }
    return it->second;
  }

  // Overwrites values; the stored shape stays fixed.
  void assign(const std::string& name, const Tensor& t) {
    Tensor& dst = at(name);
    if (dst.shape != t.shape) {
      throw StructuralError("shape change rejected for parameter " + name +
                            ": " + dst.shape_str() + " vs " + t.shape_str());
    }
    dst.v = t.v;
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::uint64_t step_count = 0;

  // Deep copy (used for EMA teachers and frozen snapshots).
  ParameterStore clone() const { return *this; }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += entries_.at(name).numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> entries_;
};

// Deterministic parameter map used by optimisers and autodiff results.
using GradMap = std::map<std::string, Tensor>;

// --- initialisers -----------------------------------------------------------

inline void fill_normal(Tensor& t, RngStream rng, double stddev) {
  for (double& x : t.v) x = stddev * rng.normal();
}

// Scaled Gaussian, stddev 1/sqrt(fan_in).
inline void init_linear(Tensor& w, RngStream rng) {
  if (w.rank() != 2) throw StructuralError("init_linear wants a matrix");
  fill_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(w.dim(0))));
}

inline void init_embedding(Tensor& e, RngStream rng, double stddev = 0.02) {
  fill_normal(e, rng, stddev);
}

}  // namespace sage
