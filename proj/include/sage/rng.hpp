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
#include <string_view>
#include <vector>

#include "sage/common.hpp"

namespace sage {

// Named, splittable counter-based generator. Every stochastic site derives
// its own stream from a parent key, so subsystems stay independently
// reproducible under one global seed. Output is a SplitMix64 walk keyed by
// the derivation chain; identical chains give identical draws on any build.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ kRootSalt)) {}

  RngStream derive(std::string_view name) const {
    return RngStream(FromKey{}, mix(key_ ^ fnv1a(name)));
  }
  RngStream derive(std::uint64_t index) const {
    return RngStream(FromKey{}, mix(key_ ^ mix(index + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9e3779b97f4a7c15ull;
    return mix(z);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in {0, ..., n-1} by rejection (exact, no modulo bias).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw StructuralError("uniform_int: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; the paired draw is cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates over n indices.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  static constexpr std::uint64_t kRootSalt = 0x5347452d524e4731ull;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace sage
