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

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sage {

inline constexpr std::string_view kVersion = "0.1.0";

// Shape or wiring mistakes: wrong dimensions, missing parameters, bad indices.
class StructuralError : public std::runtime_error {
 public:
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, singular systems.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-facing configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format or filesystem failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw NumericError(std::string("non-finite value in ") + what);
  }
}

// FNV-1a, used for config/artifact hashing and RNG stream derivation.
inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                                 std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace sage
