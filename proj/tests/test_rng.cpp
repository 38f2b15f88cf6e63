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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "sage/rng.hpp"

using sage::RngStream;

TEST_CASE("identical derivation chains give identical draws") {
  RngStream a(7);
  RngStream b(7);
  auto sa = a.derive("jepa").derive(3u).derive("mask");
  auto sb = b.derive("jepa").derive(3u).derive("mask");
  for (int i = 0; i < 100; ++i) REQUIRE(sa.next_u64() == sb.next_u64());
}

TEST_CASE("sibling streams are decorrelated") {
  RngStream root(7);
  auto a = root.derive("a");
  auto b = root.derive("b");
  int agree = 0;
  for (int i = 0; i < 64; ++i) {
    if ((a.next_u64() & 1) == (b.next_u64() & 1)) ++agree;
  }
  REQUIRE(agree > 10);
  REQUIRE(agree < 54);
}

TEST_CASE("parent draws do not disturb derived streams") {
  RngStream r1(42);
  RngStream r2(42);
  (void)r1.next_u64();
  (void)r1.next_u64();
  auto d1 = r1.derive("x");
  auto d2 = r2.derive("x");
  REQUIRE(d1.next_u64() == d2.next_u64());
}

TEST_CASE("uniform moments") {
  RngStream r(123);
  auto s = r.derive("uniform");
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  REQUIRE(std::fabs(mean - 0.5) < 0.005);
  REQUIRE(std::fabs(var - 1.0 / 12.0) < 0.005);
}

TEST_CASE("normal moments") {
  RngStream r(99);
  auto s = r.derive("normal");
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = s.normal();
    sum += x;
    sum2 += x * x;
  }
  REQUIRE(std::fabs(sum / n) < 0.01);
  REQUIRE(std::fabs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("uniform_int stays in range and covers values") {
  RngStream r(5);
  auto s = r.derive("ints");
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    auto k = s.uniform_int(10);
    REQUIRE(k < 10);
    counts[static_cast<int>(k)]++;
  }
  for (int c : counts) REQUIRE(c > 800);
}

TEST_CASE("permutation is a valid permutation") {
  RngStream r(11);
  auto s = r.derive("perm");
  for (int trial = 0; trial < 50; ++trial) {
    auto p = s.permutation(17);
    std::set<std::size_t> seen(p.begin(), p.end());
    REQUIRE(seen.size() == 17);
    REQUIRE(*seen.rbegin() == 16);
  }
}
