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

#include "sage/optim.hpp"
#include "sage/params.hpp"

using namespace sage;

TEST_CASE("adamw: zero grads and zero weight decay is a fixed point") {
  ParameterStore ps;
  ps.create("a", {3}).v = {1.0, -2.0, 0.5};
  OptimConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.warmup = 1;
  cfg.total = 10;
  OptimState opt(cfg);
  GradMap grads;
  grads.emplace("a", Tensor({3}));
  opt.step(ps, grads);
  REQUIRE(ps.at("a").v == std::vector<double>{1.0, -2.0, 0.5});
  REQUIRE(ps.step_count == 1);
}

TEST_CASE("adamw: hand-computed single-step oracle") {
  // Single scalar, g = 1 at step 1, lr = 0.1: bias-corrected moments are both
  // 1, so the step is -lr / (1 + eps).
  ParameterStore ps;
  ps.create("w", {1}).v = {0.0};
  OptimConfig cfg;
  cfg.lr_base = 0.1;
  cfg.lr_min = 0.0;
  cfg.warmup = 1;
  cfg.total = 2;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 0.0;  // disabled
  OptimState opt(cfg);
  GradMap grads;
  grads.emplace("w", Tensor({1}, {1.0}));
  opt.step(ps, grads);
  REQUIRE(ps.at("w").v[0] == Catch::Approx(-0.1).margin(1e-8));
}

TEST_CASE("adamw: global norm clip rescales gradients before moments") {
  ParameterStore ps;
  ps.create("a", {1}).v = {0.0};
  ps.create("b", {1}).v = {0.0};
  OptimConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.warmup = 1;
  cfg.total = 10;
  OptimState opt(cfg);
  GradMap grads;
  grads.emplace("a", Tensor({1}, {6.0}));
  grads.emplace("b", Tensor({1}, {8.0}));  // global norm 10
  double norm = opt.step(ps, grads);
  REQUIRE(norm == Catch::Approx(10.0));
  REQUIRE(grads.at("a").v[0] == Catch::Approx(0.6));
  REQUIRE(grads.at("b").v[0] == Catch::Approx(0.8));
}

TEST_CASE("adamw: missing gradient is a structural error") {
  ParameterStore ps;
  ps.create("a", {1});
  ps.create("b", {1});
  OptimState opt;
  GradMap grads;
  grads.emplace("a", Tensor({1}, {1.0}));
  REQUIRE_THROWS_AS(opt.step(ps, grads), StructuralError);
}

TEST_CASE("cosine lr endpoints and monotonicity") {
  REQUIRE(cosine_lr(0, 100, 1000, 3e-4, 1e-6) == 0.0);
  REQUIRE(cosine_lr(100, 100, 1000, 3e-4, 1e-6) == Catch::Approx(3e-4));
  REQUIRE(cosine_lr(1000, 100, 1000, 3e-4, 1e-6) == Catch::Approx(1e-6));
  double prev = cosine_lr(100, 100, 1000, 3e-4, 1e-6);
  for (std::uint64_t s = 101; s <= 1000; ++s) {
    double lr = cosine_lr(s, 100, 1000, 3e-4, 1e-6);
    REQUIRE(lr <= prev + 1e-18);
    prev = lr;
  }
  REQUIRE_THROWS_AS(cosine_lr(0, 100, 100, 1e-4, 1e-6), ConfigError);
  REQUIRE_THROWS_AS(cosine_lr(11, 2, 10, 1e-4, 1e-6), ConfigError);
}

TEST_CASE("ema momentum schedule endpoints and shape") {
  REQUIRE(ema_momentum_schedule(0, 1000) == Catch::Approx(0.99));
  REQUIRE(ema_momentum_schedule(1000, 1000) == Catch::Approx(0.9999));
  // Midpoint of the cosine interpolation between the endpoints.
  REQUIRE(ema_momentum_schedule(500, 1000) ==
          Catch::Approx(0.5 * (0.99 + 0.9999)));
  double prev = 0.99;
  for (std::uint64_t s = 1; s <= 1000; ++s) {
    double mu = ema_momentum_schedule(s, 1000);
    REQUIRE(mu >= prev);
    prev = mu;
  }
}

TEST_CASE("ema update closed forms") {
  ParameterStore teacher, student;
  teacher.create("w", {1}).v = {1.0};
  student.create("w", {1}).v = {0.0};

  SECTION("mu = 0.99") {
    ema_update(teacher, student, 0.99);
    REQUIRE(teacher.at("w").v[0] == Catch::Approx(0.99));
  }
  SECTION("mu = 1 keeps the teacher") {
    ema_update(teacher, student, 1.0);
    REQUIRE(teacher.at("w").v[0] == 1.0);
  }
  SECTION("mu = 0 copies the student") {
    ema_update(teacher, student, 0.0);
    REQUIRE(teacher.at("w").v[0] == 0.0);
  }
  SECTION("shape mismatch is structural") {
    ParameterStore other;
    other.create("w", {2});
    REQUIRE_THROWS_AS(ema_update(teacher, other, 0.5), StructuralError);
  }
}
