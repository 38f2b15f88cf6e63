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

#include "fd_check.hpp"
#include "sage/graph.hpp"
#include "sage/nn.hpp"
#include "sage/params.hpp"
#include "sage/rng.hpp"

using namespace sage;
using sage::testing::fd_check;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngStream rng,
                     double scale = 1.0, double kink_gap = 0.0) {
  Tensor t(std::move(shape));
  for (double& x : t.v) {
    do {
      x = scale * rng.normal();
    } while (kink_gap > 0.0 && std::fabs(x) < kink_gap);
  }
  return t;
}

}  // namespace

TEST_CASE("linear case: loss = sum(w * x)") {
  ParameterStore ps;
  ps.create("w", {2}).v = {1.0, 2.0};
  Graph g;
  Var w = g.param(ps, "w");
  Var x = g.input(Tensor({2}, {3.0, 4.0}));
  Var loss = g.sum_all(g.mul(w, x));
  REQUIRE(g.scalar(loss) == 11.0);
  auto grads = g.backward(loss);
  REQUIRE(grads.at("w").v[0] == 3.0);
  REQUIRE(grads.at("w").v[1] == 4.0);
}

TEST_CASE("zero-scaled loss has exactly zero gradients") {
  ParameterStore ps;
  RngStream rng(3);
  ps.create("w", {4, 4});
  fill_normal(ps.at("w"), rng, 1.0);
  Graph g;
  Var w = g.param(ps, "w");
  Var x = g.input(random_tensor({2, 4}, rng.derive("x")));
  Var y = g.sum_all(g.square(g.gelu(g.matmul(x, w))));
  Var loss = g.scale(y, 0.0);
  auto grads = g.backward(loss);
  for (double v : grads.at("w").v) REQUIRE(v == 0.0);
}

TEST_CASE("stop-gradient blocks the teacher branch but keeps its value") {
  ParameterStore ps;
  RngStream rng(4);
  ps.create("teacher", {3});
  fill_normal(ps.at("teacher"), rng, 1.0);
  Graph g;
  Var t = g.param(ps, "teacher");
  Var blocked = g.stopgrad(t);
  Var loss = g.sum_all(g.square(blocked));
  REQUIRE(g.scalar(loss) > 0.0);
  auto grads = g.backward(loss);
  for (double v : grads.at("teacher").v) REQUIRE(v == 0.0);
}

TEST_CASE("finite differences: dense + gelu + layernorm mlp") {
  ParameterStore ps;
  RngStream rng(10);
  MlpDef def{"mlp", {5, 7, 7, 3}};
  mlp_register(ps, def, rng.derive("init"));
  Tensor x = random_tensor({4, 5}, rng.derive("x"));
  auto build = [&](Graph& g, ParameterStore& p) {
    Var out = mlp_apply(g, p, def, g.input(x), true);
    return g.mean_all(g.square(out));
  };
  auto res = fd_check(ps, build, 4, rng.derive("probe"));
  INFO(res.worst_site);
  REQUIRE(res.checks >= 30);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: masked attention transformer") {
  ParameterStore ps;
  RngStream rng(20);
  TransformerDef def{"tf", 8, 2, 2};
  transformer_register(ps, def, rng.derive("init"));
  Tensor x = random_tensor({2, 5, 8}, rng.derive("x"), 0.5);
  Tensor mask = causal_mask(5);
  auto build = [&](Graph& g, ParameterStore& p) {
    Var out = transformer_apply(g, p, def, g.input(x), &mask, true);
    return g.mean_all(g.square(out));
  };
  auto res = fd_check(ps, build, 3, rng.derive("probe"));
  INFO(res.worst_site);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: L1, hinge and softmax losses") {
  ParameterStore ps;
  RngStream rng(30);
  ps.create("w", {6, 4});
  init_linear(ps.at("w"), rng.derive("w"));
  Tensor x = random_tensor({3, 6}, rng.derive("x"), 1.0);
  Tensor tgt = random_tensor({3, 4}, rng.derive("t"), 1.0);

  SECTION("l1") {
    auto build = [&](Graph& g, ParameterStore& p) {
      Var pred = g.matmul(g.input(x), g.param(p, "w"));
      Var diff = g.sub(pred, g.input(tgt));
      return g.scale(g.sum_all(g.abs_(diff)), 1.0 / 3.0);
    };
    auto res = fd_check(ps, build, 6, rng.derive("probe1"));
    REQUIRE(res.max_rel_err < 1e-4);
  }

  SECTION("hinge on per-sample sums") {
    auto build = [&](Graph& g, ParameterStore& p) {
      Var pred = g.matmul(g.input(x), g.param(p, "w"));
      Var e = g.sum_except_first(g.abs_(g.sub(pred, g.input(tgt))));
      Var viol = g.relu(g.add_const(g.neg(e), 2.5));
      return g.mean_all(viol);
    };
    auto res = fd_check(ps, build, 6, rng.derive("probe2"));
    REQUIRE(res.max_rel_err < 1e-4);
  }

  SECTION("softmax cross-entropy-like reduction") {
    auto build = [&](Graph& g, ParameterStore& p) {
      Var pred = g.softmax_last(g.matmul(g.input(x), g.param(p, "w")));
      return g.mean_all(g.square(g.sub(pred, g.input(tgt))));
    };
    auto res = fd_check(ps, build, 6, rng.derive("probe3"));
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("finite differences: embeddings, concat, slice, bmm pipeline") {
  ParameterStore ps;
  RngStream rng(40);
  ps.create("emb", {6, 4});
  ps.create("w", {8, 2});
  init_embedding(ps.at("emb"), rng.derive("e"), 0.5);
  init_linear(ps.at("w"), rng.derive("w"));
  Tensor x = random_tensor({2, 3, 4}, rng.derive("x"));
  std::vector<std::size_t> idx = {0, 5, 2, 1, 1, 4};
  auto build = [&](Graph& g, ParameterStore& p) {
    Var e = g.reshape(g.embed(g.param(p, "emb"), idx), {2, 3, 4});
    Var both = g.concat_last(g.input(x), e);       // [2,3,8]
    Var part = g.slice_t(both, 1, 2);              // [2,2,8]
    Var prod = g.bmm(part, g.transpose_last2(part));  // [2,2,2]
    Var flat = g.reshape(both, {6, 8});
    Var head = g.matmul(flat, g.param(p, "w"));
    return g.add(g.mean_all(g.square(prod)), g.mean_all(g.abs_(head)));
  };
  auto res = fd_check(ps, build, 8, rng.derive("probe"));
  INFO(res.worst_site);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: sqrt and variance-style reductions") {
  ParameterStore ps;
  RngStream rng(50);
  ps.create("z", {6, 3});
  fill_normal(ps.at("z"), rng, 1.0);
  auto build = [&](Graph& g, ParameterStore& p) {
    Var z = g.param(p, "z");
    Var mean = g.scale(g.colsum(z), 1.0 / 6.0);
    Var centered = g.sub(z, mean);
    Var var = g.scale(g.colsum(g.square(centered)), 1.0 / 5.0);
    Var sd = g.sqrt_(g.add_const(var, 1e-4));
    return g.mean_all(g.relu(g.add_const(g.neg(sd), 1.0)));
  };
  auto res = fd_check(ps, build, 18, rng.derive("probe"));
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("weight sharing accumulates gradients across uses") {
  ParameterStore ps;
  ps.create("w", {1}).v = {2.0};
  Graph g;
  Var w1 = g.param(ps, "w");
  Var w2 = g.param(ps, "w");
  Var loss = g.sum_all(g.mul(w1, w2));  // w^2
  auto grads = g.backward(loss);
  REQUIRE(grads.at("w").v[0] == Catch::Approx(4.0));
}

TEST_CASE("structural errors name the offending op") {
  Graph g;
  Var a = g.input(Tensor({2, 3}));
  Var w = g.input(Tensor({4, 2}));
  REQUIRE_THROWS_AS(g.matmul(a, w), StructuralError);
  REQUIRE_THROWS_AS(g.backward(a), StructuralError);  // non-scalar loss
  Var neg = g.input(Tensor({1}, {-1.0}));
  REQUIRE_THROWS_AS(g.sqrt_(neg), NumericError);
}

TEST_CASE("forward determinism: same seed, same bits") {
  auto run = [](std::uint64_t seed) {
    ParameterStore ps;
    RngStream rng(seed);
    MlpDef def{"m", {4, 16, 4}};
    mlp_register(ps, def, rng.derive("init"));
    Tensor x = random_tensor({8, 4}, rng.derive("x"));
    Graph g;
    Var out = mlp_apply(g, ps, def, g.input(x), true);
    return g.scalar(g.mean_all(g.square(out)));
  };
  REQUIRE(run(7) == run(7));
  REQUIRE(run(7) != run(8));
}
