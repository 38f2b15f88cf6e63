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

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>

#include "sage/acpred.hpp"

using namespace sage;

namespace {

AcConfig tiny_config() {
  AcConfig cfg;
  cfg.d_z = 6;
  cfg.hidden = 8;
  cfg.window = 5;
  cfg.heads = 2;
  cfg.rollout_h = 2;
  cfg.batch = 4;
  cfg.steps = 30;
  cfg.optim.warmup = 2;
  cfg.optim.total = 30;
  return cfg;
}

Tensor randn(std::vector<std::size_t> shape, RngStream rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.v) x = s * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("zero-initialised head makes the predictor the identity") {
  AcConfig cfg = tiny_config();
  RngStream rng(2);
  AcModel m = ac_init(cfg, rng.derive("init"));
  Tensor z = randn({2, cfg.window + 1, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({2, cfg.window, kActionDim}, rng.derive("a"));
  Graph g;
  Var zhat = ac_predict_next(g, m, g.input(z), g.input(a), false);
  const Tensor& out = g.val(zhat);
  REQUIRE(out.shape == std::vector<std::size_t>{2, cfg.window, cfg.d_z});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < cfg.window; ++t) {
      for (std::size_t j = 0; j < cfg.d_z; ++j) {
        REQUIRE(out.v[(b * cfg.window + t) * cfg.d_z + j] ==
                z.v[(b * (cfg.window + 1) + t) * cfg.d_z + j]);
      }
    }
  }
}

TEST_CASE("block-causality: exact zero sensitivity to future inputs") {
  AcConfig cfg = tiny_config();
  RngStream rng(3);
  AcModel m = ac_init(cfg, rng.derive("init"));
  // Give the head nonzero weights so the test is not vacuous.
  fill_normal(m.params.at("ac.head.l1.w"), rng.derive("w"), 0.3);
  Tensor z = randn({1, cfg.window + 1, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({1, cfg.window, kActionDim}, rng.derive("a"));

  Graph g;
  const Tensor base = g.val(ac_predict_next(g, m, g.input(z), g.input(a), false));

  const std::size_t j = 3;  // perturb position 3
  SECTION("perturbing a_j leaves predictions before j unchanged") {
    Tensor a2 = a;
    a2.v[j * kActionDim] += 0.7;
    Graph g2;
    const Tensor out = g2.val(ac_predict_next(g2, m, g2.input(z), g2.input(a2), false));
    for (std::size_t t = 0; t < cfg.window; ++t) {
      bool unchanged = true;
      for (std::size_t d = 0; d < cfg.d_z; ++d) {
        if (out.v[t * cfg.d_z + d] != base.v[t * cfg.d_z + d]) unchanged = false;
      }
      if (t < j) REQUIRE(unchanged);
      if (t == j) REQUIRE_FALSE(unchanged);
    }
  }

  SECTION("perturbing z_j leaves predictions before j unchanged") {
    Tensor z2 = z;
    z2.v[j * cfg.d_z + 1] += 0.9;
    Graph g2;
    const Tensor out = g2.val(ac_predict_next(g2, m, g2.input(z2), g2.input(a), false));
    for (std::size_t t = 0; t < j; ++t) {
      for (std::size_t d = 0; d < cfg.d_z; ++d) {
        REQUIRE(out.v[t * cfg.d_z + d] == base.v[t * cfg.d_z + d]);
      }
    }
  }

  SECTION("empty window is structural") {
    Graph g2;
    Tensor z1({1, 1, cfg.d_z});
    Tensor a0({1, 0, kActionDim});
    REQUIRE_THROWS_AS(ac_predict_next(g2, m, g2.input(z1), g2.input(a0), false),
                      StructuralError);
  }
}

TEST_CASE("teacher-forced L1 loss closed forms and oracle") {
  Graph g;
  SECTION("perfect prediction gives zero") {
    Tensor z({1, 2, 3}, {1, 2, 3, 4, 5, 6});
    Var l = ac_loss_tf(g, g.input(z), g.input(z));
    REQUIRE(g.scalar(l) == 0.0);
  }
  SECTION("single step, d_z = 2, error (0.5, -0.5) gives 1.0") {
    Tensor zhat({1, 1, 2}, {0.5, -0.5});
    Tensor znext({1, 1, 2}, {0.0, 0.0});
    Var l = ac_loss_tf(g, g.input(zhat), g.input(znext));
    REQUIRE(g.scalar(l) == Catch::Approx(1.0));
  }
  SECTION("random case matches scalar recomputation") {
    RngStream rng(4);
    Tensor zhat = randn({3, 4, 5}, rng.derive("a"));
    Tensor znext = randn({3, 4, 5}, rng.derive("b"));
    double expect = 0.0;
    for (std::size_t i = 0; i < zhat.numel(); ++i) {
      expect += std::fabs(zhat.v[i] - znext.v[i]);
    }
    expect /= 3.0;
    Var l = ac_loss_tf(g, g.input(zhat), g.input(znext));
    REQUIRE(g.scalar(l) == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("rollout: identity predictor, H_ro=1 equivalence, manual composition") {
  AcConfig cfg = tiny_config();
  RngStream rng(5);
  AcModel m = ac_init(cfg, rng.derive("init"));
  Tensor z = randn({2, cfg.window + 1, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({2, cfg.window, kActionDim}, rng.derive("a"));

  SECTION("identity predictor rolls out to z_0") {
    Graph g;
    Var zh = ac_rollout(g, m, g.slice_t(g.input(z), 0, 1), g.input(a), 3, false);
    const Tensor& out = g.val(zh);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t d = 0; d < cfg.d_z; ++d) {
        REQUIRE(out.v[b * cfg.d_z + d] ==
                z.v[b * (cfg.window + 1) * cfg.d_z + d]);
      }
    }
  }

  fill_normal(m.params.at("ac.head.l1.w"), rng.derive("w"), 0.2);

  SECTION("H_ro = 1 rollout equals the first-position one-step error") {
    Graph g;
    Var zv = g.input(z);
    Var av = g.input(a);
    Var l_ro = ac_loss_ro(g, m, zv, av, 1, false);
    // One-step error at position 0 from the teacher-forced path.
    Var zhat = ac_predict_next(g, m, zv, av, false);
    Var first = g.slice_t(zhat, 0, 1);
    Var tgt = g.slice_t(zv, 1, 1);
    Var l_first = g.scale(g.sum_all(g.abs_(g.sub(first, tgt))), 0.5);
    REQUIRE(g.scalar(l_ro) == Catch::Approx(g.scalar(l_first)).margin(1e-12));
  }

  SECTION("H_ro = 2 matches manual two-step composition") {
    Graph g;
    Var zv = g.input(z);
    Var av = g.input(a);
    const Tensor rolled = g.val(ac_rollout(g, m, g.slice_t(zv, 0, 1), av, 2, false));
    // Manual: single-step from z0, then a two-token window [z0, zhat1].
    Graph g2;
    Var z0 = g2.input(Tensor({2, 1, cfg.d_z},
                             [&] {
                               std::vector<double> v(2 * cfg.d_z);
                               for (std::size_t b = 0; b < 2; ++b)
                                 for (std::size_t d = 0; d < cfg.d_z; ++d)
                                   v[b * cfg.d_z + d] =
                                       z.v[b * (cfg.window + 1) * cfg.d_z + d];
                               return v;
                             }()));
    Var a1 = g2.slice_t(g2.input(a), 0, 1);
    Var zh1 = ac_predict_next(g2, m, z0, a1, false);
    Var seq = g2.concat_t(z0, zh1);
    Var a2 = g2.slice_t(g2.input(a), 0, 2);
    Var zh2 = g2.slice_t(ac_predict_next(g2, m, seq, a2, false), 1, 1);
    const Tensor& manual = g2.val(zh2);
    for (std::size_t i = 0; i < manual.numel(); ++i) {
      REQUIRE(rolled.v[i] == Catch::Approx(manual.v[i]).margin(1e-12));
    }
  }
}

TEST_CASE("permute_actions: swap, no fixed points, uniform over derangements") {
  RngStream rng(6);
  SECTION("B = 2 always swaps") {
    for (int i = 0; i < 10; ++i) {
      auto p = permute_actions_indices(2, rng);
      REQUIRE(p == std::vector<std::size_t>{1, 0});
    }
  }
  SECTION("B = 1 is a configuration error") {
    REQUIRE_THROWS_AS(permute_actions_indices(1, rng), ConfigError);
  }
  SECTION("no fixed points over many draws") {
    for (int i = 0; i < 10000; ++i) {
      auto p = permute_actions_indices(5, rng);
      for (std::size_t j = 0; j < 5; ++j) REQUIRE(p[j] != j);
    }
  }
  SECTION("B = 3: uniform over the two derangements (chi-squared)") {
    std::map<std::vector<std::size_t>, int> counts;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[permute_actions_indices(3, rng)]++;
    REQUIRE(counts.size() == 2);
    double expected = draws / 2.0;
    double chi2 = 0.0;
    for (const auto& [p, c] : counts) {
      chi2 += (c - expected) * (c - expected) / expected;
    }
    boost::math::chi_squared dist(1);
    REQUIRE(1.0 - boost::math::cdf(dist, chi2) > 0.01);
  }
}

TEST_CASE("negative hinge loss closed forms and oracle") {
  AcConfig cfg = tiny_config();
  cfg.margin = 0.5;
  RngStream rng(7);
  AcModel m = ac_init(cfg, rng.derive("init"));
  fill_normal(m.params.at("ac.head.l1.w"), rng.derive("w"), 0.2);
  Tensor z = randn({2, cfg.window + 1, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({2, cfg.window, kActionDim}, rng.derive("a"));
  auto pi = std::vector<std::size_t>{1, 0};
  Tensor a_perm = apply_permutation_rows(a, pi);

  Graph g;
  Var zv = g.input(z);
  Var z_next = g.slice_t(zv, 1, cfg.window);
  AcNegParts neg = ac_loss_neg(g, m, zv, a_perm, z_next, cfg.margin, false);

  // Scalar oracle from the permuted-branch predictions.
  Graph g2;
  const Tensor zhat = g2.val(ac_predict_next(g2, m, g2.input(z), g2.input(a_perm), false));
  double expect = 0.0;
  std::vector<double> e(2, 0.0);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < cfg.window; ++t) {
      for (std::size_t d = 0; d < cfg.d_z; ++d) {
        e[b] += std::fabs(zhat.v[(b * cfg.window + t) * cfg.d_z + d] -
                          z.v[(b * (cfg.window + 1) + t + 1) * cfg.d_z + d]);
      }
    }
    expect += std::max(0.0, cfg.margin - e[b]);
  }
  expect /= 2.0;
  REQUIRE(g.scalar(neg.loss) == Catch::Approx(expect).margin(1e-12));

  SECTION("hinge inactive when all errors clear the margin") {
    // Errors here are O(10) >> 0.5, so the hinge is zero.
    REQUIRE(g.val(neg.e_neg).v[0] > cfg.margin);
    REQUIRE(g.val(neg.e_neg).v[1] > cfg.margin);
    REQUIRE(g.scalar(neg.loss) == 0.0);
  }

  SECTION("identity predictor on constant latents gives loss = margin") {
    AcModel ident = ac_init(cfg, RngStream(8).derive("init"));
    Tensor zc({2, cfg.window + 1, cfg.d_z});
    for (double& x : zc.v) x = 0.25;  // constant: E_neg = 0 under identity
    Graph g3;
    Var zcv = g3.input(zc);
    AcNegParts n3 = ac_loss_neg(g3, ident, zcv, a_perm,
                                g3.slice_t(zcv, 1, cfg.window), cfg.margin,
                                false);
    REQUIRE(g3.scalar(n3.loss) == Catch::Approx(cfg.margin));
  }
}

TEST_CASE("combined objective weighting and gradient flow") {
  AcConfig cfg = tiny_config();
  RngStream rng(9);
  AcModel m = ac_init(cfg, rng.derive("init"));
  fill_normal(m.params.at("ac.head.l1.w"), rng.derive("w"), 0.2);
  Tensor z = randn({2, cfg.window + 1, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({2, cfg.window, kActionDim}, rng.derive("a"));
  Tensor a_perm = apply_permutation_rows(a, {1, 0});

  Graph g;
  Var zv = g.input(z);
  Var av = g.input(a);
  Var z_next = g.slice_t(zv, 1, cfg.window);
  Var l_tf = ac_loss_tf(g, ac_predict_next(g, m, zv, av, true), z_next);
  Var l_ro = ac_loss_ro(g, m, zv, av, cfg.rollout_h, true);
  AcNegParts neg = ac_loss_neg(g, m, zv, a_perm, z_next, cfg.margin, true);
  Var total = g.add(l_tf, g.add(g.scale(l_ro, 1.0), g.scale(neg.loss, 1.0)));
  // (1, 2, 3) with unit weights sums to 6 -- checked via the actual values.
  double expect = g.scalar(l_tf) + g.scalar(l_ro) + g.scalar(neg.loss);
  REQUIRE(g.scalar(total) == Catch::Approx(expect).epsilon(1e-14));
  GradMap grads = g.backward(total);
  double norm = 0.0;
  for (const auto& [name, t] : grads) {
    for (double x : t.v) norm += x * x;
  }
  REQUIRE(norm > 0.0);
}

TEST_CASE("tape-free single-transition forward matches the graph path") {
  AcConfig cfg = tiny_config();
  RngStream rng(10);
  AcModel m = ac_init(cfg, rng.derive("init"));
  fill_normal(m.params.at("ac.head.l1.w"), rng.derive("w"), 0.2);
  const std::size_t n = 7;
  Tensor z = randn({n, cfg.d_z}, rng.derive("z"));
  Tensor a = randn({n, kActionDim}, rng.derive("a"));
  Tensor fast = ac_predict_single(m, z, a);

  for (std::size_t i = 0; i < n; ++i) {
    Graph g;
    Tensor zi({1, 1, cfg.d_z});
    Tensor ai({1, 1, kActionDim});
    for (std::size_t d = 0; d < cfg.d_z; ++d) zi.v[d] = z.v[i * cfg.d_z + d];
    for (std::size_t d = 0; d < kActionDim; ++d) ai.v[d] = a.v[i * kActionDim + d];
    const Tensor out = g.val(ac_predict_next(g, m, g.input(zi), g.input(ai), false));
    for (std::size_t d = 0; d < cfg.d_z; ++d) {
      REQUIRE(fast.v[i * cfg.d_z + d] == Catch::Approx(out.v[d]).margin(1e-12));
    }
  }
}

TEST_CASE("short training run decreases the loss and is deterministic") {
  GenConfig gen;
  gen.n_episodes = 8;
  OfflineDataset ds = generate_dataset(make_maze("corridor"), gen, 12);
  JepaConfig jc;
  jc.d_z = 6;
  jc.hidden = 12;
  jc.window = 6;
  jc.k_max = 2;
  jc.k_per_batch = 1;
  jc.pred_heads = 2;
  jc.steps = 60;
  jc.batch = 8;
  jc.optim.warmup = 5;
  RngStream rng(13);
  JepaModel jepa = jepa_init(jc, rng.derive("jepa"));
  train_jepa(jepa, ds, rng.derive("jtrain"));

  AcConfig cfg = tiny_config();
  cfg.steps = 120;
  cfg.optim.total = 120;
  cfg.optim.lr_base = 3e-4;
  AcModel m1 = ac_init(cfg, rng.derive("ac"));
  AcTrainLog log1 = train_ac(m1, ds, jepa, rng.derive("actrain"));
  REQUIRE(log1.totals.size() == cfg.steps);
  double first = 0.0, last = 0.0;
  std::size_t tenth = cfg.steps / 10;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += log1.totals[i];
    last += log1.totals[cfg.steps - 1 - i];
  }
  REQUIRE(last < first);

  // Bit-identical repeat under the same seed; frozen model is deterministic.
  AcModel m2 = ac_init(cfg, RngStream(13).derive("ac"));
  AcTrainLog log2 = train_ac(m2, ds, jepa, RngStream(13).derive("actrain"));
  REQUIRE(log1.totals == log2.totals);
  Tensor z = randn({3, cfg.d_z}, rng.derive("zz"));
  Tensor a = randn({3, kActionDim}, rng.derive("aa"));
  REQUIRE(ac_predict_single(m1, z, a).v == ac_predict_single(m2, z, a).v);
}
