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
#include <filesystem>

#include "sage/generator.hpp"

using namespace sage;
namespace fs = std::filesystem;

namespace {

OfflineDataset corridor_data(std::size_t episodes = 14, std::uint64_t seed = 3) {
  GenConfig cfg;
  cfg.n_episodes = episodes;
  return generate_dataset(make_maze("corridor"), cfg, seed);
}

PlannerConfig tiny_planner() {
  PlannerConfig cfg;
  cfg.horizon = 8;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.t_train = 20;
  cfg.ddim_steps = 5;
  cfg.steps = 250;
  cfg.batch = 8;
  cfg.ema_rate = 0.98;
  cfg.optim.warmup = 10;
  cfg.optim.total = 250;
  cfg.optim.lr_base = 1e-3;
  return cfg;
}

}  // namespace

TEST_CASE("cosine noise schedule endpoints and monotonicity") {
  NoiseSchedule sched(100);
  REQUIRE(sched.alpha_bar[0] == 1.0);
  REQUIRE(sched.alpha_bar[100] < 0.01);
  for (std::size_t t = 1; t <= 100; ++t) {
    REQUIRE(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
    REQUIRE(sched.alpha_bar[t] > 0.0);
  }
}

TEST_CASE("planner raw forward matches the graph path") {
  PlannerConfig cfg = tiny_planner();
  RngStream rng(4);
  PlannerModel m = planner_init(cfg, rng.derive("init"));
  Tensor x({3, cfg.horizon + 1, kStateDim});
  RngStream xr = rng.derive("x");
  for (double& v : x.v) v = xr.normal();
  Tensor tfeat = timestep_features(7.0, cfg.hidden);

  Graph g;
  const Tensor grf = g.val(planner_eps(g, m.params, cfg, g.input(x), tfeat, false));
  Tensor raw = planner_eps_raw(m.params, cfg, x, tfeat);
  REQUIRE(raw.shape == grf.shape);
  for (std::size_t i = 0; i < raw.numel(); ++i) {
    REQUIRE(raw.v[i] == Catch::Approx(grf.v[i]).margin(1e-12));
  }
}

TEST_CASE("planner training reduces the denoising loss") {
  OfflineDataset ds = corridor_data();
  PlannerConfig cfg = tiny_planner();
  RngStream rng(5);
  PlannerModel m = planner_init(cfg, rng.derive("init"));
  PlannerTrainLog log = train_planner(m, ds, rng.derive("train"));
  double first = 0.0, last = 0.0;
  std::size_t tenth = cfg.steps / 10;
  for (std::size_t i = 0; i < tenth; ++i) {
    first += log.losses[i];
    last += log.losses[cfg.steps - 1 - i];
  }
  REQUIRE(last < first);
}

TEST_CASE("ddim sampling: conditioning, count, determinism, errors") {
  OfflineDataset ds = corridor_data();
  PlannerConfig cfg = tiny_planner();
  cfg.steps = 60;
  RngStream rng(6);
  PlannerModel m = planner_init(cfg, rng.derive("init"));

  SECTION("untrained planner is refused") {
    RngStream sr(1);
    REQUIRE_THROWS_AS(ddim_sample(m, {0, 0, 0, 0}, 3, 5, sr.derive("s")),
                      ConfigError);
  }

  train_planner(m, ds, rng.derive("train"));
  Vec4 s_norm = ds.normalize({1.5, 1.5, 0.0, 0.0});

  SECTION("C plans with exact first-state conditioning") {
    auto plans = ddim_sample(m, s_norm, 7, cfg.ddim_steps, RngStream(9).derive("s"));
    REQUIRE(plans.size() == 7);
    for (const auto& p : plans) {
      REQUIRE(p.states.shape ==
              std::vector<std::size_t>{cfg.horizon + 1, kStateDim});
      for (std::size_t d = 0; d < kStateDim; ++d) {
        REQUIRE(p.states.v[d] == s_norm[d]);
      }
    }
  }

  SECTION("seed-fixed sampling is bit-deterministic") {
    auto a = ddim_sample(m, s_norm, 4, cfg.ddim_steps, RngStream(11).derive("s"));
    auto b = ddim_sample(m, s_norm, 4, cfg.ddim_steps, RngStream(11).derive("s"));
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].states.v == b[i].states.v);
    }
  }

  SECTION("full-step DDIM works and bad step counts are refused") {
    RngStream sr(13);
    auto full = ddim_sample(m, s_norm, 2, cfg.t_train, sr.derive("s"));
    REQUIRE(full.size() == 2);
    REQUIRE_THROWS_AS(ddim_sample(m, s_norm, 2, cfg.t_train + 1, sr.derive("t")),
                      ConfigError);
    REQUIRE_THROWS_AS(ddim_sample(m, s_norm, 2, 0, sr.derive("u")), ConfigError);
  }
}

TEST_CASE("replay generator: splice, continuation, replacement sampling") {
  OfflineDataset ds = corridor_data();
  std::size_t h = 6;
  ReplayGenerator gen(ds, h);

  SECTION("zero noise from an exact dataset state returns the continuation") {
    const Trajectory& tr = ds.trajectories[0];
    Vec4 s_norm = ds.normalize(tr.states[2]);
    auto plans = gen.generate(s_norm, 1, 0.0, RngStream(1).derive("g"));
    REQUIRE(plans.size() == 1);
    for (std::size_t t = 0; t <= h; ++t) {
      Vec4 expect = ds.normalize(tr.states[2 + t]);
      for (std::size_t d = 0; d < kStateDim; ++d) {
        REQUIRE(plans[0].states.v[t * kStateDim + d] ==
                Catch::Approx(expect[d]).margin(1e-12));
      }
    }
  }

  SECTION("requesting more candidates than windows still yields C plans") {
    std::size_t c = gen.window_count() + 25;
    auto plans = gen.generate(ds.normalize({1.5, 1.5, 0, 0}), c, 0.05,
                              RngStream(2).derive("g"));
    REQUIRE(plans.size() == c);
  }

  SECTION("noise perturbs every state except the spliced first one") {
    Vec4 s_norm = ds.normalize({2.0, 1.5, 0.1, 0.0});
    auto clean = gen.generate(s_norm, 3, 0.0, RngStream(3).derive("g"));
    auto noisy = gen.generate(s_norm, 3, 0.2, RngStream(3).derive("g"));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t d = 0; d < kStateDim; ++d) {
        REQUIRE(noisy[i].states.v[d] == s_norm[d]);
      }
      REQUIRE(noisy[i].states.v != clean[i].states.v);
    }
  }

  SECTION("mean nearest-neighbour distance shrinks as the dataset grows") {
    OfflineDataset small = corridor_data(4, 7);
    OfflineDataset big = corridor_data(40, 7);
    ReplayGenerator g_small(small, h);
    ReplayGenerator g_big(big, h);
    RngStream qr(5);
    double d_small = 0.0, d_big = 0.0;
    for (int q = 0; q < 30; ++q) {
      Vec4 s{qr.uniform(1.2, 5.8), qr.uniform(1.2, 1.8), qr.uniform(-1, 1),
             qr.uniform(-1, 1)};
      Vec4 ns = small.normalize(s);
      Vec4 nb = big.normalize(s);
      auto ps = g_small.generate(ns, 1, 0.0, qr.derive("a"));
      auto pb = g_big.generate(nb, 1, 0.0, qr.derive("b"));
      for (std::size_t d = 0; d < kStateDim; ++d) {
        double es = ps[0].states.v[kStateDim + d];  // nearest window state 1
        (void)es;
      }
      // distance of the matched window start (state 0 pre-splice is lost, so
      // recompute via the generator's selection: use state 1 continuity as a
      // proxy is fragile; instead measure via a fresh 1-NN scan).
      auto nn_dist = [&](const OfflineDataset& dsx, const Vec4& sn) {
        double best = 1e300;
        for (const auto& tr : dsx.trajectories) {
          if (tr.states.size() < h + 1) continue;
          for (std::size_t t = 0; t + h + 1 <= tr.states.size(); ++t) {
            Vec4 w = dsx.normalize(tr.states[t]);
            double dd = 0.0;
            for (int k = 0; k < 4; ++k) dd += (w[k] - sn[k]) * (w[k] - sn[k]);
            best = std::min(best, dd);
          }
        }
        return std::sqrt(best);
      };
      d_small += nn_dist(small, ns);
      d_big += nn_dist(big, nb);
    }
    REQUIRE(d_big < d_small);
  }
}

TEST_CASE("inverse dynamics: accuracy, rest actions, clipping") {
  GenConfig gc;
  gc.n_episodes = 30;
  OfflineDataset ds = generate_dataset(make_maze("rooms"), gc, 8);
  InvDynConfig cfg;
  cfg.hidden = 64;
  RngStream rng(7);
  InvDynModel m = invdyn_init(cfg, rng.derive("init"));

  SECTION("untrained model is refused") {
    Tensor pairs({1, 8});
    RngStream sr(1);
    REQUIRE_THROWS_AS(invdyn_actions(m, pairs, sr.derive("x")), ConfigError);
  }

  train_invdyn(m, ds, rng.derive("train"));

  SECTION("mean absolute error below 0.05 on identifiable transitions") {
    // At clamp or collision steps the recorded action is not recoverable
    // from (s, s'); score on transitions where v' = v + a dt held exactly.
    double mae = 0.0;
    std::size_t n = 0;
    RngStream sr = rng.derive("eval");
    for (int rep = 0; rep < 800; ++rep) {
      const auto& tr =
          ds.trajectories[sr.uniform_int(ds.trajectories.size())];
      std::size_t t = sr.uniform_int(tr.length());
      bool clean = true;
      for (int d = 0; d < 2; ++d) {
        double vexp = tr.states[t][2 + d] + tr.actions[t][d] * ds.maze.dt;
        if (std::fabs(tr.states[t + 1][2 + d] - vexp) > 1e-12) clean = false;
      }
      if (!clean) continue;
      Tensor pairs({1, 8});
      Vec4 s0 = ds.normalize(tr.states[t]);
      Vec4 s1 = ds.normalize(tr.states[t + 1]);
      for (int d = 0; d < 4; ++d) {
        pairs.v[d] = s0[d];
        pairs.v[4 + d] = s1[d];
      }
      Tensor a = invdyn_actions(m, pairs, sr.derive(rep));
      mae += std::fabs(a.v[0] - tr.actions[t][0]) +
             std::fabs(a.v[1] - tr.actions[t][1]);
      n += 2;
    }
    mae /= static_cast<double>(n);
    REQUIRE(mae < 0.05);
  }

  SECTION("identical consecutive states imply near-zero acceleration") {
    Tensor pairs({1, 8});
    Vec4 s = ds.normalize({2.5, 2.5, 0.0, 0.0});
    for (int d = 0; d < 4; ++d) {
      pairs.v[d] = s[d];
      pairs.v[4 + d] = s[d];
    }
    Tensor a = invdyn_actions(m, pairs, rng.derive("rest"));
    REQUIRE(std::fabs(a.v[0]) < 0.1);
    REQUIRE(std::fabs(a.v[1]) < 0.1);
  }

  SECTION("outputs always clip to [-1, 1]") {
    RngStream sr = rng.derive("clip");
    Tensor pairs({64, 8});
    for (double& v : pairs.v) v = 3.0 * sr.normal();
    Tensor a = invdyn_actions(m, pairs, sr.derive("x"));
    for (double v : a.v) {
      REQUIRE(v <= 1.0);
      REQUIRE(v >= -1.0);
    }
  }
}

TEST_CASE("diffusion inverse dynamics mode trains and samples in bounds") {
  OfflineDataset ds = corridor_data();
  InvDynConfig cfg;
  cfg.diffusion_mode = true;
  cfg.hidden = 32;
  cfg.steps = 300;
  cfg.optim.total = 300;
  RngStream rng(9);
  InvDynModel m = invdyn_init(cfg, rng.derive("init"));
  InvDynTrainLog log = train_invdyn(m, ds, rng.derive("train"));
  REQUIRE(log.losses.back() < log.losses.front());
  Tensor pairs({5, 8});
  RngStream pr = rng.derive("pairs");
  for (double& v : pairs.v) v = pr.normal();
  Tensor a1 = invdyn_actions(m, pairs, RngStream(21).derive("s"));
  Tensor a2 = invdyn_actions(m, pairs, RngStream(21).derive("s"));
  REQUIRE(a1.v == a2.v);  // seed-fixed sampling deterministic
  for (double v : a1.v) {
    REQUIRE(v <= 1.0);
    REQUIRE(v >= -1.0);
  }
}

TEST_CASE("critic: deterministic pure scores and training progress") {
  GenConfig gc;
  gc.n_episodes = 24;
  OfflineDataset ds = generate_dataset(make_maze("rooms"), gc, 10);
  CriticConfig cfg;
  cfg.horizon = 8;
  cfg.hidden = 64;
  cfg.steps = 600;
  cfg.optim.total = 600;
  RngStream rng(10);
  CriticModel m = critic_init(cfg, rng.derive("init"));

  SECTION("untrained critic is refused") {
    std::vector<CandidatePlan> plans(1);
    plans[0].states = Tensor({9, 4});
    plans[0].actions = Tensor({8, 2});
    REQUIRE_THROWS_AS(critic_score(m, plans), ConfigError);
  }

  CriticTrainLog log = train_critic(m, ds, rng.derive("train"));
  REQUIRE(log.holdout_losses.back() < log.holdout_losses.front());

  SECTION("identical plans score identically regardless of position") {
    RngStream pr = rng.derive("plans");
    std::vector<CandidatePlan> plans(3);
    for (auto& p : plans) {
      p.states = Tensor({9, 4});
      p.actions = Tensor({8, 2});
    }
    for (double& v : plans[0].states.v) v = pr.normal();
    plans[2].states = plans[0].states;  // duplicate at another index
    for (double& v : plans[1].states.v) v = pr.normal();
    critic_score(m, plans);
    REQUIRE(plans[0].score_j == plans[2].score_j);
  }
}

TEST_CASE("candidate pool file round trip") {
  fs::path dir = fs::temp_directory_path() / "sage_pool_test";
  fs::create_directories(dir);
  RngStream rng(11);
  std::vector<CandidatePlan> plans(4);
  for (auto& p : plans) {
    p.states = Tensor({9, 4});
    p.actions = Tensor({8, 2});
    for (double& v : p.states.v) v = rng.normal();
    for (double& v : p.actions.v) v = rng.normal();
    p.actions_filled = 3;
    p.score_j = rng.normal();
    p.energy = rng.uniform();
  }
  Vec4 s{0.1, 0.2, 0.3, 0.4};
  save_pool(dir / "p.bin", s, plans, "replay");
  PoolFile back = load_pool(dir / "p.bin");
  REQUIRE(back.s_norm == s);
  REQUIRE(back.generator_kind == "replay");
  REQUIRE(back.plans.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(back.plans[i].states.v == plans[i].states.v);
    REQUIRE(back.plans[i].actions.v == plans[i].actions.v);
    REQUIRE(back.plans[i].actions_filled == 3);
    REQUIRE(back.plans[i].score_j == plans[i].score_j);
  }
  fs::remove_all(dir);
}
