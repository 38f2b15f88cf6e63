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

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sage/maze.hpp"
#include "sage/rng.hpp"
#include "sage/serialize.hpp"

namespace sage {

struct Trajectory {
  std::vector<Vec4> states;   // length L+1
  std::vector<Vec2> actions;  // length L
  std::vector<double> rewards;

  std::size_t length() const { return actions.size(); }
  double episode_return() const {
    double r = 0.0;
    for (double x : rewards) r += x;
    return r;
  }
};

// Offline trajectories plus the normalisation statistics fitted on them.
// Latent whitening statistics are filled in after representation training.
struct OfflineDataset {
  MazeSpec maze;
  std::vector<Trajectory> trajectories;
  Vec4 mu_s{0, 0, 0, 0};
  Vec4 sigma_s{1, 1, 1, 1};
  std::vector<double> mu_z;     // empty until fitted
  std::vector<double> sigma_z;  // empty until fitted
  std::uint64_t seed = 0;
  double noise_level = 0.0;

  std::size_t total_transitions() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }

  Vec4 normalize(const Vec4& s) const {
    Vec4 out;
    for (int i = 0; i < 4; ++i) out[i] = (s[i] - mu_s[i]) / sigma_s[i];
    return out;
  }
  Vec4 denormalize(const Vec4& s) const {
    Vec4 out;
    for (int i = 0; i < 4; ++i) out[i] = s[i] * sigma_s[i] + mu_s[i];
    return out;
  }
};

inline Vec4 normalize_state(const Vec4& s, const Vec4& mu, const Vec4& sigma) {
  for (double x : sigma) {
    if (!(x > 0.0)) throw ConfigError("normalize_state: sigma must be > 0");
  }
  Vec4 out;
  for (int i = 0; i < 4; ++i) out[i] = (s[i] - mu[i]) / sigma[i];
  return out;
}

inline Vec4 denormalize_state(const Vec4& s, const Vec4& mu, const Vec4& sigma) {
  Vec4 out;
  for (int i = 0; i < 4; ++i) out[i] = s[i] * sigma[i] + mu[i];
  return out;
}

// --- scripted behaviour policy ---------------------------------------------------

struct BehaviorConfig {
  double goal_bias = 0.5;      // chance a travel target is the maze goal
  std::size_t dwell_max = 12;  // pause (brake-only) steps at reached targets
  double kp = 4.0;
  double kd = 2.0;
};

// Waypoint PD controller following BFS next-hops toward a target cell.
// One instance caches distance fields per target.
class WaypointController {
 public:
  explicit WaypointController(const MazeSpec& maze) : maze_(maze) {}

  // PD acceleration toward a BFS waypoint for `target`, looking two hops
  // ahead so straight segments run at speed.
  Vec2 act(const Vec4& s, std::pair<long, long> target, const BehaviorConfig& bc) {
    const auto& dist = field(target);
    std::pair<long, long> here{maze_.cell_of_y(s[1]), maze_.cell_of_x(s[0])};
    std::pair<long, long> hop1 = next_hop(dist, here);
    std::pair<long, long> hop2 = next_hop(dist, hop1);
    double wx = static_cast<double>(hop2.second) + 0.5;
    double wy = static_cast<double>(hop2.first) + 0.5;
    return {bc.kp * (wx - s[0]) - bc.kd * s[2],
            bc.kp * (wy - s[1]) - bc.kd * s[3]};
  }

  bool reached(const Vec4& s, std::pair<long, long> target) const {
    return maze_.cell_of_y(s[1]) == target.first &&
           maze_.cell_of_x(s[0]) == target.second &&
           std::hypot(s[0] - (static_cast<double>(target.second) + 0.5),
                      s[1] - (static_cast<double>(target.first) + 0.5)) < 0.35;
  }

 private:
  std::pair<long, long> next_hop(const std::vector<std::size_t>& dist,
                                 std::pair<long, long> from) const {
    std::pair<long, long> next = from;
    std::size_t best = at(dist, from.first, from.second);
    const long dr[4] = {1, -1, 0, 0};
    const long dc[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      long nr = from.first + dr[k], nc = from.second + dc[k];
      if (!maze_.free_cell(nr, nc)) continue;
      std::size_t d = at(dist, nr, nc);
      if (d < best) {
        best = d;
        next = {nr, nc};
      }
    }
    return next;
  }

  const std::vector<std::size_t>& field(std::pair<long, long> target) {
    auto it = fields_.find(target);
    if (it == fields_.end()) {
      it = fields_.emplace(target, maze_.distance_field(target.first,
                                                        target.second)).first;
    }
    return it->second;
  }
  std::size_t at(const std::vector<std::size_t>& f, long r, long c) const {
    if (r < 0 || c < 0 || r >= static_cast<long>(maze_.rows()) ||
        c >= static_cast<long>(maze_.cols())) {
      return SIZE_MAX;
    }
    return f[static_cast<std::size_t>(r) * maze_.cols() +
             static_cast<std::size_t>(c)];
  }

  const MazeSpec& maze_;
  std::map<std::pair<long, long>, std::vector<std::size_t>> fields_;
};

// One scripted episode. noise_scale is the stddev of Gaussian action noise.
// With goal_bias = 1 and zero noise this is the deterministic expert used for
// score references.
inline Trajectory scripted_episode(const MazeSpec& maze,
                                   WaypointController& ctrl,
                                   const BehaviorConfig& bc, double noise_scale,
                                   RngStream rng) {
  Trajectory tr;
  Vec4 s = sample_start(maze, rng);
  tr.states.push_back(s);
  auto goals = maze.cells_marked('G');
  auto frees = maze.free_cells();

  auto pick_target = [&]() -> std::pair<long, long> {
    if (rng.uniform() < bc.goal_bias) {
      return goals[static_cast<std::size_t>(rng.uniform_int(goals.size()))];
    }
    return frees[static_cast<std::size_t>(rng.uniform_int(frees.size()))];
  };
  std::pair<long, long> target = pick_target();
  std::size_t dwell_left = 0;

  for (std::size_t step = 0; step < maze.episode_length; ++step) {
    Vec2 a;
    if (dwell_left > 0) {
      --dwell_left;
      a = {-bc.kd * s[2], -bc.kd * s[3]};
      if (dwell_left == 0) target = pick_target();
    } else {
      if (ctrl.reached(s, target)) {
        dwell_left = 1 + rng.uniform_int(bc.dwell_max);
        a = {-bc.kd * s[2], -bc.kd * s[3]};
      } else {
        a = ctrl.act(s, target, bc);
      }
    }
    a[0] += noise_scale * rng.normal();
    a[1] += noise_scale * rng.normal();
    a[0] = clamp(a[0], -1.0, 1.0);
    a[1] = clamp(a[1], -1.0, 1.0);

    StepOut out = env_step(maze, s, a);
    tr.actions.push_back(a);
    tr.rewards.push_back(out.reward);
    tr.states.push_back(out.s_next);
    s = out.s_next;
    if (out.at_goal) break;
  }
  return tr;
}

inline Trajectory random_policy_episode(const MazeSpec& maze, RngStream rng) {
  Trajectory tr;
  Vec4 s = sample_start(maze, rng);
  tr.states.push_back(s);
  for (std::size_t step = 0; step < maze.episode_length; ++step) {
    Vec2 a{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    StepOut out = env_step(maze, s, a);
    tr.actions.push_back(a);
    tr.rewards.push_back(out.reward);
    tr.states.push_back(out.s_next);
    s = out.s_next;
    if (out.at_goal) break;
  }
  return tr;
}

// --- dataset generation -----------------------------------------------------------

struct GenConfig {
  std::size_t n_episodes = 80;
  double noise_level = 0.08;
  BehaviorConfig behavior;
};

// Mixture of goal-seeking and wandering episodes from the waypoint PD
// controller. Per-episode noise is noise_level scaled by U[0,2), so the
// corpus spans near-clean through doubly-noisy behaviour.
inline OfflineDataset generate_dataset(const MazeSpec& maze,
                                       const GenConfig& cfg,
                                       std::uint64_t seed) {
  if (cfg.n_episodes == 0) {
    throw ConfigError("generate_dataset: n_episodes must be positive");
  }
  maze.validate();
  OfflineDataset ds;
  ds.maze = maze;
  ds.seed = seed;
  ds.noise_level = cfg.noise_level;
  WaypointController ctrl(maze);
  RngStream root(seed);
  RngStream gen = root.derive("gen-data");
  for (std::size_t e = 0; e < cfg.n_episodes; ++e) {
    RngStream er = gen.derive(e);
    double noise = cfg.noise_level * er.derive("scale").uniform(0.0, 2.0);
    ds.trajectories.push_back(
        scripted_episode(maze, ctrl, cfg.behavior, noise, er.derive("run")));
  }

  // Fit per-dimension state statistics over every recorded state.
  Vec4 sum{0, 0, 0, 0}, sum2{0, 0, 0, 0};
  std::size_t n = 0;
  for (const auto& tr : ds.trajectories) {
    for (const auto& s : tr.states) {
      for (int i = 0; i < 4; ++i) {
        sum[i] += s[i];
        sum2[i] += s[i] * s[i];
      }
      ++n;
    }
  }
  for (int i = 0; i < 4; ++i) {
    ds.mu_s[i] = sum[i] / static_cast<double>(n);
    double var = sum2[i] / static_cast<double>(n) - ds.mu_s[i] * ds.mu_s[i];
    ds.sigma_s[i] = std::sqrt(std::max(var, 0.0));
    if (!(ds.sigma_s[i] > 0.0)) {
      throw ConfigError("generate_dataset: degenerate state dimension " +
                        std::to_string(i));
    }
  }
  return ds;
}

// --- dataset container ("SAGE-DATA-1") ---------------------------------------------

inline constexpr const char* kDatasetMagic = "SAGE-DATA-1";

inline void save_dataset(const std::filesystem::path& path,
                         const OfflineDataset& ds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  json lengths = json::array();
  for (const auto& tr : ds.trajectories) lengths.push_back(tr.length());
  json header = {{"maze", ds.maze.to_json()},
                 {"n_trajectories", ds.trajectories.size()},
                 {"lengths", lengths},
                 {"mu_s", ds.mu_s},
                 {"sigma_s", ds.sigma_s},
                 {"mu_z", ds.mu_z},
                 {"sigma_z", ds.sigma_z},
                 {"seed", ds.seed},
                 {"noise_level", ds.noise_level}};
  write_container_header(f, kDatasetMagic, header);
  for (const auto& tr : ds.trajectories) {
    for (const auto& s : tr.states) write_doubles(f, s.data(), 4);
    for (const auto& a : tr.actions) write_doubles(f, a.data(), 2);
    write_doubles(f, tr.rewards.data(), tr.rewards.size());
  }
  if (!f) throw IoError("write failed: " + path.string());
}

inline OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  json header = read_container_header(f, kDatasetMagic);
  OfflineDataset ds;
  ds.maze = MazeSpec::from_json(header.at("maze"));
  ds.mu_s = header.at("mu_s").get<Vec4>();
  ds.sigma_s = header.at("sigma_s").get<Vec4>();
  ds.mu_z = header.at("mu_z").get<std::vector<double>>();
  ds.sigma_z = header.at("sigma_z").get<std::vector<double>>();
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.noise_level = header.at("noise_level").get<double>();
  auto lengths = header.at("lengths").get<std::vector<std::size_t>>();
  for (std::size_t L : lengths) {
    Trajectory tr;
    tr.states.resize(L + 1);
    tr.actions.resize(L);
    tr.rewards.resize(L);
    for (auto& s : tr.states) read_doubles(f, s.data(), 4);
    for (auto& a : tr.actions) read_doubles(f, a.data(), 2);
    read_doubles(f, tr.rewards.data(), L);
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

// --- normalised scores --------------------------------------------------------------

struct ScoreRefs {
  double random_ref = 0.0;
  double expert_ref = 1.0;
};

// Mean returns of the uniform-random policy and the noise-free scripted
// expert, each over `episodes` rollouts.
inline ScoreRefs reference_returns(const MazeSpec& maze, std::size_t episodes,
                                   std::uint64_t seed) {
  WaypointController ctrl(maze);
  BehaviorConfig expert;
  expert.goal_bias = 1.0;
  expert.dwell_max = 1;
  RngStream root(seed);
  RngStream rr = root.derive("random-ref");
  RngStream er = root.derive("expert-ref");
  double rsum = 0.0, esum = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    rsum += random_policy_episode(maze, rr.derive(e)).episode_return();
    esum += scripted_episode(maze, ctrl, expert, 0.0, er.derive(e))
                .episode_return();
  }
  ScoreRefs refs;
  refs.random_ref = rsum / static_cast<double>(episodes);
  refs.expert_ref = esum / static_cast<double>(episodes);
  if (!(refs.expert_ref > refs.random_ref)) {
    throw ConfigError("reference_returns: expert does not beat random");
  }
  return refs;
}

inline std::vector<double> normalized_scores(const std::vector<double>& returns,
                                             const ScoreRefs& refs) {
  if (!(refs.expert_ref > refs.random_ref)) {
    throw ConfigError("normalized_scores: degenerate references");
  }
  std::vector<double> out;
  out.reserve(returns.size());
  for (double r : returns) {
    out.push_back(100.0 * (r - refs.random_ref) /
                  (refs.expert_ref - refs.random_ref));
  }
  return out;
}

}  // namespace sage
