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
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/common.hpp"
#include "sage/rng.hpp"

namespace sage {

using json = nlohmann::json;

using Vec2 = std::array<double, 2>;
using Vec4 = std::array<double, 4>;  // px, py, vx, vy

inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kActionDim = 2;

// Point-mass maze world on a unit-cell grid. '#' is wall, '.' free,
// 'S' start region, 'G' goal region. Cell (r, c) covers
// x in [c, c+1), y in [r, r+1); anything outside the grid counts as wall.
struct MazeSpec {
  std::vector<std::string> grid;
  double dt = 0.1;
  double max_speed = 1.0;
  std::size_t episode_length = 100;

  std::size_t rows() const { return grid.size(); }
  std::size_t cols() const { return grid.empty() ? 0 : grid[0].size(); }

  char cell(long r, long c) const {
    if (r < 0 || c < 0 || r >= static_cast<long>(rows()) ||
        c >= static_cast<long>(cols())) {
      return '#';
    }
    return grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  bool wall(long r, long c) const { return cell(r, c) == '#'; }
  bool free_cell(long r, long c) const { return !wall(r, c); }

  long cell_of_x(double x) const { return static_cast<long>(std::floor(x)); }
  long cell_of_y(double y) const { return static_cast<long>(std::floor(y)); }

  bool in_goal(double x, double y) const {
    return cell(cell_of_y(y), cell_of_x(x)) == 'G';
  }
  bool in_wall(double x, double y) const {
    return wall(cell_of_y(y), cell_of_x(x));
  }

  std::vector<std::pair<long, long>> cells_marked(char m) const {
    std::vector<std::pair<long, long>> out;
    for (long r = 0; r < static_cast<long>(rows()); ++r) {
      for (long c = 0; c < static_cast<long>(cols()); ++c) {
        if (cell(r, c) == m) out.emplace_back(r, c);
      }
    }
    return out;
  }

  std::vector<std::pair<long, long>> free_cells() const {
    std::vector<std::pair<long, long>> out;
    for (long r = 0; r < static_cast<long>(rows()); ++r) {
      for (long c = 0; c < static_cast<long>(cols()); ++c) {
        if (free_cell(r, c)) out.emplace_back(r, c);
      }
    }
    return out;
  }

  // BFS distance field (in cells) from a target cell; walls get SIZE_MAX.
  std::vector<std::size_t> distance_field(long tr, long tc) const {
    const std::size_t R = rows(), C = cols();
    std::vector<std::size_t> dist(R * C, SIZE_MAX);
    if (!free_cell(tr, tc)) return dist;
    std::deque<std::pair<long, long>> q;
    dist[static_cast<std::size_t>(tr) * C + static_cast<std::size_t>(tc)] = 0;
    q.emplace_back(tr, tc);
    const long dr[4] = {1, -1, 0, 0};
    const long dc[4] = {0, 0, 1, -1};
    while (!q.empty()) {
      auto [r, c] = q.front();
      q.pop_front();
      std::size_t d = dist[static_cast<std::size_t>(r) * C +
                           static_cast<std::size_t>(c)];
      for (int k = 0; k < 4; ++k) {
        long nr = r + dr[k], nc = c + dc[k];
        if (!free_cell(nr, nc)) continue;
        std::size_t& nd = dist[static_cast<std::size_t>(nr) * C +
                               static_cast<std::size_t>(nc)];
        if (nd == SIZE_MAX) {
          nd = d + 1;
          q.emplace_back(nr, nc);
        }
      }
    }
    return dist;
  }

  void validate() const {
    if (grid.empty()) throw ConfigError("maze: empty grid");
    for (const auto& row : grid) {
      if (row.size() != cols()) throw ConfigError("maze: ragged grid");
    }
    auto starts = cells_marked('S');
    auto goals = cells_marked('G');
    if (starts.empty()) throw ConfigError("maze: no start region");
    if (goals.empty()) throw ConfigError("maze: no goal region");
    if (dt <= 0.0 || max_speed <= 0.0 || episode_length == 0) {
      throw ConfigError("maze: dt, max_speed, episode_length must be positive");
    }
    // Start must reach goal.
    auto dist = distance_field(goals[0].first, goals[0].second);
    for (auto [r, c] : starts) {
      if (dist[static_cast<std::size_t>(r) * cols() +
               static_cast<std::size_t>(c)] == SIZE_MAX) {
        throw ConfigError("maze: goal unreachable from start");
      }
    }
  }

  json to_json() const {
    return json{{"grid", grid},
                {"dt", dt},
                {"max_speed", max_speed},
                {"episode_length", episode_length}};
  }
  static MazeSpec from_json(const json& j) {
    MazeSpec m;
    m.grid = j.at("grid").get<std::vector<std::string>>();
    m.dt = j.at("dt").get<double>();
    m.max_speed = j.at("max_speed").get<double>();
    m.episode_length = j.at("episode_length").get<std::size_t>();
    return m;
  }
};

// Built-in layouts. "rooms" is the default working maze; "corridor" is the
// degenerate straight hallway used by closed-form tests.
inline MazeSpec make_maze(const std::string& name) {
  MazeSpec m;
  m.max_speed = 1.5;
  if (name == "corridor") {
    m.grid = {
        "#######",
        "#S...G#",
        "#######",
    };
    m.episode_length = 80;
  } else if (name == "umaze") {
    m.grid = {
        "#######",
        "#S#..G#",
        "#.#.###",
        "#.#.###",
        "#...###",
        "#######",
    };
    m.episode_length = 100;
  } else if (name == "rooms") {
    m.grid = {
        "########",
        "#S..#..#",
        "#.#.#.##",
        "#.#....#",
        "#.###.##",
        "#...#.G#",
        "##.##.##",
        "########",
    };
    m.max_speed = 2.0;
    m.episode_length = 70;
  } else {
    throw ConfigError("unknown maze name: " + name);
  }
  m.validate();
  return m;
}

struct StepOut {
  Vec4 s_next;
  double reward = 0.0;
  bool at_goal = false;
};

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// Semi-implicit Euler with per-component velocity clamping. Walls are
// axis-aligned: each axis moves independently; on penetration the position is
// projected back to the wall surface and the normal velocity component is
// zeroed. Actions are accelerations clipped to [-1, 1].
inline StepOut env_step(const MazeSpec& maze, const Vec4& s, const Vec2& a_in) {
  for (double x : s) check_finite(x, "env_step state");
  for (double x : a_in) check_finite(x, "env_step action");
  const double kSkin = 1e-9;
  Vec2 a{clamp(a_in[0], -1.0, 1.0), clamp(a_in[1], -1.0, 1.0)};
  double vx = clamp(s[2] + a[0] * maze.dt, -maze.max_speed, maze.max_speed);
  double vy = clamp(s[3] + a[1] * maze.dt, -maze.max_speed, maze.max_speed);
  double px = s[0], py = s[1];

  // X axis.
  double nx = px + vx * maze.dt;
  if (maze.in_wall(nx, py)) {
    long wc = maze.cell_of_x(nx);
    nx = vx > 0.0 ? static_cast<double>(wc) - kSkin
                  : static_cast<double>(wc + 1) + kSkin;
    vx = 0.0;
  }
  // Y axis, from the resolved x position.
  double ny = py + vy * maze.dt;
  if (maze.in_wall(nx, ny)) {
    long wr = maze.cell_of_y(ny);
    ny = vy > 0.0 ? static_cast<double>(wr) - kSkin
                  : static_cast<double>(wr + 1) + kSkin;
    vy = 0.0;
  }

  StepOut out;
  out.s_next = {nx, ny, vx, vy};
  out.at_goal = maze.in_goal(nx, ny);
  out.reward = out.at_goal ? 1.0 : 0.0;
  return out;
}

// Random rest state inside the start region.
inline Vec4 sample_start(const MazeSpec& maze, RngStream& rng) {
  auto starts = maze.cells_marked('S');
  auto [r, c] = starts[static_cast<std::size_t>(
      rng.uniform_int(starts.size()))];
  double x = static_cast<double>(c) + rng.uniform(0.2, 0.8);
  double y = static_cast<double>(r) + rng.uniform(0.2, 0.8);
  return {x, y, 0.0, 0.0};
}

}  // namespace sage
