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

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "sage/dataset.hpp"
#include "sage/graph.hpp"
#include "sage/nn.hpp"
#include "sage/optim.hpp"

namespace sage {

// Horizon-H plan in normalised state space. The first state always equals
// the conditioning state exactly; actions are filled front-to-back by the
// inverse dynamics model as far as the consumer needs them.
struct CandidatePlan {
  Tensor states;   // [H+1, dim_s]
  Tensor actions;  // [H, dim_a]
  std::size_t actions_filled = 0;
  double score_j = 0.0;
  double energy = 0.0;

  std::size_t horizon() const { return states.dim(0) - 1; }
};

// --- cosine noise schedule ----------------------------------------------------

struct NoiseSchedule {
  std::vector<double> alpha_bar;  // [T+1], alpha_bar[0] = 1

  explicit NoiseSchedule(std::size_t t_steps) {
    const double s = 0.008;
    auto f = [&](double t) {
      double v = std::cos((t / static_cast<double>(t_steps) + s) / (1.0 + s) *
                          M_PI / 2.0);
      return v * v;
    };
    alpha_bar.resize(t_steps + 1);
    double f0 = f(0.0);
    for (std::size_t t = 0; t <= t_steps; ++t) {
      alpha_bar[t] = f(static_cast<double>(t)) / f0;
    }
  }

  std::size_t t_max() const { return alpha_bar.size() - 1; }
};

// Sinusoidal features of a diffusion timestep, projected by a learned layer
// inside the network.
inline Tensor timestep_features(double t, std::size_t dim) {
  Tensor out({dim});
  std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                           static_cast<double>(half));
    out.v[i] = std::sin(t * freq);
    out.v[half + i] = std::cos(t * freq);
  }
  return out;
}

// --- diffusion planner -----------------------------------------------------------

struct PlannerConfig {
  std::size_t horizon = 32;     // H
  std::size_t t_train = 100;    // diffusion timesteps
  std::size_t ddim_steps = 20;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double temperature = 1.0;     // initial-noise scale at sampling
  double ema_rate = 0.995;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  OptimConfig optim{2e-4, 1e-6, 100, 2000, 0.9, 0.999, 1e-8, 1e-4, 1.0};

  TransformerDef tf_def() const {
    return TransformerDef{"pl.tf", hidden, layers, heads, 4};
  }
};

// Epsilon-prediction 1D transformer over the state window; the first row is
// inpainted with the clean conditioning state at train and sampling time.
struct PlannerModel {
  PlannerConfig cfg;
  ParameterStore params;
  ParameterStore ema;  // used at inference
  bool trained = false;
};

inline PlannerModel planner_init(const PlannerConfig& cfg, RngStream rng) {
  PlannerModel m;
  m.cfg = cfg;
  dense_register(m.params, "pl.embed", kStateDim, cfg.hidden,
                 rng.derive("embed"));
  init_embedding(m.params.create("pl.pos", {cfg.horizon + 1, cfg.hidden}),
                 rng.derive("pos"));
  dense_register(m.params, "pl.temb", cfg.hidden, cfg.hidden,
                 rng.derive("temb"));
  transformer_register(m.params, cfg.tf_def(), rng.derive("tf"));
  dense_register(m.params, "pl.head", cfg.hidden, kStateDim,
                 rng.derive("head"));
  m.ema = m.params.clone();
  return m;
}

// Graph forward: noisy window [B, H+1, dim_s] + timestep features -> epsilon.
inline Var planner_eps(Graph& g, const ParameterStore& ps,
                       const PlannerConfig& cfg, Var x_noisy,
                       const Tensor& tfeat, bool trainable) {
  std::size_t tokens = cfg.horizon + 1;
  Var tok = dense(g, ps, "pl.embed", x_noisy, trainable);
  std::vector<std::size_t> pos(tokens);
  for (std::size_t i = 0; i < tokens; ++i) pos[i] = i;
  tok = g.add(tok, g.embed(leaf(g, ps, "pl.pos", trainable), pos));
  Var temb = dense(g, ps, "pl.temb", g.gelu(g.input(tfeat)), trainable);
  tok = g.add(tok, temb);
  Var h = transformer_apply(g, ps, cfg.tf_def(), tok, nullptr, trainable);
  return dense(g, ps, "pl.head", h, trainable);
}

// Tape-free forward for sampling, on the EMA weights.
inline Tensor planner_eps_raw(const ParameterStore& ps,
                              const PlannerConfig& cfg, const Tensor& x_noisy,
                              const Tensor& tfeat) {
  std::size_t b = x_noisy.dim(0), tokens = cfg.horizon + 1;
  Tensor tok = raw_dense(ps, "pl.embed", x_noisy);
  const Tensor& pos = ps.at("pl.pos");
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < cfg.hidden; ++j) {
        tok.v[(i * tokens + t) * cfg.hidden + j] += pos.v[t * cfg.hidden + j];
      }
    }
  }
  Tensor tf = tfeat;
  raw_gelu_inplace(tf);
  Tensor temb = raw_dense(ps, "pl.temb", tf);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < cfg.hidden; ++j) {
        tok.v[(i * tokens + t) * cfg.hidden + j] += temb.v[j];
      }
    }
  }
  Tensor h = raw_transformer(ps, cfg.tf_def(), tok, nullptr);
  return raw_dense(ps, "pl.head", h);
}

struct PlannerTrainLog {
  std::vector<double> losses;
  std::vector<std::string> csv_rows;
};

// Standard denoising objective on normalised state windows with the first
// state held fixed; rows 1..H carry the loss.
inline PlannerTrainLog train_planner(PlannerModel& m, const OfflineDataset& ds,
                                     RngStream rng) {
  const PlannerConfig& cfg = m.cfg;
  std::size_t hp1 = cfg.horizon + 1;
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    if (tr.states.size() < hp1) continue;
    for (std::size_t t = 0; t + hp1 <= tr.states.size(); ++t) {
      windows.emplace_back(i, t);
    }
  }
  if (windows.empty()) {
    throw ConfigError("train_planner: no window of length H+1 in dataset");
  }
  NoiseSchedule sched(cfg.t_train);
  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  PlannerTrainLog log;
  RngStream data_rng = rng.derive("batches");
  char row[128];

  Tensor loss_mask({hp1, kStateDim});
  for (std::size_t t = 1; t < hp1; ++t) {
    for (std::size_t d = 0; d < kStateDim; ++d) {
      loss_mask.v[t * kStateDim + d] = 1.0;
    }
  }

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    RngStream sr = data_rng.derive(step);
    std::size_t tstep = 1 + sr.uniform_int(cfg.t_train);
    double ab = sched.alpha_bar[tstep];
    Tensor x0({cfg.batch, hp1, kStateDim});
    Tensor eps({cfg.batch, hp1, kStateDim});
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      auto [traj, t0] = windows[sr.uniform_int(windows.size())];
      const Trajectory& tr = ds.trajectories[traj];
      for (std::size_t t = 0; t < hp1; ++t) {
        Vec4 z = ds.normalize(tr.states[t0 + t]);
        for (std::size_t d = 0; d < kStateDim; ++d) {
          x0.v[(i * hp1 + t) * kStateDim + d] = z[d];
        }
      }
    }
    for (double& e : eps.v) e = sr.normal();
    Tensor xt = x0;
    for (std::size_t i = 0; i < xt.numel(); ++i) {
      xt.v[i] = std::sqrt(ab) * x0.v[i] + std::sqrt(1.0 - ab) * eps.v[i];
    }
    // Inpainting-style conditioning: the first row stays clean.
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      for (std::size_t d = 0; d < kStateDim; ++d) {
        xt.v[i * hp1 * kStateDim + d] = x0.v[i * hp1 * kStateDim + d];
      }
    }
    Graph g;
    Var eps_hat = planner_eps(g, m.params, cfg,
                              g.input(xt),
                              timestep_features(static_cast<double>(tstep),
                                                cfg.hidden),
                              true);
    Var diff = g.sub(eps_hat, g.input(eps));
    Var masked = g.mul(g.square(diff), g.input(loss_mask));
    Var loss = g.scale(g.sum_all(masked),
                       1.0 / static_cast<double>(cfg.batch * cfg.horizon *
                                                 kStateDim));
    double lv = g.scalar(loss);
    if (!std::isfinite(lv)) {
      throw NumericError("train_planner: non-finite loss at step " +
                         std::to_string(step));
    }
    GradMap grads = g.backward(loss);
    opt.step(m.params, grads);
    ema_update(m.ema, m.params, cfg.ema_rate);
    log.losses.push_back(lv);
    std::snprintf(row, sizeof row, "%zu,%.8g,%.8g", step,
                  opt.current_lr(m.params), lv);
    log.csv_rows.emplace_back(row);
  }
  m.trained = true;
  return log;
}

// DDIM (eta = 0) over an evenly spaced timestep subsequence, first state
// clamped at every denoising step. Returns C plans with states only.
inline std::vector<CandidatePlan> ddim_sample(const PlannerModel& m,
                                              const Vec4& s_norm,
                                              std::size_t candidates,
                                              std::size_t steps,
                                              RngStream rng) {
  if (!m.trained) throw ConfigError("ddim_sample: planner not trained");
  const PlannerConfig& cfg = m.cfg;
  if (steps == 0 || steps > cfg.t_train) {
    throw ConfigError("ddim_sample: steps must lie in [1, T]");
  }
  NoiseSchedule sched(cfg.t_train);
  std::size_t hp1 = cfg.horizon + 1;
  Tensor x({candidates, hp1, kStateDim});
  for (double& v : x.v) v = cfg.temperature * rng.normal();
  auto clamp_first = [&](Tensor& xt) {
    for (std::size_t i = 0; i < candidates; ++i) {
      for (std::size_t d = 0; d < kStateDim; ++d) {
        xt.v[i * hp1 * kStateDim + d] = s_norm[d];
      }
    }
  };
  clamp_first(x);
  for (std::size_t i = steps; i >= 1; --i) {
    std::size_t t_cur = (i * cfg.t_train) / steps;
    std::size_t t_prev = ((i - 1) * cfg.t_train) / steps;
    double ab = sched.alpha_bar[t_cur];
    double ab_prev = sched.alpha_bar[t_prev];
    Tensor eps = planner_eps_raw(
        m.ema, cfg, x, timestep_features(static_cast<double>(t_cur), cfg.hidden));
    for (std::size_t j = 0; j < x.numel(); ++j) {
      double x0 = (x.v[j] - std::sqrt(1.0 - ab) * eps.v[j]) / std::sqrt(ab);
      x.v[j] = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps.v[j];
    }
    clamp_first(x);
  }
  std::vector<CandidatePlan> plans(candidates);
  for (std::size_t i = 0; i < candidates; ++i) {
    plans[i].states = Tensor({hp1, kStateDim});
    for (std::size_t j = 0; j < hp1 * kStateDim; ++j) {
      plans[i].states.v[j] = x.v[i * hp1 * kStateDim + j];
    }
    plans[i].actions = Tensor({cfg.horizon, kActionDim});
  }
  return plans;
}

// --- replay-perturbation generator --------------------------------------------------

// Gate-isolation generator: nearest dataset windows by start state, spliced
// to the conditioning state, plus Gaussian state noise on rows 1..H.
class ReplayGenerator {
 public:
  ReplayGenerator(const OfflineDataset& ds, std::size_t horizon)
      : ds_(ds), horizon_(horizon) {
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
      const auto& tr = ds.trajectories[i];
      if (tr.states.size() < horizon + 1) continue;
      for (std::size_t t = 0; t + horizon + 1 <= tr.states.size(); ++t) {
        starts_.emplace_back(i, t);
        Vec4 z = ds.normalize(tr.states[t]);
        for (double v : z) start_states_.push_back(v);
      }
    }
    if (starts_.empty()) {
      throw ConfigError("replay_generate: no window of length H in dataset");
    }
  }

  std::size_t window_count() const { return starts_.size(); }

  std::vector<CandidatePlan> generate(const Vec4& s_norm, std::size_t c,
                                      double noise, RngStream rng) const {
    std::vector<std::size_t> order(starts_.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(starts_.size());
    for (std::size_t i = 0; i < starts_.size(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < kStateDim; ++j) {
        double dd = start_states_[i * kStateDim + j] - s_norm[j];
        d += dd * dd;
      }
      dist[i] = d;
    }
    std::size_t take = std::min<std::size_t>(c, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(take),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                      });
    std::vector<CandidatePlan> plans(c);
    for (std::size_t i = 0; i < c; ++i) {
      auto [traj, t0] = starts_[order[i % take]];  // wrap = with replacement
      const Trajectory& tr = ds_.trajectories[traj];
      CandidatePlan& p = plans[i];
      p.states = Tensor({horizon_ + 1, kStateDim});
      p.actions = Tensor({horizon_, kActionDim});
      for (std::size_t t = 0; t <= horizon_; ++t) {
        Vec4 z = ds_.normalize(tr.states[t0 + t]);
        for (std::size_t d = 0; d < kStateDim; ++d) {
          p.states.v[t * kStateDim + d] = z[d];
        }
      }
      for (std::size_t d = 0; d < kStateDim; ++d) {
        p.states.v[d] = s_norm[d];  // splice the conditioning state
      }
      if (noise > 0.0) {
        for (std::size_t t = 1; t <= horizon_; ++t) {
          for (std::size_t d = 0; d < kStateDim; ++d) {
            p.states.v[t * kStateDim + d] += noise * rng.normal();
          }
        }
      }
    }
    return plans;
  }

 private:
  const OfflineDataset& ds_;
  std::size_t horizon_;
  std::vector<std::pair<std::size_t, std::size_t>> starts_;
  std::vector<double> start_states_;
};

// --- inverse dynamics -----------------------------------------------------------------

struct InvDynConfig {
  bool diffusion_mode = false;  // default: MLP regressor
  std::size_t hidden = 128;
  std::size_t steps = 3000;
  std::size_t batch = 128;
  // DDPM variant
  std::size_t ddpm_steps = 10;
  double sample_temperature = 0.5;
  double ema_rate = 0.995;
  OptimConfig optim{1e-3, 1e-6, 100, 3000, 0.9, 0.999, 1e-8, 1e-4, 1.0};

  MlpDef mlp_def() const {
    return MlpDef{"inv.mlp", {2 * kStateDim, hidden, hidden, kActionDim}};
  }
  MlpDef eps_def() const {
    // input: [a_noisy, t_feature, s_t, s_t+1]
    return MlpDef{"inv.eps",
                  {kActionDim + 8 + 2 * kStateDim, hidden, hidden, kActionDim}};
  }
};

struct InvDynModel {
  InvDynConfig cfg;
  ParameterStore params;
  ParameterStore ema;
  bool trained = false;
};

inline InvDynModel invdyn_init(const InvDynConfig& cfg, RngStream rng) {
  InvDynModel m;
  m.cfg = cfg;
  if (cfg.diffusion_mode) {
    mlp_register(m.params, cfg.eps_def(), rng.derive("eps"));
  } else {
    mlp_register(m.params, cfg.mlp_def(), rng.derive("mlp"));
  }
  m.ema = m.params.clone();
  return m;
}

struct InvDynTrainLog {
  std::vector<double> losses;
};

inline InvDynTrainLog train_invdyn(InvDynModel& m, const OfflineDataset& ds,
                                   RngStream rng) {
  const InvDynConfig& cfg = m.cfg;
  std::vector<std::pair<std::size_t, std::size_t>> transitions;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    for (std::size_t t = 0; t < ds.trajectories[i].length(); ++t) {
      transitions.emplace_back(i, t);
    }
  }
  if (transitions.empty()) throw ConfigError("train_invdyn: empty dataset");
  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  InvDynTrainLog log;
  NoiseSchedule sched(cfg.ddpm_steps);
  RngStream data_rng = rng.derive("batches");
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    RngStream sr = data_rng.derive(step);
    Tensor cond({cfg.batch, 2 * kStateDim});
    Tensor target({cfg.batch, kActionDim});
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      auto [traj, t] = transitions[sr.uniform_int(transitions.size())];
      const Trajectory& tr = ds.trajectories[traj];
      Vec4 s0 = ds.normalize(tr.states[t]);
      Vec4 s1 = ds.normalize(tr.states[t + 1]);
      for (std::size_t d = 0; d < kStateDim; ++d) {
        cond.v[i * 8 + d] = s0[d];
        cond.v[i * 8 + 4 + d] = s1[d];
      }
      for (std::size_t d = 0; d < kActionDim; ++d) {
        target.v[i * 2 + d] = tr.actions[t][d];
      }
    }
    Graph g;
    Var loss{-1};
    if (cfg.diffusion_mode) {
      std::size_t tstep = 1 + sr.uniform_int(cfg.ddpm_steps);
      double ab = sched.alpha_bar[tstep];
      Tensor eps({cfg.batch, kActionDim});
      for (double& e : eps.v) e = sr.normal();
      Tensor a_noisy = target;
      for (std::size_t i = 0; i < a_noisy.numel(); ++i) {
        a_noisy.v[i] =
            std::sqrt(ab) * target.v[i] + std::sqrt(1.0 - ab) * eps.v[i];
      }
      Tensor tf = timestep_features(static_cast<double>(tstep), 8);
      Tensor in({cfg.batch, kActionDim + 8 + 2 * kStateDim});
      for (std::size_t i = 0; i < cfg.batch; ++i) {
        double* row = in.data() + i * in.last();
        for (std::size_t d = 0; d < kActionDim; ++d) row[d] = a_noisy.v[i * 2 + d];
        for (std::size_t d = 0; d < 8; ++d) row[kActionDim + d] = tf.v[d];
        for (std::size_t d = 0; d < 2 * kStateDim; ++d) {
          row[kActionDim + 8 + d] = cond.v[i * 8 + d];
        }
      }
      Var eps_hat = mlp_apply(g, m.params, cfg.eps_def(), g.input(in), true);
      loss = g.mean_all(g.square(g.sub(eps_hat, g.input(eps))));
    } else {
      Var pred = mlp_apply(g, m.params, cfg.mlp_def(), g.input(cond), true);
      loss = g.mean_all(g.square(g.sub(pred, g.input(target))));
    }
    double lv = g.scalar(loss);
    if (!std::isfinite(lv)) {
      throw NumericError("train_invdyn: non-finite loss at step " +
                         std::to_string(step));
    }
    GradMap grads = g.backward(loss);
    opt.step(m.params, grads);
    ema_update(m.ema, m.params, cfg.ema_rate);
    log.losses.push_back(lv);
  }
  m.trained = true;
  return log;
}

// Actions for consecutive normalised state pairs: [N, 2*dim_s] -> [N, dim_a],
// clipped to the action bounds.
inline Tensor invdyn_actions(const InvDynModel& m, const Tensor& pairs,
                             RngStream rng) {
  if (!m.trained) throw ConfigError("invdyn_actions: model not trained");
  const InvDynConfig& cfg = m.cfg;
  Tensor out;
  if (!cfg.diffusion_mode) {
    out = raw_mlp(m.ema, cfg.mlp_def(), pairs);
  } else {
    std::size_t n = pairs.rows();
    NoiseSchedule sched(cfg.ddpm_steps);
    Tensor a({n, kActionDim});
    for (double& v : a.v) v = rng.normal();
    for (std::size_t t = cfg.ddpm_steps; t >= 1; --t) {
      double ab = sched.alpha_bar[t];
      double ab_prev = sched.alpha_bar[t - 1];
      double alpha_t = ab / ab_prev;
      double beta_t = 1.0 - alpha_t;
      Tensor tf = timestep_features(static_cast<double>(t), 8);
      Tensor in({n, kActionDim + 8 + 2 * kStateDim});
      for (std::size_t i = 0; i < n; ++i) {
        double* row = in.data() + i * in.last();
        for (std::size_t d = 0; d < kActionDim; ++d) row[d] = a.v[i * 2 + d];
        for (std::size_t d = 0; d < 8; ++d) row[kActionDim + d] = tf.v[d];
        for (std::size_t d = 0; d < 2 * kStateDim; ++d) {
          row[kActionDim + 8 + d] = pairs.v[i * 8 + d];
        }
      }
      Tensor eps = raw_mlp(m.ema, cfg.eps_def(), in);
      double sigma = t > 1 ? std::sqrt(beta_t * (1.0 - ab_prev) / (1.0 - ab))
                           : 0.0;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        double mean = (a.v[i] - beta_t / std::sqrt(1.0 - ab) * eps.v[i]) /
                      std::sqrt(alpha_t);
        double z = t > 1 ? rng.normal() : 0.0;
        a.v[i] = mean + cfg.sample_temperature * sigma * z;
      }
    }
    out = a;
  }
  for (double& v : out.v) v = clamp(v, -1.0, 1.0);
  return out;
}

// Fill the first `count` actions of each plan from consecutive plan states.
inline void infer_actions(const InvDynModel& m, std::vector<CandidatePlan>& plans,
                          std::size_t count, RngStream rng) {
  if (plans.empty()) return;
  std::size_t h = plans[0].horizon();
  count = std::min(count, h);
  Tensor pairs({plans.size() * count, 2 * kStateDim});
  for (std::size_t i = 0; i < plans.size(); ++i) {
    for (std::size_t k = 0; k < count; ++k) {
      double* row = pairs.data() + (i * count + k) * 2 * kStateDim;
      for (std::size_t d = 0; d < kStateDim; ++d) {
        row[d] = plans[i].states.v[k * kStateDim + d];
        row[kStateDim + d] = plans[i].states.v[(k + 1) * kStateDim + d];
      }
    }
  }
  Tensor acts = invdyn_actions(m, pairs, rng);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    for (std::size_t k = 0; k < count; ++k) {
      for (std::size_t d = 0; d < kActionDim; ++d) {
        plans[i].actions.v[k * kActionDim + d] =
            acts.v[(i * count + k) * kActionDim + d];
      }
    }
    plans[i].actions_filled = count;
  }
}

// --- critic ----------------------------------------------------------------------------

struct CriticConfig {
  std::size_t horizon = 32;
  std::size_t hidden = 128;
  double gamma = 0.997;
  std::size_t steps = 1500;
  std::size_t batch = 128;
  OptimConfig optim{3e-4, 1e-6, 100, 1500, 0.9, 0.999, 1e-8, 1e-4, 1.0};

  MlpDef mlp_def() const {
    return MlpDef{"cr.mlp", {(horizon + 1) * kStateDim, hidden, hidden, 1}};
  }
};

// Discounted return-to-go regressor on flattened normalised state windows.
struct CriticModel {
  CriticConfig cfg;
  ParameterStore params;
  bool trained = false;
};

inline CriticModel critic_init(const CriticConfig& cfg, RngStream rng) {
  CriticModel m;
  m.cfg = cfg;
  mlp_register(m.params, cfg.mlp_def(), rng.derive("mlp"));
  return m;
}

struct CriticTrainLog {
  std::vector<double> losses;
  std::vector<double> holdout_losses;  // evaluated every 100 steps
};

inline CriticTrainLog train_critic(CriticModel& m, const OfflineDataset& ds,
                                   RngStream rng) {
  const CriticConfig& cfg = m.cfg;
  std::size_t hp1 = cfg.horizon + 1;
  // Precompute discounted return-to-go per state index.
  std::vector<std::vector<double>> rtg(ds.trajectories.size());
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    rtg[i].assign(tr.states.size(), 0.0);
    for (std::size_t t = tr.length(); t-- > 0;) {
      rtg[i][t] = tr.rewards[t] + cfg.gamma * rtg[i][t + 1];
    }
    if (tr.states.size() < hp1) continue;
    for (std::size_t t = 0; t + hp1 <= tr.states.size(); ++t) {
      windows.emplace_back(i, t);
    }
  }
  if (windows.empty()) throw ConfigError("train_critic: no training windows");
  // Last 10% of windows (by index) held out for generalisation tracking.
  std::size_t holdout_from = windows.size() - windows.size() / 10;

  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  CriticTrainLog log;
  RngStream data_rng = rng.derive("batches");

  auto fill_batch = [&](std::size_t lo, std::size_t hi, std::size_t n,
                        RngStream& sr, Tensor& x, Tensor& y) {
    x = Tensor({n, hp1 * kStateDim});
    y = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      auto [traj, t] = windows[lo + sr.uniform_int(hi - lo)];
      const Trajectory& tr = ds.trajectories[traj];
      for (std::size_t s = 0; s < hp1; ++s) {
        Vec4 z = ds.normalize(tr.states[t + s]);
        for (std::size_t d = 0; d < kStateDim; ++d) {
          x.v[i * hp1 * kStateDim + s * kStateDim + d] = z[d];
        }
      }
      y.v[i] = rtg[traj][t];
    }
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    RngStream sr = data_rng.derive(step);
    Tensor x, y;
    fill_batch(0, holdout_from, cfg.batch, sr, x, y);
    Graph g;
    Var pred = mlp_apply(g, m.params, cfg.mlp_def(), g.input(x), true);
    Var loss = g.mean_all(g.square(g.sub(pred, g.input(y))));
    double lv = g.scalar(loss);
    if (!std::isfinite(lv)) {
      throw NumericError("train_critic: non-finite loss at step " +
                         std::to_string(step));
    }
    GradMap grads = g.backward(loss);
    opt.step(m.params, grads);
    log.losses.push_back(lv);
    if (step % 100 == 0 && holdout_from < windows.size()) {
      RngStream hr = data_rng.derive("holdout").derive(step);
      Tensor hx, hy;
      fill_batch(holdout_from, windows.size(), 256, hr, hx, hy);
      Tensor hp = raw_mlp(m.params, cfg.mlp_def(), hx);
      double hl = 0.0;
      for (std::size_t i = 0; i < hp.numel(); ++i) {
        double d = hp.v[i] - hy.v[i];
        hl += d * d;
      }
      log.holdout_losses.push_back(hl / static_cast<double>(hp.numel()));
    }
  }
  m.trained = true;
  return log;
}

// Deterministic plan scores: higher is preferred. Scoring runs on the
// row-pure kernel so a score is a bitwise-pure function of the plan,
// independent of pool composition or position.
inline void critic_score(const CriticModel& m, std::vector<CandidatePlan>& plans) {
  if (!m.trained) throw ConfigError("critic_score: model not trained");
  if (plans.empty()) return;
  std::size_t hp1 = m.cfg.horizon + 1;
  Tensor x({plans.size(), hp1 * kStateDim});
  for (std::size_t i = 0; i < plans.size(); ++i) {
    for (std::size_t j = 0; j < hp1 * kStateDim; ++j) {
      x.v[i * hp1 * kStateDim + j] = plans[i].states.v[j];
    }
  }
  Tensor y = raw_mlp(m.params, m.cfg.mlp_def(), x, /*row_pure=*/true);
  for (std::size_t i = 0; i < plans.size(); ++i) plans[i].score_j = y.v[i];
}

// --- candidate pool container ("SAGE-POOL-1") --------------------------------------------

inline constexpr const char* kPoolMagic = "SAGE-POOL-1";

inline void save_pool(const std::filesystem::path& path, const Vec4& s_norm,
                      const std::vector<CandidatePlan>& plans,
                      const std::string& generator_kind) {
  if (plans.empty()) throw ConfigError("save_pool: empty pool");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path.string());
  json header = {{"candidates", plans.size()},
                 {"horizon", plans[0].horizon()},
                 {"dim_s", kStateDim},
                 {"dim_a", kActionDim},
                 {"s_norm", s_norm},
                 {"generator", generator_kind}};
  write_container_header(f, kPoolMagic, header);
  for (const auto& p : plans) {
    write_doubles(f, p.states.data(), p.states.numel());
    write_doubles(f, p.actions.data(), p.actions.numel());
    double meta[3] = {static_cast<double>(p.actions_filled), p.score_j,
                      p.energy};
    write_doubles(f, meta, 3);
  }
  if (!f) throw IoError("write failed: " + path.string());
}

struct PoolFile {
  Vec4 s_norm;
  std::vector<CandidatePlan> plans;
  std::string generator_kind;
};

inline PoolFile load_pool(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  json header = read_container_header(f, kPoolMagic);
  PoolFile out;
  out.s_norm = header.at("s_norm").get<Vec4>();
  out.generator_kind = header.at("generator").get<std::string>();
  std::size_t c = header.at("candidates").get<std::size_t>();
  std::size_t h = header.at("horizon").get<std::size_t>();
  out.plans.resize(c);
  for (auto& p : out.plans) {
    p.states = Tensor({h + 1, kStateDim});
    p.actions = Tensor({h, kActionDim});
    read_doubles(f, p.states.data(), p.states.numel());
    read_doubles(f, p.actions.data(), p.actions.numel());
    double meta[3];
    read_doubles(f, meta, 3);
    p.actions_filled = static_cast<std::size_t>(meta[0]);
    p.score_j = meta[1];
    p.energy = meta[2];
  }
  return out;
}

}  // namespace sage
