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
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sage/gate.hpp"
#include "sage/stats.hpp"

namespace sage {

// --- corruption ---------------------------------------------------------------

struct CorruptionSpec {
  std::size_t t0 = 0;
  std::size_t t1 = 0;  // exclusive; window covers actions t0..t1-1
};

// Uniformly permute the actions inside [t0, t1); states and rewards are left
// untouched, so the corrupted segment keeps marginal action realism while
// breaking temporal alignment.
inline Trajectory corrupt_episode(const Trajectory& tr,
                                  const CorruptionSpec& win, RngStream rng) {
  if (win.t1 > tr.length() || win.t0 >= win.t1) {
    throw ConfigError("corrupt_episode: bad window");
  }
  if (win.t1 - win.t0 < 2) {
    throw ConfigError("corrupt_episode: window must span at least 2 actions");
  }
  Trajectory out = tr;
  std::vector<std::size_t> pi = rng.permutation(win.t1 - win.t0);
  for (std::size_t i = 0; i < pi.size(); ++i) {
    out.actions[win.t0 + i] = tr.actions[win.t0 + pi[i]];
  }
  return out;
}

inline CorruptionSpec sample_corruption_window(const Trajectory& tr,
                                               std::size_t min_len,
                                               std::size_t max_len,
                                               RngStream& rng) {
  std::size_t L = tr.length();
  if (L < min_len) throw ConfigError("corruption window: episode too short");
  std::size_t len = std::min(max_len, L);
  len = min_len + rng.uniform_int(len - min_len + 1);
  std::size_t t0 = rng.uniform_int(L - len + 1);
  return {t0, t0 + len};
}

// Per-step latent-consistency energies e_t over a full recorded trajectory.
inline std::vector<double> energy_trace(const EnergyModel& em,
                                        const OfflineDataset& ds,
                                        const Trajectory& tr) {
  std::size_t L = tr.length();
  Tensor states({L + 1, kStateDim});
  for (std::size_t t = 0; t <= L; ++t) {
    Vec4 z = ds.normalize(tr.states[t]);
    for (std::size_t d = 0; d < kStateDim; ++d) states.v[t * kStateDim + d] = z[d];
  }
  Tensor z = em.encode_norm(states);
  std::size_t dz = z.last();
  Tensor zin({L, dz});
  Tensor a({L, kActionDim});
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < dz; ++d) zin.v[t * dz + d] = z.v[t * dz + d];
    for (std::size_t d = 0; d < kActionDim; ++d) {
      a.v[t * kActionDim + d] = tr.actions[t][d];
    }
  }
  Tensor zhat = em.predict(zin, a);
  std::vector<double> e(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < dz; ++d) {
      e[t] += std::fabs(zhat.v[t * dz + d] - z.v[(t + 1) * dz + d]);
    }
  }
  return e;
}

// --- ridge regression -----------------------------------------------------------

// Solves (X^T X + alpha I) W = X^T Y by Cholesky; X: [n, p], Y: [n, q].
inline Tensor ridge_fit(const Tensor& x, const Tensor& y, double alpha) {
  std::size_t n = x.dim(0), p = x.dim(1), q = y.dim(1);
  if (y.dim(0) != n) throw StructuralError("ridge_fit: row mismatch");
  if (n < p) throw ConfigError("ridge_fit: need at least p rows");
  std::vector<double> g(p * p, 0.0);  // X^T X + alpha I
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * p;
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = r; c < p; ++c) g[r * p + c] += xi[r] * xi[c];
    }
  }
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < r; ++c) g[r * p + c] = g[c * p + r];
    g[r * p + r] += alpha;
  }
  Tensor xty({p, q});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * p;
    const double* yi = y.data() + i * q;
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < q; ++c) xty.v[r * q + c] += xi[r] * yi[c];
    }
  }
  // Cholesky: G = L L^T.
  std::vector<double> L(p * p, 0.0);
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c <= r; ++c) {
      double s = g[r * p + c];
      for (std::size_t k = 0; k < c; ++k) s -= L[r * p + k] * L[c * p + k];
      if (r == c) {
        if (s <= 0.0) {
          throw NumericError("ridge_fit: normal equations not positive definite");
        }
        L[r * p + r] = std::sqrt(s);
      } else {
        L[r * p + c] = s / L[c * p + c];
      }
    }
  }
  Tensor w({p, q});
  std::vector<double> tmp(p);
  for (std::size_t c = 0; c < q; ++c) {
    for (std::size_t r = 0; r < p; ++r) {
      double s = xty.v[r * q + c];
      for (std::size_t k = 0; k < r; ++k) s -= L[r * p + k] * tmp[k];
      tmp[r] = s / L[r * p + r];
    }
    for (std::size_t r = p; r-- > 0;) {
      double s = tmp[r];
      for (std::size_t k = r + 1; k < p; ++k) s -= L[k * p + r] * w.v[k * q + c];
      w.v[r * q + c] = s / L[r * p + r];
    }
  }
  return w;
}

// --- transition sets and scorers ---------------------------------------------------

struct TransitionBatch {
  Tensor s;       // [n, dim_s] normalised
  Tensor a;       // [n, dim_a]
  Tensor s_next;  // [n, dim_s] normalised
  std::size_t size() const { return s.dim(0); }
};

// Lower error = more feasible; discrimination uses r = -e.
using ScorerFn = std::function<std::vector<double>(const TransitionBatch&)>;

struct NamedScorer {
  std::string name;
  ScorerFn errors;
};

inline TransitionBatch gather_transitions(const OfflineDataset& ds,
                                          const std::vector<std::size_t>& eps) {
  std::size_t n = 0;
  for (std::size_t e : eps) n += ds.trajectories[e].length();
  TransitionBatch b;
  b.s = Tensor({n, kStateDim});
  b.a = Tensor({n, kActionDim});
  b.s_next = Tensor({n, kStateDim});
  std::size_t r = 0;
  for (std::size_t e : eps) {
    const Trajectory& tr = ds.trajectories[e];
    for (std::size_t t = 0; t < tr.length(); ++t) {
      Vec4 s0 = ds.normalize(tr.states[t]);
      Vec4 s1 = ds.normalize(tr.states[t + 1]);
      for (std::size_t d = 0; d < kStateDim; ++d) {
        b.s.v[r * kStateDim + d] = s0[d];
        b.s_next.v[r * kStateDim + d] = s1[d];
      }
      for (std::size_t d = 0; d < kActionDim; ++d) {
        b.a.v[r * kActionDim + d] = tr.actions[t][d];
      }
      ++r;
    }
  }
  return b;
}

// Ridge in some feature space: e = L1 prediction error of the delta.
class RidgeForward {
 public:
  // encode: maps normalised states [n, dim_s] to features [n, d]; identity
  // for the state-space variant.
  using EncodeFn = std::function<Tensor(const Tensor&)>;

  RidgeForward(EncodeFn encode, const TransitionBatch& train, double alpha)
      : encode_(std::move(encode)) {
    Tensor zs = encode_(train.s);
    Tensor zn = encode_(train.s_next);
    d_ = zs.last();
    std::size_t n = zs.dim(0), p = d_ + kActionDim + 1;
    Tensor x({n, p});
    Tensor y({n, d_});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d_; ++j) {
        x.v[i * p + j] = zs.v[i * d_ + j];
        y.v[i * d_ + j] = zn.v[i * d_ + j] - zs.v[i * d_ + j];
      }
      for (std::size_t j = 0; j < kActionDim; ++j) {
        x.v[i * p + d_ + j] = train.a.v[i * kActionDim + j];
      }
      x.v[i * p + d_ + kActionDim] = 1.0;
    }
    w_ = ridge_fit(x, y, alpha);
  }

  std::vector<double> errors(const TransitionBatch& batch) const {
    Tensor zs = encode_(batch.s);
    Tensor zn = encode_(batch.s_next);
    std::size_t n = zs.dim(0), p = d_ + kActionDim + 1;
    std::vector<double> e(n, 0.0);
    std::vector<double> xi(p);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d_; ++j) xi[j] = zs.v[i * d_ + j];
      for (std::size_t j = 0; j < kActionDim; ++j) {
        xi[d_ + j] = batch.a.v[i * kActionDim + j];
      }
      xi[d_ + kActionDim] = 1.0;
      for (std::size_t j = 0; j < d_; ++j) {
        double pred = zs.v[i * d_ + j];
        for (std::size_t k = 0; k < p; ++k) pred += xi[k] * w_.v[k * d_ + j];
        e[i] += std::fabs(pred - zn.v[i * d_ + j]);
      }
    }
    return e;
  }

 private:
  EncodeFn encode_;
  std::size_t d_ = 0;
  Tensor w_;
};

// --- discrimination protocol ----------------------------------------------------------

struct DiscriminationConfig {
  std::size_t splits = 10;
  double train_fraction = 0.5;
  std::size_t shuffle_batch = 256;  // negatives drawn within these batches
  double ridge_alpha = 1e-3;
  // MLP forward baseline: AC-predictor protocol run directly in state space,
  // at a reduced desk-scale step count.
  std::size_t mlp_steps = 1200;
  bool include_mlp_forward = true;
  bool include_random_latent = true;
};

struct ScorerSummary {
  std::string name;
  std::vector<double> aurocs;  // one per split
  double mean = 0.0;
  double se = 0.0;
};

// Negatives from batch-wise action derangements on validation transitions.
inline TransitionBatch shuffle_actions_batchwise(const TransitionBatch& val,
                                                 std::size_t batch_size,
                                                 RngStream rng) {
  TransitionBatch neg = val;
  std::size_t n = val.size();
  std::size_t start = 0;
  while (start < n) {
    std::size_t len = std::min(batch_size, n - start);
    if (n - (start + len) == 1) len += 1;  // avoid a trailing singleton
    std::vector<std::size_t> pi = permute_actions_indices(len, rng);
    std::vector<double> tmp(len * kActionDim);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t d = 0; d < kActionDim; ++d) {
        tmp[i * kActionDim + d] =
            val.a.v[(start + pi[i]) * kActionDim + d];
      }
    }
    for (std::size_t i = 0; i < len * kActionDim; ++i) {
      neg.a.v[start * kActionDim + i] = tmp[i];
    }
    start += len;
  }
  return neg;
}

// The state-forward MLP baseline: the AC-predictor training protocol applied
// directly to normalised states (identity encoder, no whitening).
struct StateForwardModel {
  AcModel ac;
};

inline StateForwardModel train_state_forward(const OfflineDataset& ds,
                                             const std::vector<std::size_t>& eps,
                                             const AcConfig& proto,
                                             RngStream rng) {
  AcConfig cfg = proto;
  cfg.d_z = kStateDim;
  StateForwardModel m{ac_init(cfg, rng.derive("init"))};
  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t e : eps) {
    const auto& tr = ds.trajectories[e];
    if (tr.length() < cfg.window) continue;
    for (std::size_t t = 0; t + cfg.window <= tr.length(); ++t) {
      windows.emplace_back(e, t);
    }
  }
  if (windows.empty()) {
    throw ConfigError("train_state_forward: no training window");
  }
  RngStream data_rng = rng.derive("batches");
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    RngStream sr = data_rng.derive(step);
    Tensor z({cfg.batch, cfg.window + 1, kStateDim});
    Tensor a({cfg.batch, cfg.window, kActionDim});
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      auto [traj, t0] = windows[sr.uniform_int(windows.size())];
      const Trajectory& tr = ds.trajectories[traj];
      for (std::size_t t = 0; t <= cfg.window; ++t) {
        Vec4 s = ds.normalize(tr.states[t0 + t]);
        for (std::size_t d = 0; d < kStateDim; ++d) {
          z.v[(i * (cfg.window + 1) + t) * kStateDim + d] = s[d];
        }
      }
      for (std::size_t t = 0; t < cfg.window; ++t) {
        for (std::size_t d = 0; d < kActionDim; ++d) {
          a.v[(i * cfg.window + t) * kActionDim + d] = tr.actions[t0 + t][d];
        }
      }
    }
    RngStream pr = sr.derive("perm");
    Tensor a_perm =
        apply_permutation_rows(a, permute_actions_indices(cfg.batch, pr));
    Graph g;
    Var zv = g.input(z);
    Var av = g.input(a);
    Var z_next = g.slice_t(zv, 1, cfg.window);
    Var l_tf = ac_loss_tf(g, ac_predict_next(g, m.ac, zv, av, true), z_next);
    Var l_ro = ac_loss_ro(g, m.ac, zv, av, cfg.rollout_h, true);
    AcNegParts neg = ac_loss_neg(g, m.ac, zv, a_perm, z_next, cfg.margin, true);
    Var total = g.add(l_tf, g.add(g.scale(l_ro, cfg.lambda_ro),
                                  g.scale(neg.loss, cfg.lambda_neg)));
    if (!std::isfinite(g.scalar(total))) {
      throw NumericError("train_state_forward: non-finite loss");
    }
    GradMap grads = g.backward(total);
    opt.step(m.ac.params, grads);
  }
  return m;
}

// AUROC per scorer with mean +- standard error across repeated episode-level
// splits; negatives are in-batch action shuffles on validation transitions.
inline std::vector<ScorerSummary> discrimination_protocol(
    const OfflineDataset& ds, const EnergyModel* sage,
    const AcConfig& ac_proto, const JepaConfig& jepa_proto,
    const DiscriminationConfig& cfg, RngStream rng) {
  std::size_t n_eps = ds.trajectories.size();
  if (n_eps < 2) {
    throw ConfigError("discrimination_protocol: need at least 2 episodes");
  }
  std::vector<std::string> names = {"sage", "ridge_state"};
  if (cfg.include_mlp_forward) names.push_back("mlp_state");
  if (cfg.include_random_latent) names.push_back("ridge_random_latent");
  std::map<std::string, std::vector<double>> aurocs;

  for (std::size_t split = 0; split < cfg.splits; ++split) {
    RngStream srng = rng.derive("split").derive(split);
    std::vector<std::size_t> order = srng.derive("perm").permutation(n_eps);
    std::size_t n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg.train_fraction *
                                    static_cast<double>(n_eps)));
    n_train = std::min(n_train, n_eps - 1);
    std::vector<std::size_t> train_eps(order.begin(),
                                       order.begin() + static_cast<long>(n_train));
    std::vector<std::size_t> val_eps(order.begin() + static_cast<long>(n_train),
                                     order.end());
    TransitionBatch train = gather_transitions(ds, train_eps);
    TransitionBatch val = gather_transitions(ds, val_eps);
    TransitionBatch neg = shuffle_actions_batchwise(val, cfg.shuffle_batch,
                                                    srng.derive("neg"));

    std::vector<NamedScorer> scorers;
    if (sage != nullptr) {
      scorers.push_back({"sage", [&](const TransitionBatch& b) {
        Tensor z = sage->encode_norm(b.s);
        Tensor zn = sage->encode_norm(b.s_next);
        Tensor zhat = sage->predict(z, b.a);
        std::size_t dz = z.last();
        std::vector<double> e(b.size(), 0.0);
        for (std::size_t i = 0; i < b.size(); ++i) {
          for (std::size_t d = 0; d < dz; ++d) {
            e[i] += std::fabs(zhat.v[i * dz + d] - zn.v[i * dz + d]);
          }
        }
        return e;
      }});
    }
    RidgeForward ridge_state([](const Tensor& s) { return s; }, train,
                             cfg.ridge_alpha);
    scorers.push_back({"ridge_state", [&](const TransitionBatch& b) {
      return ridge_state.errors(b);
    }});

    StateForwardModel mlp;
    if (cfg.include_mlp_forward) {
      AcConfig proto = ac_proto;
      proto.steps = cfg.mlp_steps;
      proto.optim.total = cfg.mlp_steps;
      proto.optim.warmup = std::min<std::size_t>(proto.optim.warmup,
                                                 cfg.mlp_steps / 10);
      mlp = train_state_forward(ds, train_eps, proto, srng.derive("mlp"));
      scorers.push_back({"mlp_state", [&](const TransitionBatch& b) {
        Tensor zhat = ac_predict_single(mlp.ac, b.s, b.a);
        std::vector<double> e(b.size(), 0.0);
        for (std::size_t i = 0; i < b.size(); ++i) {
          for (std::size_t d = 0; d < kStateDim; ++d) {
            e[i] += std::fabs(zhat.v[i * kStateDim + d] -
                              b.s_next.v[i * kStateDim + d]);
          }
        }
        return e;
      }});
    }

    ParameterStore random_enc;
    std::optional<RidgeForward> ridge_rand;
    if (cfg.include_random_latent) {
      MlpDef def = jepa_proto.encoder_def("enc");
      mlp_register(random_enc, def, srng.derive("random_enc"));
      ridge_rand.emplace(
          [&random_enc, def](const Tensor& s) {
            return raw_mlp(random_enc, def, s, true);
          },
          train, cfg.ridge_alpha);
      scorers.push_back({"ridge_random_latent",
                         [&](const TransitionBatch& b) {
                           return ridge_rand->errors(b);
                         }});
    }

    for (auto& sc : scorers) {
      std::vector<double> e_pos = sc.errors(val);
      std::vector<double> e_neg = sc.errors(neg);
      // r = -e: positives should score higher.
      for (double& x : e_pos) x = -x;
      for (double& x : e_neg) x = -x;
      aurocs[sc.name].push_back(auroc(e_pos, e_neg));
    }
  }

  std::vector<ScorerSummary> out;
  for (const auto& name : names) {
    if (!aurocs.count(name)) continue;
    ScorerSummary s;
    s.name = name;
    s.aurocs = aurocs[name];
    s.mean = mean_of(s.aurocs);
    double var = s.aurocs.size() > 1 ? sample_var(s.aurocs, s.mean) : 0.0;
    s.se = std::sqrt(var / static_cast<double>(s.aurocs.size()));
    out.push_back(std::move(s));
  }
  return out;
}

// --- ablation sweep ---------------------------------------------------------------------

enum class AblationAxis { kPrefix, kKeepRate, kLambda };

struct AblationPoint {
  double value = 0.0;
  double mean_score = 0.0;
  double se = 0.0;
  std::vector<double> scores;
};

inline std::vector<AblationPoint> ablation_sweep(
    AblationAxis axis, const std::vector<double>& values, const MazeSpec& maze,
    const DecisionMachinery& mach, const EpisodeConfig& base_cfg,
    const ScoreRefs& refs, std::size_t episodes, RngStream rng) {
  std::vector<AblationPoint> out;
  for (double v : values) {
    EpisodeConfig cfg = base_cfg;
    switch (axis) {
      case AblationAxis::kPrefix:
        cfg.gate.prefix_k = static_cast<std::size_t>(v);
        break;
      case AblationAxis::kKeepRate:
        cfg.gate.keep_rate = v;
        break;
      case AblationAxis::kLambda:
        cfg.gate.lambda = v;
        break;
    }
    AblationPoint pt;
    pt.value = v;
    std::vector<double> returns;
    for (std::size_t e = 0; e < episodes; ++e) {
      EpisodeResult r = gated_episode(maze, mach, cfg, rng.derive(e));
      returns.push_back(r.episode_return);
    }
    pt.scores = normalized_scores(returns, refs);
    pt.mean_score = mean_of(pt.scores);
    double var = pt.scores.size() > 1 ? sample_var(pt.scores, pt.mean_score)
                                      : 0.0;
    pt.se = std::sqrt(var / static_cast<double>(pt.scores.size()));
    out.push_back(std::move(pt));
  }
  return out;
}

// --- inference overhead -------------------------------------------------------------------

struct StageStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;
};

struct OverheadReport {
  std::map<std::string, StageStats> sage;
  std::map<std::string, StageStats> baseline;
  double sage_total_mean_ms = 0.0;
  double baseline_total_mean_ms = 0.0;
  double overhead_percent = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t measured_steps = 0;
};

namespace detail {
inline std::map<std::string, StageStats> stage_stats(
    const std::vector<StageSeconds>& steps) {
  std::map<std::string, std::vector<double>> per;
  for (const auto& s : steps) {
    double known = s.planner + s.critic + s.invdyn + s.env + s.gating;
    per["planner"].push_back(s.planner);
    per["critic"].push_back(s.critic);
    per["invdyn"].push_back(s.invdyn);
    per["env"].push_back(s.env);
    per["gating"].push_back(s.gating);
    per["other"].push_back(std::max(0.0, s.total - known));
  }
  std::map<std::string, StageStats> out;
  for (auto& [name, xs] : per) {
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    StageStats st;
    st.mean_ms = 1e3 * mean_of(xs);
    std::size_t idx = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
    st.p95_ms = 1e3 * sorted[std::min(idx, sorted.size() - 1)];
    out[name] = st;
  }
  return out;
}

// Continuous decision stepping across chained episodes.
inline std::vector<StageSeconds> timed_steps(const MazeSpec& maze,
                                             const DecisionMachinery& mach,
                                             const EpisodeConfig& cfg,
                                             std::size_t warm,
                                             std::size_t measure,
                                             RngStream rng) {
  std::vector<StageSeconds> out;
  out.reserve(measure);
  RngStream start_rng = rng.derive("start");
  Vec4 s = sample_start(maze, start_rng);
  std::size_t in_episode = 0;
  for (std::size_t step = 0; step < warm + measure; ++step) {
    StepDecision d = decide_step(mach, cfg, s, rng.derive(step));
    double t0 = detail::now_seconds();
    StepOut o = env_step(maze, s, d.action);
    d.times.env = detail::now_seconds() - t0;
    d.times.total += d.times.env;
    if (step >= warm) out.push_back(d.times);
    s = o.s_next;
    in_episode += 1;
    if (o.at_goal || in_episode >= maze.episode_length) {
      s = sample_start(maze, start_rng);
      in_episode = 0;
    }
  }
  return out;
}
}  // namespace detail

// Wall-clock decomposition per decision step, gate on vs off, after a warmup
// phase. overhead% = (mean_sage - mean_baseline) / mean_baseline * 100.
inline OverheadReport overhead_measure(const MazeSpec& maze,
                                       const DecisionMachinery& mach,
                                       const EpisodeConfig& sage_cfg,
                                       std::size_t warm, std::size_t measure,
                                       RngStream rng) {
  if (sage_cfg.gate_on == false) {
    throw ConfigError("overhead_measure: sage_cfg must enable the gate");
  }
  EpisodeConfig base_cfg = sage_cfg;
  base_cfg.gate_on = false;
  OverheadReport rep;
  rep.warmup_steps = warm;
  rep.measured_steps = measure;
  auto sage_steps =
      detail::timed_steps(maze, mach, sage_cfg, warm, measure, rng.derive("s"));
  auto base_steps =
      detail::timed_steps(maze, mach, base_cfg, warm, measure, rng.derive("b"));
  rep.sage = detail::stage_stats(sage_steps);
  rep.baseline = detail::stage_stats(base_steps);
  double ms = 0.0, mb = 0.0;
  for (const auto& s : sage_steps) ms += s.total;
  for (const auto& s : base_steps) mb += s.total;
  ms /= static_cast<double>(sage_steps.size());
  mb /= static_cast<double>(base_steps.size());
  rep.sage_total_mean_ms = 1e3 * ms;
  rep.baseline_total_mean_ms = 1e3 * mb;
  rep.overhead_percent = (ms - mb) / mb * 100.0;
  return rep;
}

}  // namespace sage
