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
#include <chrono>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "sage/acpred.hpp"
#include "sage/generator.hpp"
#include "sage/jepa.hpp"

namespace sage {

struct GateConfig {
  std::size_t prefix_k = 10;  // K
  double keep_rate = 0.8;     // P
  double lambda = 0.1;

  void validate(std::size_t horizon) const {
    if (prefix_k < 1 || prefix_k > horizon) {
      throw ConfigError("gate: K must lie in [1, H]");
    }
    if (!(keep_rate > 0.0) || keep_rate > 1.0) {
      throw ConfigError("gate: keep rate must lie in (0, 1]");
    }
    if (lambda < 0.0) throw ConfigError("gate: lambda must be >= 0");
  }
};

// Frozen teacher encoder + latent whitening + action-conditioned predictor.
// Counts encoder/predictor evaluations (one per state / per transition) for
// the complexity contract.
class EnergyModel {
 public:
  EnergyModel(const JepaModel& jepa, const AcModel& ac, Vec4 mu_s, Vec4 sigma_s)
      : jepa_(jepa), ac_(ac), mu_s_(mu_s), sigma_s_(sigma_s) {
    if (!jepa.whitened()) {
      throw ConfigError("EnergyModel: latent whitening not fitted");
    }
  }

  // Whitened teacher latents for already-normalised states [N, dim_s].
  Tensor encode_norm(const Tensor& states_norm) const {
    encoder_evals += states_norm.rows();
    Tensor lat = raw_mlp(jepa_.teacher, jepa_.cfg.encoder_def("enc"),
                         states_norm, /*row_pure=*/true);
    return whiten_rows(lat, jepa_.mu_z, jepa_.sigma_z);
  }

  // Single-transition predictions [N, d_z] from whitened latents + actions.
  Tensor predict(const Tensor& z, const Tensor& a) const {
    predictor_evals += z.rows();
    return ac_predict_single(ac_, z, a);
  }

  // Per-step latent-consistency terms e_k for one plan prefix; the plan must
  // carry at least K+1 states and K filled actions.
  std::vector<double> per_step_energies(const CandidatePlan& plan,
                                        std::size_t k) const {
    if (plan.states.dim(0) < k + 1 || plan.actions_filled < k) {
      throw StructuralError("prefix_energy: plan shorter than prefix K");
    }
    Tensor states({k + 1, kStateDim});
    for (std::size_t i = 0; i < (k + 1) * kStateDim; ++i) {
      states.v[i] = plan.states.v[i];
    }
    Tensor z = encode_norm(states);
    Tensor zin({k, jepa_.cfg.d_z});
    Tensor a({k, kActionDim});
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t d = 0; d < jepa_.cfg.d_z; ++d) {
        zin.v[i * jepa_.cfg.d_z + d] = z.v[i * jepa_.cfg.d_z + d];
      }
      for (std::size_t d = 0; d < kActionDim; ++d) {
        a.v[i * kActionDim + d] = plan.actions.v[i * kActionDim + d];
      }
    }
    Tensor zhat = predict(zin, a);
    std::vector<double> e(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t d = 0; d < jepa_.cfg.d_z; ++d) {
        e[i] += std::fabs(zhat.v[i * jepa_.cfg.d_z + d] -
                          z.v[(i + 1) * jepa_.cfg.d_z + d]);
      }
    }
    return e;
  }

  // K-averaged prefix energy (Eq. form: mean of the per-step terms).
  std::pair<double, std::vector<double>> prefix_energy(
      const CandidatePlan& plan, std::size_t k) const {
    std::vector<double> e = per_step_energies(plan, k);
    double sum = 0.0;
    for (double x : e) sum += x;
    return {sum / static_cast<double>(k), e};
  }

  const JepaModel& jepa() const { return jepa_; }
  const AcModel& ac() const { return ac_; }

  mutable std::uint64_t encoder_evals = 0;
  mutable std::uint64_t predictor_evals = 0;

 private:
  const JepaModel& jepa_;
  const AcModel& ac_;
  Vec4 mu_s_, sigma_s_;
};

// Keep the ceil(P*C) lowest-energy candidates; ties break toward the lower
// index. Returned indices are sorted ascending.
inline std::vector<std::size_t> keep_filter(const std::vector<double>& energies,
                                            double keep_rate) {
  if (energies.empty()) throw StructuralError("keep_filter: empty pool");
  std::size_t c = energies.size();
  std::size_t n_keep = static_cast<std::size_t>(
      std::ceil(keep_rate * static_cast<double>(c)));
  n_keep = std::max<std::size_t>(1, std::min(n_keep, c));
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (energies[a] != energies[b]) return energies[a] < energies[b];
    return a < b;
  });
  order.resize(n_keep);
  std::sort(order.begin(), order.end());
  return order;
}

// argmax over the kept set of J - lambda * E; ties break toward the lower
// index.
inline std::size_t select_candidate(const std::vector<double>& scores,
                                    const std::vector<double>& energies,
                                    const std::vector<std::size_t>& kept,
                                    double lambda) {
  if (kept.empty()) throw StructuralError("select: empty kept set");
  std::size_t best = kept[0];
  double best_v = scores[kept[0]] - lambda * energies[kept[0]];
  for (std::size_t idx : kept) {
    double v = scores[idx] - lambda * energies[idx];
    if (v > best_v) {
      best_v = v;
      best = idx;
    }
  }
  return best;
}

// Value-only MCSS selection over the full pool (same tie rule).
inline std::size_t select_value_only(const std::vector<double>& scores) {
  if (scores.empty()) throw StructuralError("select: empty pool");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

struct EnergyReport {
  std::size_t step = 0;
  std::vector<double> energies;            // per candidate
  std::vector<std::vector<double>> per_step;  // K terms per candidate (optional)
  std::vector<std::size_t> kept;
  std::size_t selected = 0;
  std::size_t baseline_selected = 0;

  json to_json() const {
    json j = {{"step", step},
              {"energies", energies},
              {"kept", kept},
              {"selected", selected},
              {"baseline_selected", baseline_selected}};
    if (!per_step.empty()) j["per_step"] = per_step;
    return j;
  }
};

// --- receding-horizon control loop ------------------------------------------------

struct EpisodeConfig {
  std::size_t candidates = 50;
  bool use_diffusion = true;   // otherwise the replay-perturbation generator
  double replay_noise = 0.0;
  std::size_t ddim_steps = 20;
  bool gate_on = true;
  GateConfig gate;
  bool keep_reports = false;
  bool keep_per_step = false;
};

struct StageSeconds {
  double planner = 0.0;
  double critic = 0.0;
  double invdyn = 0.0;
  double env = 0.0;
  double gating = 0.0;
  double total = 0.0;
};

struct DecisionMachinery {
  const OfflineDataset* ds = nullptr;
  const PlannerModel* planner = nullptr;
  const ReplayGenerator* replay = nullptr;
  const InvDynModel* invdyn = nullptr;
  const CriticModel* critic = nullptr;
  const EnergyModel* energy = nullptr;  // required when gate_on
};

namespace detail {
inline double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}
}  // namespace detail

struct StepDecision {
  Vec2 action{0.0, 0.0};
  EnergyReport report;
  StageSeconds times;
};

// One decision step: sample C candidates, fill the needed action prefix,
// score, (optionally) energy-gate, and pick the action to execute.
inline StepDecision decide_step(const DecisionMachinery& mach,
                                const EpisodeConfig& cfg, const Vec4& s_raw,
                                RngStream step_rng) {
  StepDecision out;
  double t0 = detail::now_seconds();
  Vec4 s_norm = mach.ds->normalize(s_raw);

  double t_plan0 = detail::now_seconds();
  std::vector<CandidatePlan> plans;
  if (cfg.use_diffusion) {
    plans = ddim_sample(*mach.planner, s_norm, cfg.candidates, cfg.ddim_steps,
                        step_rng.derive("ddim"));
  } else {
    plans = mach.replay->generate(s_norm, cfg.candidates, cfg.replay_noise,
                                  step_rng.derive("replay"));
  }
  out.times.planner = detail::now_seconds() - t_plan0;

  std::size_t horizon = plans[0].horizon();
  if (cfg.gate_on) cfg.gate.validate(horizon);

  double t_inv0 = detail::now_seconds();
  std::size_t needed = cfg.gate_on ? std::max<std::size_t>(cfg.gate.prefix_k, 1)
                                   : 1;
  infer_actions(*mach.invdyn, plans, needed, step_rng.derive("invdyn"));
  out.times.invdyn = detail::now_seconds() - t_inv0;

  double t_cr0 = detail::now_seconds();
  critic_score(*mach.critic, plans);
  out.times.critic = detail::now_seconds() - t_cr0;

  std::vector<double> scores(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) scores[i] = plans[i].score_j;
  std::size_t baseline = select_value_only(scores);

  std::size_t chosen = baseline;
  if (cfg.gate_on) {
    double t_g0 = detail::now_seconds();
    std::vector<double> energies(plans.size());
    std::vector<std::vector<double>> per_step;
    if (cfg.keep_per_step) per_step.resize(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
      auto [e, terms] = mach.energy->prefix_energy(plans[i], cfg.gate.prefix_k);
      energies[i] = e;
      plans[i].energy = e;
      if (cfg.keep_per_step) per_step[i] = std::move(terms);
    }
    std::vector<std::size_t> kept = keep_filter(energies, cfg.gate.keep_rate);
    chosen = select_candidate(scores, energies, kept, cfg.gate.lambda);
    out.times.gating = detail::now_seconds() - t_g0;
    out.report.energies = std::move(energies);
    out.report.per_step = std::move(per_step);
    out.report.kept = std::move(kept);
  }
  out.report.selected = chosen;
  out.report.baseline_selected = baseline;
  out.action = {plans[chosen].actions.v[0], plans[chosen].actions.v[1]};
  out.times.total = detail::now_seconds() - t0;
  return out;
}

struct EpisodeResult {
  double episode_return = 0.0;
  std::size_t steps = 0;
  bool reached_goal = false;
  std::vector<EnergyReport> reports;
  StageSeconds times;
};

// Full receding-horizon episode: replan every step, execute the first action
// of the selected candidate. Value-only selections are logged alongside for
// paired comparison.
inline EpisodeResult gated_episode(const MazeSpec& maze,
                                   const DecisionMachinery& mach,
                                   const EpisodeConfig& cfg,
                                   RngStream episode_rng) {
  if (mach.ds == nullptr || mach.invdyn == nullptr || mach.critic == nullptr) {
    throw ConfigError("gated_episode: missing machinery");
  }
  if (cfg.use_diffusion && mach.planner == nullptr) {
    throw ConfigError("gated_episode: diffusion generator not provided");
  }
  if (!cfg.use_diffusion && mach.replay == nullptr) {
    throw ConfigError("gated_episode: replay generator not provided");
  }
  if (cfg.gate_on && mach.energy == nullptr) {
    throw ConfigError("gated_episode: gate enabled without an energy model");
  }
  EpisodeResult res;
  RngStream start_rng = episode_rng.derive("start");
  Vec4 s = sample_start(maze, start_rng);
  for (std::size_t step = 0; step < maze.episode_length; ++step) {
    StepDecision d = decide_step(mach, cfg, s, episode_rng.derive(step));
    double t_env0 = detail::now_seconds();
    StepOut o = env_step(maze, s, d.action);
    d.times.env = detail::now_seconds() - t_env0;
    res.times.planner += d.times.planner;
    res.times.critic += d.times.critic;
    res.times.invdyn += d.times.invdyn;
    res.times.gating += d.times.gating;
    res.times.env += d.times.env;
    res.times.total += d.times.total + d.times.env;
    res.episode_return += o.reward;
    res.steps += 1;
    if (cfg.keep_reports) {
      d.report.step = step;
      res.reports.push_back(std::move(d.report));
    }
    s = o.s_next;
    if (o.at_goal) {
      res.reached_goal = true;
      break;
    }
  }
  return res;
}

}  // namespace sage
