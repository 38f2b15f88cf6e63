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
#include <cstdint>
#include <string>
#include <vector>

#include "sage/acpred.hpp"
#include "sage/dataset.hpp"
#include "sage/gate.hpp"
#include "sage/generator.hpp"
#include "sage/jepa.hpp"

namespace sage {

// One plain-text document covering every module. Unknown keys are rejected;
// values are overridable from files and --set paths. Desk-scale defaults are
// sized for single-CPU runs; paper-scale values remain reachable through the
// same knobs.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string maze = "rooms";

  struct DataCfg {
    std::size_t episodes = 80;
    double noise = 0.08;
    double goal_bias = 0.5;
    std::size_t dwell_max = 12;
    double kp = 4.0;
    double kd = 2.0;
  } data;

  struct JepaCfg {
    std::size_t d_z = 32;
    std::size_t hidden = 128;
    std::size_t window = 16;
    std::size_t k_max = 5;
    std::size_t k_per_batch = 3;
    double feature_mask_ratio = 0.30;
    double time_mask_ratio = 0.10;
    double gamma = 1.0;
    double var_eps = 1e-4;
    double lambda_var = 1.0;
    double lambda_cov = 0.1;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t steps = 2500;
    std::size_t batch = 48;
    double lr = 2e-4;
    double lr_min = 1e-6;
    std::size_t warmup = 150;
    double weight_decay = 1e-4;
    double clip = 1.0;
  } jepa;

  struct AcCfg {
    std::size_t hidden = 64;
    std::size_t window = 8;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t rollout_h = 4;
    double margin = 0.10;
    double lambda_ro = 1.0;
    double lambda_neg = 1.0;
    std::size_t steps = 2000;
    std::size_t batch = 32;
    double lr = 2e-4;
    double lr_min = 1e-6;
    std::size_t warmup = 100;
    double weight_decay = 1e-4;
    double clip = 1.0;
  } acpred;

  struct PlannerCfg {
    std::size_t horizon = 32;
    std::size_t t_train = 100;
    std::size_t ddim_steps = 20;
    std::size_t hidden = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    double temperature = 1.0;
    double ema_rate = 0.995;
    std::size_t steps = 1500;
    std::size_t batch = 32;
    double lr = 2e-4;
    double lr_min = 1e-6;
    std::size_t warmup = 100;
  } planner;

  struct InvDynCfg {
    bool diffusion_mode = false;
    std::size_t hidden = 128;
    std::size_t steps = 2500;
    std::size_t batch = 128;
    std::size_t ddpm_steps = 10;
    double sample_temperature = 0.5;
    double ema_rate = 0.995;
    double lr = 1e-3;
  } invdyn;

  struct CriticCfg {
    std::size_t hidden = 128;
    double gamma = 0.997;
    std::size_t steps = 1200;
    std::size_t batch = 128;
    double lr = 3e-4;
  } critic;

  struct GateCfg {
    std::size_t prefix_k = 10;
    double keep_rate = 0.8;
    double lambda = 0.1;
  } gate;

  struct EvalCfg {
    std::size_t episodes = 4;
    std::size_t candidates = 50;
    std::string generator = "diffusion";  // or "replay"
    double replay_noise = 0.1;
    std::size_t stress_episodes = 200;
    std::size_t stress_candidates = 500;
    double stress_noise = 0.35;  // documented high-noise setting
    std::size_t bootstrap_replicates = 10000;
    std::size_t ref_episodes = 500;
  } eval;

  struct DiagCfg {
    std::size_t splits = 10;
    double train_fraction = 0.5;
    std::size_t shuffle_batch = 256;
    double ridge_alpha = 1e-3;
    std::size_t mlp_steps = 300;
    std::size_t corruption_episodes = 200;
    std::size_t corrupt_min_len = 5;
    std::size_t corrupt_max_len = 20;
  } diag;

  struct AblateCfg {
    std::size_t episodes = 12;
    std::vector<double> k_values = {2, 5, 10, 20};
    std::vector<double> keep_values = {0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> lambda_values = {0.0, 0.05, 0.1, 0.5, 2.0};
  } ablate;

  struct OverheadCfg {
    std::size_t warmup = 100;
    std::size_t measure = 500;
    std::size_t candidates = 50;
  } overhead;

  // --- JSON mapping -----------------------------------------------------------

  json to_json() const {
    return json{
        {"seed", seed},
        {"maze", maze},
        {"data",
         {{"episodes", data.episodes},
          {"noise", data.noise},
          {"goal_bias", data.goal_bias},
          {"dwell_max", data.dwell_max},
          {"kp", data.kp},
          {"kd", data.kd}}},
        {"jepa",
         {{"d_z", jepa.d_z},
          {"hidden", jepa.hidden},
          {"window", jepa.window},
          {"k_max", jepa.k_max},
          {"k_per_batch", jepa.k_per_batch},
          {"feature_mask_ratio", jepa.feature_mask_ratio},
          {"time_mask_ratio", jepa.time_mask_ratio},
          {"gamma", jepa.gamma},
          {"var_eps", jepa.var_eps},
          {"lambda_var", jepa.lambda_var},
          {"lambda_cov", jepa.lambda_cov},
          {"layers", jepa.layers},
          {"heads", jepa.heads},
          {"steps", jepa.steps},
          {"batch", jepa.batch},
          {"lr", jepa.lr},
          {"lr_min", jepa.lr_min},
          {"warmup", jepa.warmup},
          {"weight_decay", jepa.weight_decay},
          {"clip", jepa.clip}}},
        {"acpred",
         {{"hidden", acpred.hidden},
          {"window", acpred.window},
          {"layers", acpred.layers},
          {"heads", acpred.heads},
          {"rollout_h", acpred.rollout_h},
          {"margin", acpred.margin},
          {"lambda_ro", acpred.lambda_ro},
          {"lambda_neg", acpred.lambda_neg},
          {"steps", acpred.steps},
          {"batch", acpred.batch},
          {"lr", acpred.lr},
          {"lr_min", acpred.lr_min},
          {"warmup", acpred.warmup},
          {"weight_decay", acpred.weight_decay},
          {"clip", acpred.clip}}},
        {"planner",
         {{"horizon", planner.horizon},
          {"t_train", planner.t_train},
          {"ddim_steps", planner.ddim_steps},
          {"hidden", planner.hidden},
          {"layers", planner.layers},
          {"heads", planner.heads},
          {"temperature", planner.temperature},
          {"ema_rate", planner.ema_rate},
          {"steps", planner.steps},
          {"batch", planner.batch},
          {"lr", planner.lr},
          {"lr_min", planner.lr_min},
          {"warmup", planner.warmup}}},
        {"invdyn",
         {{"diffusion_mode", invdyn.diffusion_mode},
          {"hidden", invdyn.hidden},
          {"steps", invdyn.steps},
          {"batch", invdyn.batch},
          {"ddpm_steps", invdyn.ddpm_steps},
          {"sample_temperature", invdyn.sample_temperature},
          {"ema_rate", invdyn.ema_rate},
          {"lr", invdyn.lr}}},
        {"critic",
         {{"hidden", critic.hidden},
          {"gamma", critic.gamma},
          {"steps", critic.steps},
          {"batch", critic.batch},
          {"lr", critic.lr}}},
        {"gate",
         {{"prefix_k", gate.prefix_k},
          {"keep_rate", gate.keep_rate},
          {"lambda", gate.lambda}}},
        {"eval",
         {{"episodes", eval.episodes},
          {"candidates", eval.candidates},
          {"generator", eval.generator},
          {"replay_noise", eval.replay_noise},
          {"stress_episodes", eval.stress_episodes},
          {"stress_candidates", eval.stress_candidates},
          {"stress_noise", eval.stress_noise},
          {"bootstrap_replicates", eval.bootstrap_replicates},
          {"ref_episodes", eval.ref_episodes}}},
        {"diag",
         {{"splits", diag.splits},
          {"train_fraction", diag.train_fraction},
          {"shuffle_batch", diag.shuffle_batch},
          {"ridge_alpha", diag.ridge_alpha},
          {"mlp_steps", diag.mlp_steps},
          {"corruption_episodes", diag.corruption_episodes},
          {"corrupt_min_len", diag.corrupt_min_len},
          {"corrupt_max_len", diag.corrupt_max_len}}},
        {"ablate",
         {{"episodes", ablate.episodes},
          {"k_values", ablate.k_values},
          {"keep_values", ablate.keep_values},
          {"lambda_values", ablate.lambda_values}}},
        {"overhead",
         {{"warmup", overhead.warmup},
          {"measure", overhead.measure},
          {"candidates", overhead.candidates}}}};
  }

  static ExperimentConfig from_json(const json& j);

  std::string hash() const { return hash_hex(fnv1a(to_json().dump())); }

  // --- module config adapters ---------------------------------------------------

  GenConfig gen_config() const {
    GenConfig g;
    g.n_episodes = data.episodes;
    g.noise_level = data.noise;
    g.behavior.goal_bias = data.goal_bias;
    g.behavior.dwell_max = data.dwell_max;
    g.behavior.kp = data.kp;
    g.behavior.kd = data.kd;
    return g;
  }

  JepaConfig jepa_config() const {
    JepaConfig c;
    c.d_z = jepa.d_z;
    c.hidden = jepa.hidden;
    c.window = jepa.window;
    c.k_max = jepa.k_max;
    c.k_per_batch = jepa.k_per_batch;
    c.feature_mask_ratio = jepa.feature_mask_ratio;
    c.time_mask_ratio = jepa.time_mask_ratio;
    c.gamma = jepa.gamma;
    c.var_eps = jepa.var_eps;
    c.lambda_var = jepa.lambda_var;
    c.lambda_cov = jepa.lambda_cov;
    c.pred_layers = jepa.layers;
    c.pred_heads = jepa.heads;
    c.steps = jepa.steps;
    c.batch = jepa.batch;
    c.optim = OptimConfig{jepa.lr,           jepa.lr_min, jepa.warmup,
                          jepa.steps,        0.9,         0.999,
                          1e-8,              jepa.weight_decay,
                          jepa.clip};
    return c;
  }

  AcConfig ac_config() const {
    AcConfig c;
    c.d_z = jepa.d_z;
    c.hidden = acpred.hidden;
    c.window = acpred.window;
    c.layers = acpred.layers;
    c.heads = acpred.heads;
    c.rollout_h = acpred.rollout_h;
    c.margin = acpred.margin;
    c.lambda_ro = acpred.lambda_ro;
    c.lambda_neg = acpred.lambda_neg;
    c.steps = acpred.steps;
    c.batch = acpred.batch;
    c.optim = OptimConfig{acpred.lr,   acpred.lr_min,       acpred.warmup,
                          acpred.steps, 0.9,                0.999,
                          1e-8,        acpred.weight_decay, acpred.clip};
    return c;
  }

  PlannerConfig planner_config() const {
    PlannerConfig c;
    c.horizon = planner.horizon;
    c.t_train = planner.t_train;
    c.ddim_steps = planner.ddim_steps;
    c.hidden = planner.hidden;
    c.layers = planner.layers;
    c.heads = planner.heads;
    c.temperature = planner.temperature;
    c.ema_rate = planner.ema_rate;
    c.steps = planner.steps;
    c.batch = planner.batch;
    c.optim = OptimConfig{planner.lr, planner.lr_min, planner.warmup,
                          planner.steps, 0.9, 0.999, 1e-8, 1e-4, 1.0};
    return c;
  }

  InvDynConfig invdyn_config() const {
    InvDynConfig c;
    c.diffusion_mode = invdyn.diffusion_mode;
    c.hidden = invdyn.hidden;
    c.steps = invdyn.steps;
    c.batch = invdyn.batch;
    c.ddpm_steps = invdyn.ddpm_steps;
    c.sample_temperature = invdyn.sample_temperature;
    c.ema_rate = invdyn.ema_rate;
    std::size_t warm = std::min<std::size_t>(100, std::max<std::size_t>(
                                                      1, invdyn.steps / 10));
    c.optim = OptimConfig{invdyn.lr, 1e-6, warm, invdyn.steps,
                          0.9, 0.999, 1e-8, 1e-4, 1.0};
    return c;
  }

  CriticConfig critic_config() const {
    CriticConfig c;
    c.horizon = planner.horizon;
    c.hidden = critic.hidden;
    c.gamma = critic.gamma;
    c.steps = critic.steps;
    c.batch = critic.batch;
    std::size_t warm = std::min<std::size_t>(100, std::max<std::size_t>(
                                                      1, critic.steps / 10));
    c.optim = OptimConfig{critic.lr, 1e-6, warm, critic.steps,
                          0.9, 0.999, 1e-8, 1e-4, 1.0};
    return c;
  }

  GateConfig gate_config() const {
    GateConfig c;
    c.prefix_k = gate.prefix_k;
    c.keep_rate = gate.keep_rate;
    c.lambda = gate.lambda;
    return c;
  }
};

namespace config_detail {

// Strict overlay: every key in `user` must already exist in `base` with a
// compatible shape; objects merge recursively, everything else overwrites.
inline void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) {
    throw ConfigError("config: expected an object at " +
                      (path.empty() ? "<root>" : path));
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string here = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) {
      throw ConfigError("config: unknown key '" + here + "'");
    }
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), here);
    } else {
      if (slot.is_number() && !it.value().is_number()) {
        throw ConfigError("config: key '" + here + "' expects a number");
      }
      if (slot.is_string() && !it.value().is_string()) {
        throw ConfigError("config: key '" + here + "' expects a string");
      }
      if (slot.is_boolean() && !it.value().is_boolean()) {
        throw ConfigError("config: key '" + here + "' expects a boolean");
      }
      if (slot.is_array() && !it.value().is_array()) {
        throw ConfigError("config: key '" + here + "' expects an array");
      }
      slot = it.value();
    }
  }
}

inline void set_path(json& doc, const std::string& key,
                     const std::string& value) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : key) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  json* slot = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!slot->contains(parts[i])) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
    slot = &(*slot)[parts[i]];
  }
  if (!slot->contains(parts.back())) {
    throw ConfigError("config: unknown key '" + key + "'");
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare string
  }
  json single;
  single[parts.back()] = parsed;
  overlay(*slot, single, key);
}

}  // namespace config_detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  json doc = ExperimentConfig{}.to_json();
  config_detail::overlay(doc, j, "");
  ExperimentConfig c;
  c.seed = doc.at("seed").get<std::uint64_t>();
  c.maze = doc.at("maze").get<std::string>();
  const json& d = doc.at("data");
  c.data = {d.at("episodes").get<std::size_t>(), d.at("noise").get<double>(),
            d.at("goal_bias").get<double>(), d.at("dwell_max").get<std::size_t>(),
            d.at("kp").get<double>(), d.at("kd").get<double>()};
  const json& je = doc.at("jepa");
  c.jepa = {je.at("d_z").get<std::size_t>(),
            je.at("hidden").get<std::size_t>(),
            je.at("window").get<std::size_t>(),
            je.at("k_max").get<std::size_t>(),
            je.at("k_per_batch").get<std::size_t>(),
            je.at("feature_mask_ratio").get<double>(),
            je.at("time_mask_ratio").get<double>(),
            je.at("gamma").get<double>(),
            je.at("var_eps").get<double>(),
            je.at("lambda_var").get<double>(),
            je.at("lambda_cov").get<double>(),
            je.at("layers").get<std::size_t>(),
            je.at("heads").get<std::size_t>(),
            je.at("steps").get<std::size_t>(),
            je.at("batch").get<std::size_t>(),
            je.at("lr").get<double>(),
            je.at("lr_min").get<double>(),
            je.at("warmup").get<std::size_t>(),
            je.at("weight_decay").get<double>(),
            je.at("clip").get<double>()};
  const json& ac = doc.at("acpred");
  c.acpred = {ac.at("hidden").get<std::size_t>(),
              ac.at("window").get<std::size_t>(),
              ac.at("layers").get<std::size_t>(),
              ac.at("heads").get<std::size_t>(),
              ac.at("rollout_h").get<std::size_t>(),
              ac.at("margin").get<double>(),
              ac.at("lambda_ro").get<double>(),
              ac.at("lambda_neg").get<double>(),
              ac.at("steps").get<std::size_t>(),
              ac.at("batch").get<std::size_t>(),
              ac.at("lr").get<double>(),
              ac.at("lr_min").get<double>(),
              ac.at("warmup").get<std::size_t>(),
              ac.at("weight_decay").get<double>(),
              ac.at("clip").get<double>()};
  const json& pl = doc.at("planner");
  c.planner = {pl.at("horizon").get<std::size_t>(),
               pl.at("t_train").get<std::size_t>(),
               pl.at("ddim_steps").get<std::size_t>(),
               pl.at("hidden").get<std::size_t>(),
               pl.at("layers").get<std::size_t>(),
               pl.at("heads").get<std::size_t>(),
               pl.at("temperature").get<double>(),
               pl.at("ema_rate").get<double>(),
               pl.at("steps").get<std::size_t>(),
               pl.at("batch").get<std::size_t>(),
               pl.at("lr").get<double>(),
               pl.at("lr_min").get<double>(),
               pl.at("warmup").get<std::size_t>()};
  const json& iv = doc.at("invdyn");
  c.invdyn = {iv.at("diffusion_mode").get<bool>(),
              iv.at("hidden").get<std::size_t>(),
              iv.at("steps").get<std::size_t>(),
              iv.at("batch").get<std::size_t>(),
              iv.at("ddpm_steps").get<std::size_t>(),
              iv.at("sample_temperature").get<double>(),
              iv.at("ema_rate").get<double>(),
              iv.at("lr").get<double>()};
  const json& cr = doc.at("critic");
  c.critic = {cr.at("hidden").get<std::size_t>(), cr.at("gamma").get<double>(),
              cr.at("steps").get<std::size_t>(),
              cr.at("batch").get<std::size_t>(), cr.at("lr").get<double>()};
  const json& gt = doc.at("gate");
  c.gate = {gt.at("prefix_k").get<std::size_t>(),
            gt.at("keep_rate").get<double>(), gt.at("lambda").get<double>()};
  const json& ev = doc.at("eval");
  c.eval = {ev.at("episodes").get<std::size_t>(),
            ev.at("candidates").get<std::size_t>(),
            ev.at("generator").get<std::string>(),
            ev.at("replay_noise").get<double>(),
            ev.at("stress_episodes").get<std::size_t>(),
            ev.at("stress_candidates").get<std::size_t>(),
            ev.at("stress_noise").get<double>(),
            ev.at("bootstrap_replicates").get<std::size_t>(),
            ev.at("ref_episodes").get<std::size_t>()};
  const json& dg = doc.at("diag");
  c.diag = {dg.at("splits").get<std::size_t>(),
            dg.at("train_fraction").get<double>(),
            dg.at("shuffle_batch").get<std::size_t>(),
            dg.at("ridge_alpha").get<double>(),
            dg.at("mlp_steps").get<std::size_t>(),
            dg.at("corruption_episodes").get<std::size_t>(),
            dg.at("corrupt_min_len").get<std::size_t>(),
            dg.at("corrupt_max_len").get<std::size_t>()};
  const json& ab = doc.at("ablate");
  c.ablate = {ab.at("episodes").get<std::size_t>(),
              ab.at("k_values").get<std::vector<double>>(),
              ab.at("keep_values").get<std::vector<double>>(),
              ab.at("lambda_values").get<std::vector<double>>()};
  const json& ov = doc.at("overhead");
  c.overhead = {ov.at("warmup").get<std::size_t>(),
                ov.at("measure").get<std::size_t>(),
                ov.at("candidates").get<std::size_t>()};
  return c;
}

// Loads a config file (optional) and applies --set overrides in order.
inline ExperimentConfig load_config(const std::string& file,
                                    const std::vector<std::string>& sets) {
  json doc = ExperimentConfig{}.to_json();
  if (!file.empty()) {
    json user = json::parse(read_text_file(file));
    config_detail::overlay(doc, user, "");
  }
  for (const auto& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    }
    config_detail::set_path(doc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return ExperimentConfig::from_json(doc);
}

}  // namespace sage
