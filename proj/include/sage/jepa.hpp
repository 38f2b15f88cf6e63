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
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sage/dataset.hpp"
#include "sage/graph.hpp"
#include "sage/nn.hpp"
#include "sage/optim.hpp"
#include "sage/rng.hpp"

namespace sage {

// Stage I: masked context windows, online encoder, EMA teacher and a
// mask-token transformer readout predicting teacher latents at future
// offsets.
struct JepaConfig {
  std::size_t d_z = 32;
  std::size_t hidden = 128;
  std::size_t window = 16;        // W
  std::size_t k_max = 5;          // largest future offset
  std::size_t k_per_batch = 3;    // |K|
  double feature_mask_ratio = 0.30;
  double time_mask_ratio = 0.10;
  double gamma = 1.0;             // variance hinge target
  double var_eps = 1e-4;
  double lambda_var = 1.0;
  double lambda_cov = 0.1;
  std::size_t pred_layers = 2;
  std::size_t pred_heads = 4;
  std::size_t steps = 4000;
  std::size_t batch = 64;
  OptimConfig optim{1e-4, 1e-6, 200, 4000, 0.9, 0.999, 1e-8, 1e-4, 1.0};

  MlpDef encoder_def(const std::string& prefix) const {
    return MlpDef{prefix, {kStateDim, hidden, hidden, d_z}};
  }
  TransformerDef predictor_def() const {
    return TransformerDef{"pred.tf", d_z, pred_layers, pred_heads, 4};
  }
  MlpDef head_def() const {
    return MlpDef{"pred.head", {2 * d_z, 4 * d_z, d_z}, false};
  }
};

// --- window sampling ---------------------------------------------------------

struct SampledWindow {
  std::size_t traj = 0;
  std::size_t t = 0;                  // window start
  std::vector<std::size_t> offsets;   // sorted subset of {1..k_max}
};

// Uniform over all valid (trajectory, t) pairs; offsets drawn without
// replacement and kept sorted.
inline SampledWindow sample_window(const OfflineDataset& ds,
                                   const JepaConfig& cfg, RngStream& rng) {
  std::vector<std::size_t> valid(ds.trajectories.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    std::size_t n_states = ds.trajectories[i].states.size();
    if (n_states >= cfg.window + cfg.k_max) {
      valid[i] = n_states - cfg.window - cfg.k_max + 1;
    }
    total += valid[i];
  }
  if (total == 0) {
    throw ConfigError("sample_window: no trajectory long enough for W + K_max");
  }
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(total));
  SampledWindow w;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (pick < valid[i]) {
      w.traj = i;
      w.t = pick;
      break;
    }
    pick -= valid[i];
  }
  // Partial Fisher-Yates over {1..k_max}, then sort.
  std::vector<std::size_t> pool(cfg.k_max);
  for (std::size_t i = 0; i < cfg.k_max; ++i) pool[i] = i + 1;
  for (std::size_t i = 0; i < cfg.k_per_batch; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  w.offsets.assign(pool.begin(),
                   pool.begin() + static_cast<long>(cfg.k_per_batch));
  std::sort(w.offsets.begin(), w.offsets.end());
  return w;
}

// --- masked views -------------------------------------------------------------

struct MaskedView {
  Tensor states;                    // [W, dim_s], masked entries zeroed
  std::vector<std::uint8_t> feature_mask;  // [W*dim_s], 1 = zeroed
  std::vector<std::uint8_t> time_mask;     // [W], 1 = whole step zeroed
};

inline MaskedView make_view(const Tensor& window, double feature_ratio,
                            double time_ratio, RngStream& rng) {
  std::size_t w = window.dim(0), d = window.dim(1);
  MaskedView v;
  v.states = window;
  v.feature_mask.assign(w * d, 0);
  v.time_mask.assign(w, 0);
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      if (rng.uniform() < feature_ratio) v.feature_mask[t * d + j] = 1;
    }
  }
  for (std::size_t t = 0; t < w; ++t) {
    if (rng.uniform() < time_ratio) v.time_mask[t] = 1;
  }
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      if (v.feature_mask[t * d + j] || v.time_mask[t]) {
        v.states.v[t * d + j] = 0.0;
      }
    }
  }
  return v;
}

// Two independently masked views of one context window. Draws are taken
// sequentially from the caller's stream.
inline std::pair<MaskedView, MaskedView> make_views(const Tensor& window,
                                                    double feature_ratio,
                                                    double time_ratio,
                                                    RngStream& rng) {
  if (feature_ratio < 0.0 || feature_ratio >= 1.0 || time_ratio < 0.0 ||
      time_ratio >= 1.0) {
    throw ConfigError("make_views: mask ratios must lie in [0,1)");
  }
  MaskedView v1 = make_view(window, feature_ratio, time_ratio, rng);
  MaskedView v2 = make_view(window, feature_ratio, time_ratio, rng);
  return {v1, v2};
}

// --- VICReg losses --------------------------------------------------------------

// (1/d) sum_j max(0, gamma - sqrt(Var(Z_:j) + eps)); unbiased column variance.
inline Var loss_vicreg_var(Graph& g, Var z, double gamma = 1.0,
                           double eps = 1e-4) {
  const Tensor& t = g.val(z);
  std::size_t b = t.rows(), d = t.last();
  if (b < 2) throw ConfigError("loss_vicreg_var: needs at least 2 rows");
  Var mean = g.scale(g.colsum(z), 1.0 / static_cast<double>(b));
  Var centered = g.sub(z, mean);
  Var var = g.scale(g.colsum(g.square(centered)),
                    1.0 / static_cast<double>(b - 1));
  Var sd = g.sqrt_(g.add_const(var, eps));
  Var hinge = g.relu(g.add_const(g.neg(sd), gamma));
  return g.scale(g.sum_all(hinge), 1.0 / static_cast<double>(d));
}

// (1/d) sum_{i != j} C_ij^2 with C the unbiased covariance of Z's columns.
inline Var loss_vicreg_cov(Graph& g, Var z) {
  const Tensor& t = g.val(z);
  std::size_t b = t.rows(), d = t.last();
  if (b < 2) throw ConfigError("loss_vicreg_cov: needs at least 2 rows");
  Var mean = g.scale(g.colsum(z), 1.0 / static_cast<double>(b));
  Var centered = g.sub(z, mean);
  Var cov = g.scale(g.matmul(g.transpose_last2(centered), centered),
                    1.0 / static_cast<double>(b - 1));
  Tensor offdiag({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      offdiag.v[i * d + j] = i == j ? 0.0 : 1.0;
    }
  }
  Var masked = g.mul(cov, g.input(offdiag));
  return g.scale(g.sum_all(g.square(masked)), 1.0 / static_cast<double>(d));
}

// --- model -----------------------------------------------------------------------

struct JepaModel {
  JepaConfig cfg;
  ParameterStore params;   // enc.* and pred.*
  ParameterStore teacher;  // enc.* (EMA copy)
  std::vector<double> mu_z, sigma_z;  // diagonal latent whitening

  bool whitened() const { return !mu_z.empty(); }
};

inline ParameterStore encoder_subset(const ParameterStore& full) {
  ParameterStore out;
  for (const auto& name : full.names()) {
    if (name.rfind("enc.", 0) == 0) out.create(name, full.at(name).shape).v =
        full.at(name).v;
  }
  return out;
}

inline JepaModel jepa_init(const JepaConfig& cfg, RngStream rng) {
  JepaModel m;
  m.cfg = cfg;
  mlp_register(m.params, cfg.encoder_def("enc"), rng.derive("enc"));
  init_embedding(m.params.create("pred.mask_token", {cfg.d_z}),
                 rng.derive("mask_token"));
  init_embedding(m.params.create("pred.pos", {cfg.window + cfg.k_max, cfg.d_z}),
                 rng.derive("pos"));
  init_embedding(m.params.create("pred.kemb", {cfg.k_max, cfg.d_z}),
                 rng.derive("kemb"));
  transformer_register(m.params, cfg.predictor_def(), rng.derive("tf"));
  mlp_register(m.params, cfg.head_def(), rng.derive("head"));
  m.teacher = encoder_subset(m.params);  // exact copy at step 0
  return m;
}

// Per-step latents for a batch of windows: [B, W, dim_s] -> [B, W, d_z].
inline Var jepa_encode(Graph& g, const JepaModel& m, Var states,
                       bool trainable) {
  const Tensor& t = g.val(states);
  std::size_t b = t.dim(0), w = t.dim(1);
  Var flat = g.reshape(states, {b * w, kStateDim});
  Var z = mlp_apply(g, m.params, m.cfg.encoder_def("enc"), flat, trainable);
  return g.reshape(z, {b, w, m.cfg.d_z});
}

// Predicted teacher latents for each batch item and offset.
// view: [B, W, dim_s]; offsets: B*k_per_batch, row-major per item.
// Returns [B*k_per_batch, d_z].
inline Var jepa_predict_targets(Graph& g, const JepaModel& m, Var view,
                                const std::vector<std::size_t>& offsets,
                                bool trainable) {
  const JepaConfig& cfg = m.cfg;
  const Tensor& tv = g.val(view);
  std::size_t b = tv.dim(0);
  std::size_t kpb = offsets.size() / b;
  if (offsets.size() != b * kpb) {
    throw StructuralError("jepa_predict_targets: offsets do not tile batch");
  }
  std::vector<std::size_t> pos_idx(offsets.size());
  std::vector<std::size_t> k_idx(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] < 1 || offsets[i] > cfg.k_max) {
      throw StructuralError("jepa_predict_targets: offset beyond K_max");
    }
    pos_idx[i] = cfg.window - 1 + offsets[i];
    k_idx[i] = offsets[i] - 1;
  }

  Var z_ctx = jepa_encode(g, m, view, trainable);
  std::vector<std::size_t> ctx_pos(cfg.window);
  for (std::size_t i = 0; i < cfg.window; ++i) ctx_pos[i] = i;
  Var pos_table_ctx = leaf(g, m.params, "pred.pos", trainable);
  Var ctx_tokens = g.add(z_ctx, g.embed(pos_table_ctx, ctx_pos));

  // One learnable prediction token, placed at position (W-1)+k.
  Var mask_token = leaf(g, m.params, "pred.mask_token", trainable);
  Var pos_table = leaf(g, m.params, "pred.pos", trainable);
  Var pred_pos = g.reshape(g.embed(pos_table, pos_idx), {b, kpb, cfg.d_z});
  Var pred_tokens = g.add(pred_pos, mask_token);

  // Context tokens attend among themselves; each prediction token sees the
  // full context plus itself, never the other prediction tokens. Readouts
  // are therefore independent per offset.
  std::size_t tt = cfg.window + kpb;
  Tensor mask({tt, tt});
  for (std::size_t i = 0; i < tt; ++i) {
    for (std::size_t j = 0; j < tt; ++j) {
      bool ok = j < cfg.window || i == j;
      mask.v[i * tt + j] = ok ? 0.0 : kMaskFill;
    }
  }
  Var tokens = g.concat_t(ctx_tokens, pred_tokens);
  Var h = transformer_apply(g, m.params, cfg.predictor_def(), tokens, &mask,
                            trainable);
  Var h_pred = g.reshape(g.slice_t(h, cfg.window, kpb),
                         {b * kpb, cfg.d_z});
  Var kemb = g.embed(leaf(g, m.params, "pred.kemb", trainable), k_idx);
  Var head_in = g.concat_last(h_pred, kemb);
  return mlp_apply(g, m.params, cfg.head_def(), head_in, trainable);
}

// Teacher latents, no gradient: [N, dim_s] -> [N, d_z].
inline Var jepa_teacher_encode(Graph& g, const JepaModel& m, Var states) {
  return mlp_apply(g, m.teacher, m.cfg.encoder_def("enc"), states, false);
}

// --- batched stage-I loss ---------------------------------------------------------

struct JepaBatch {
  Tensor view1, view2;               // [B, W, dim_s]
  Tensor window;                     // unmasked [B, W, dim_s]
  Tensor targets;                    // [B*kpb, dim_s]
  std::vector<std::size_t> offsets;  // B*kpb
};

inline JepaBatch jepa_sample_batch(const OfflineDataset& ds,
                                   const JepaConfig& cfg, RngStream rng) {
  JepaBatch batch;
  std::size_t b = cfg.batch, w = cfg.window, kpb = cfg.k_per_batch;
  batch.view1 = Tensor({b, w, kStateDim});
  batch.view2 = Tensor({b, w, kStateDim});
  batch.window = Tensor({b, w, kStateDim});
  batch.targets = Tensor({b * kpb, kStateDim});
  batch.offsets.resize(b * kpb);
  for (std::size_t i = 0; i < b; ++i) {
    RngStream ir = rng.derive(i);
    RngStream sr = ir.derive("window");
    SampledWindow sw = sample_window(ds, cfg, sr);
    const Trajectory& tr = ds.trajectories[sw.traj];
    Tensor win({w, kStateDim});
    for (std::size_t t = 0; t < w; ++t) {
      Vec4 z = ds.normalize(tr.states[sw.t + t]);
      for (std::size_t j = 0; j < kStateDim; ++j) win.v[t * kStateDim + j] = z[j];
    }
    RngStream mr = ir.derive("mask");
    auto [v1, v2] = make_views(win, cfg.feature_mask_ratio,
                               cfg.time_mask_ratio, mr);
    for (std::size_t t = 0; t < w * kStateDim; ++t) {
      batch.view1.v[i * w * kStateDim + t] = v1.states.v[t];
      batch.view2.v[i * w * kStateDim + t] = v2.states.v[t];
      batch.window.v[i * w * kStateDim + t] = win.v[t];
    }
    for (std::size_t j = 0; j < kpb; ++j) {
      std::size_t k = sw.offsets[j];
      batch.offsets[i * kpb + j] = k;
      Vec4 tgt = ds.normalize(tr.states[sw.t + w - 1 + k]);
      for (std::size_t d = 0; d < kStateDim; ++d) {
        batch.targets.v[(i * kpb + j) * kStateDim + d] = tgt[d];
      }
    }
  }
  return batch;
}

struct JepaLossParts {
  Var total, sim, var, cov;
};

// L_sim + lambda_var * L_var + lambda_cov * L_cov over a batch. VICReg terms
// act on the stacked predicted embeddings of both views.
inline JepaLossParts jepa_stage1_loss(Graph& g, const JepaModel& m,
                                      const JepaBatch& batch, bool trainable) {
  const JepaConfig& cfg = m.cfg;
  std::size_t rows = batch.targets.dim(0);

  Var v1 = g.input(batch.view1);
  Var v2 = g.input(batch.view2);
  Var zhat1 = jepa_predict_targets(g, m, v1, batch.offsets, trainable);
  Var zhat2 = jepa_predict_targets(g, m, v2, batch.offsets, trainable);

  Var tgt_states = g.input(batch.targets);
  Var zbar = jepa_teacher_encode(g, m, tgt_states);

  Var sq1 = g.sum_all(g.square(g.sub(zhat1, zbar)));
  Var sq2 = g.sum_all(g.square(g.sub(zhat2, zbar)));
  Var sim = g.scale(g.add(sq1, sq2), 1.0 / static_cast<double>(rows));

  // Stack both views' predictions: [2*rows, d_z].
  Var stacked = g.reshape(
      g.concat_t(g.reshape(zhat1, {1, rows, cfg.d_z}),
                 g.reshape(zhat2, {1, rows, cfg.d_z})),
      {2 * rows, cfg.d_z});
  Var var = loss_vicreg_var(g, stacked, cfg.gamma, cfg.var_eps);
  Var cov = loss_vicreg_cov(g, stacked);

  Var total = g.add(sim, g.add(g.scale(var, cfg.lambda_var),
                               g.scale(cov, cfg.lambda_cov)));
  return {total, sim, var, cov};
}

// --- training -------------------------------------------------------------------

struct JepaTrainLog {
  std::vector<std::string> csv_rows;  // step,lr,mu,loss_sim,loss_var,loss_cov,total
  std::vector<double> totals;
};

inline Tensor encode_all_states(const JepaModel& m, const OfflineDataset& ds);

// Alg: sample window + offsets, mask two views, encode, predict teacher
// targets, apply stage-I loss, update online parameters, EMA the teacher.
// Returns the frozen teacher inside the model plus fitted latent whitening.
inline JepaTrainLog train_jepa(JepaModel& m, OfflineDataset& ds,
                               RngStream rng) {
  const JepaConfig& cfg = m.cfg;
  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  JepaTrainLog log;
  RngStream data_rng = rng.derive("batches");
  char row[256];
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    JepaBatch batch = jepa_sample_batch(ds, cfg, data_rng.derive(step));
    Graph g;
    JepaLossParts parts = jepa_stage1_loss(g, m, batch, true);
    double total = g.scalar(parts.total);
    if (!std::isfinite(total)) {
      throw NumericError("train_jepa: non-finite loss at step " +
                         std::to_string(step));
    }
    GradMap grads = g.backward(parts.total);
    opt.step(m.params, grads);
    double mu = ema_momentum_schedule(step, cfg.steps);
    ParameterStore student = encoder_subset(m.params);
    ema_update(m.teacher, student, mu);

    std::snprintf(row, sizeof row, "%zu,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g", step,
                  opt.current_lr(m.params), mu, g.scalar(parts.sim),
                  g.scalar(parts.var), g.scalar(parts.cov), total);
    log.csv_rows.emplace_back(row);
    log.totals.push_back(total);
  }

  // Fit diagonal latent whitening under the frozen teacher.
  Tensor z = encode_all_states(m, ds);
  std::size_t n = z.dim(0), d = z.dim(1);
  m.mu_z.assign(d, 0.0);
  m.sigma_z.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m.mu_z[j] += z.v[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) m.mu_z[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double dd = z.v[i * d + j] - m.mu_z[j];
      m.sigma_z[j] += dd * dd;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    m.sigma_z[j] = std::sqrt(m.sigma_z[j] / static_cast<double>(n));
    if (m.sigma_z[j] < 1e-8) m.sigma_z[j] = 1e-8;  // collapse guard
  }
  ds.mu_z = m.mu_z;
  ds.sigma_z = m.sigma_z;
  return log;
}

// Teacher latents for every state in the dataset: [N, d_z].
inline Tensor encode_all_states(const JepaModel& m, const OfflineDataset& ds) {
  std::size_t n = 0;
  for (const auto& tr : ds.trajectories) n += tr.states.size();
  Tensor states({n, kStateDim});
  std::size_t r = 0;
  for (const auto& tr : ds.trajectories) {
    for (const auto& s : tr.states) {
      Vec4 z = ds.normalize(s);
      for (std::size_t j = 0; j < kStateDim; ++j) states.v[r * kStateDim + j] = z[j];
      ++r;
    }
  }
  Graph g;
  Var out = jepa_teacher_encode(g, m, g.input(std::move(states)));
  return g.val(out);
}

// --- checkpoint layout -------------------------------------------------------------

inline ParameterStore jepa_to_store(const JepaModel& m) {
  ParameterStore all;
  for (const auto& name : m.params.names()) {
    all.create(name, m.params.at(name).shape).v = m.params.at(name).v;
  }
  for (const auto& name : m.teacher.names()) {
    all.create("teacher." + name, m.teacher.at(name).shape).v =
        m.teacher.at(name).v;
  }
  all.create("whiten.mu", {m.mu_z.size()}).v = m.mu_z;
  all.create("whiten.sigma", {m.sigma_z.size()}).v = m.sigma_z;
  all.step_count = m.cfg.steps;
  return all;
}

inline JepaModel jepa_from_store(const JepaConfig& cfg,
                                 const ParameterStore& all) {
  JepaModel m;
  m.cfg = cfg;
  for (const auto& name : all.names()) {
    if (name.rfind("teacher.", 0) == 0) {
      m.teacher.create(name.substr(8), all.at(name).shape).v = all.at(name).v;
    } else if (name == "whiten.mu") {
      m.mu_z = all.at(name).v;
    } else if (name == "whiten.sigma") {
      m.sigma_z = all.at(name).v;
    } else {
      m.params.create(name, all.at(name).shape).v = all.at(name).v;
    }
  }
  return m;
}

}  // namespace sage
