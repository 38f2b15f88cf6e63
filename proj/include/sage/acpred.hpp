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

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sage/dataset.hpp"
#include "sage/graph.hpp"
#include "sage/jepa.hpp"
#include "sage/nn.hpp"
#include "sage/optim.hpp"

namespace sage {

// Stage II: block-causal transformer over [z_t, a_t] bundles in the frozen,
// whitened latent space. Predictions are latent deltas, so a zeroed head is
// the identity on latents.
struct AcConfig {
  std::size_t d_z = 32;
  std::size_t hidden = 64;
  std::size_t window = 8;  // transitions per training window
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t rollout_h = 4;
  double margin = 0.10;
  double lambda_ro = 1.0;
  double lambda_neg = 1.0;
  std::size_t steps = 3000;
  std::size_t batch = 48;
  OptimConfig optim{1e-4, 1e-6, 150, 3000, 0.9, 0.999, 1e-8, 1e-4, 1.0};

  TransformerDef tf_def() const {
    return TransformerDef{"ac.tf", hidden, layers, heads, 4};
  }
};

struct AcModel {
  AcConfig cfg;
  ParameterStore params;
};

inline AcModel ac_init(const AcConfig& cfg, RngStream rng) {
  AcModel m;
  m.cfg = cfg;
  dense_register(m.params, "ac.embed", cfg.d_z + kActionDim, cfg.hidden,
                 rng.derive("embed"));
  init_embedding(m.params.create("ac.type", {cfg.hidden}), rng.derive("type"));
  init_embedding(m.params.create("ac.pos", {cfg.window, cfg.hidden}),
                 rng.derive("pos"));
  transformer_register(m.params, cfg.tf_def(), rng.derive("tf"));
  // Head: LN -> Linear(hidden, 2*hidden) -> GELU -> Linear(2*hidden, d_z).
  // The output layer starts at zero, making the predictor the identity.
  layernorm_register(m.params, "ac.head.ln", cfg.hidden);
  dense_register(m.params, "ac.head.l0", cfg.hidden, 2 * cfg.hidden,
                 rng.derive("head0"));
  dense_register(m.params, "ac.head.l1", 2 * cfg.hidden, cfg.d_z,
                 rng.derive("head1"), /*zero_init=*/true);
  return m;
}

// z: [B, W+1, d_z] whitened latents, a: [B, W, dim_a].
// Returns one-step predictions zhat_{t+1..t+W}: [B, W, d_z].
inline Var ac_predict_next(Graph& g, const AcModel& m, Var z, Var a,
                           bool trainable) {
  const AcConfig& cfg = m.cfg;
  const Tensor& tz = g.val(z);
  const Tensor& ta = g.val(a);
  if (tz.rank() != 3 || ta.rank() != 3 || tz.dim(2) != cfg.d_z ||
      ta.dim(2) != kActionDim || tz.dim(0) != ta.dim(0)) {
    throw StructuralError("ac_predict_next: bad shapes " + tz.shape_str() +
                          " / " + ta.shape_str());
  }
  std::size_t w = ta.dim(1);
  if (w == 0) throw StructuralError("ac_predict_next: empty window");
  if (tz.dim(1) != w + 1 && tz.dim(1) != w) {
    throw StructuralError("ac_predict_next: need W or W+1 latents");
  }
  if (w > cfg.window) {
    throw StructuralError("ac_predict_next: window exceeds configured length");
  }
  std::size_t b = tz.dim(0);

  Var z_in = tz.dim(1) == w ? z : g.slice_t(z, 0, w);
  Var bundles = g.concat_last(z_in, a);  // [B, W, d_z + dim_a]
  Var tok = dense(g, m.params, "ac.embed", bundles, trainable);
  tok = g.add(tok, leaf(g, m.params, "ac.type", trainable));
  std::vector<std::size_t> pos(w);
  for (std::size_t i = 0; i < w; ++i) pos[i] = i;
  tok = g.add(tok, g.embed(leaf(g, m.params, "ac.pos", trainable), pos));

  Tensor mask = causal_mask(w);
  Var h = transformer_apply(g, m.params, cfg.tf_def(), tok, &mask, trainable);

  Var hn = layernorm(g, m.params, "ac.head.ln", h, trainable);
  Var delta = dense(g, m.params, "ac.head.l1",
                    g.gelu(dense(g, m.params, "ac.head.l0", hn, trainable)),
                    trainable);
  (void)b;
  return g.add(z_in, delta);
}

// Teacher-forced L1: mean over the batch of sum_j ||zhat - z||_1.
inline Var ac_loss_tf(Graph& g, Var zhat, Var z_next) {
  const Tensor& t = g.val(zhat);
  if (!t.same_shape(g.val(z_next))) {
    throw StructuralError("ac_loss_tf: shape mismatch");
  }
  std::size_t b = t.dim(0);
  return g.scale(g.sum_all(g.abs_(g.sub(zhat, z_next))),
                 1.0 / static_cast<double>(b));
}

// Autoregressive rollout from z_0 with ground-truth actions, re-tokenising
// predictions exactly like ground-truth latents. Returns zhat_{t+H_ro}.
inline Var ac_rollout(Graph& g, const AcModel& m, Var z0, Var a,
                      std::size_t h_ro, bool trainable) {
  if (h_ro < 1) throw StructuralError("ac_rollout: H_ro must be >= 1");
  const Tensor& ta = g.val(a);
  if (ta.dim(1) < h_ro) {
    throw StructuralError("ac_rollout: not enough actions for H_ro");
  }
  std::size_t dz = m.cfg.d_z;
  const Tensor& tz = g.val(z0);
  if (tz.rank() != 3 || tz.dim(1) != 1) {
    throw StructuralError("ac_rollout: z0 must be [B,1,d_z]");
  }
  Var seq = z0;  // grows to [B, r+1, d_z]
  for (std::size_t r = 0; r < h_ro; ++r) {
    Var acts = g.slice_t(a, 0, r + 1);
    Var preds = ac_predict_next(g, m, seq, acts, trainable);  // [B, r+1, d_z]
    Var last = g.slice_t(preds, r, 1);                        // [B, 1, d_z]
    seq = g.concat_t(seq, last);
  }
  (void)dz;
  return g.slice_t(seq, h_ro, 1);  // [B, 1, d_z]
}

inline Var ac_loss_ro(Graph& g, const AcModel& m, Var z, Var a,
                      std::size_t h_ro, bool trainable) {
  Var z0 = g.slice_t(z, 0, 1);
  Var zh = ac_rollout(g, m, z0, a, h_ro, trainable);
  Var target = g.slice_t(z, h_ro, 1);
  std::size_t b = g.val(z).dim(0);
  return g.scale(g.sum_all(g.abs_(g.sub(zh, target))),
                 1.0 / static_cast<double>(b));
}

// Uniform fixed-point-free permutation (rejection from uniform permutations).
inline std::vector<std::size_t> permute_actions_indices(std::size_t b,
                                                        RngStream& rng) {
  if (b < 2) {
    throw ConfigError("permute_actions: batch must have at least 2 items");
  }
  for (;;) {
    std::vector<std::size_t> p = rng.permutation(b);
    bool ok = true;
    for (std::size_t i = 0; i < b; ++i) {
      if (p[i] == i) {
        ok = false;
        break;
      }
    }
    if (ok) return p;
  }
}

inline Tensor apply_permutation_rows(const Tensor& a,
                                     const std::vector<std::size_t>& pi) {
  // a: [B, ...]; row block i of the result is block pi[i] of the input.
  std::size_t b = a.dim(0), inner = a.numel() / b;
  Tensor out(a.shape);
  for (std::size_t i = 0; i < b; ++i) {
    const double* src = a.data() + pi[i] * inner;
    double* dst = out.data() + i * inner;
    for (std::size_t j = 0; j < inner; ++j) dst[j] = src[j];
  }
  return out;
}

struct AcNegParts {
  Var loss;       // (1/B) sum_i [m - E_neg^i]_+
  Var e_neg;      // [B] per-sample negative errors
};

// Hinge on prediction error under batch-permuted actions; ground-truth
// latents stay fixed on both branches.
inline AcNegParts ac_loss_neg(Graph& g, const AcModel& m, Var z,
                              const Tensor& actions_permuted, Var z_next,
                              double margin, bool trainable) {
  Var a_perm = g.input(actions_permuted);
  Var zhat_neg = ac_predict_next(g, m, z, a_perm, trainable);
  Var e = g.sum_except_first(g.abs_(g.sub(zhat_neg, z_next)));  // [B]
  std::size_t b = g.val(e).dim(0);
  Var viol = g.relu(g.add_const(g.neg(e), margin));
  return {g.scale(g.sum_all(viol), 1.0 / static_cast<double>(b)), e};
}

// --- batches ---------------------------------------------------------------------

struct AcBatch {
  Tensor z;  // [B, W+1, d_z] whitened teacher latents
  Tensor a;  // [B, W, dim_a]
};

inline Tensor whiten_rows(const Tensor& z, const std::vector<double>& mu,
                          const std::vector<double>& sigma) {
  std::size_t d = z.last(), r = z.rows();
  if (mu.size() != d || sigma.size() != d) {
    throw StructuralError("whiten_rows: statistics do not match latent dim");
  }
  Tensor out = z;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.v[i * d + j] = (out.v[i * d + j] - mu[j]) / sigma[j];
    }
  }
  return out;
}

// Whitened teacher latents for a flat batch of raw states: [N, 4] -> [N, d_z].
inline Tensor encode_whitened(const JepaModel& jepa, const OfflineDataset& ds,
                              const Tensor& raw_states) {
  if (!jepa.whitened()) {
    throw ConfigError("encode_whitened: whitening statistics not fitted");
  }
  std::size_t n = raw_states.rows();
  Tensor norm({n, kStateDim});
  for (std::size_t i = 0; i < n; ++i) {
    Vec4 s{raw_states.v[i * 4], raw_states.v[i * 4 + 1],
           raw_states.v[i * 4 + 2], raw_states.v[i * 4 + 3]};
    Vec4 z = ds.normalize(s);
    for (int j = 0; j < 4; ++j) norm.v[i * 4 + j] = z[j];
  }
  Tensor lat = raw_mlp(jepa.teacher, jepa.cfg.encoder_def("enc"), norm);
  return whiten_rows(lat, jepa.mu_z, jepa.sigma_z);
}

inline AcBatch ac_sample_batch(const OfflineDataset& ds, const JepaModel& jepa,
                               const AcConfig& cfg, RngStream rng) {
  std::size_t w = cfg.window, b = cfg.batch;
  std::vector<std::size_t> valid(ds.trajectories.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    std::size_t L = ds.trajectories[i].length();
    if (L >= w) valid[i] = L - w + 1;
    total += valid[i];
  }
  if (total == 0) throw ConfigError("ac_sample_batch: no window of length W");

  Tensor raw({b * (w + 1), kStateDim});
  AcBatch batch;
  batch.a = Tensor({b, w, kActionDim});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t pick = static_cast<std::size_t>(rng.uniform_int(total));
    std::size_t traj = 0, t = 0;
    for (std::size_t j = 0; j < valid.size(); ++j) {
      if (pick < valid[j]) {
        traj = j;
        t = pick;
        break;
      }
      pick -= valid[j];
    }
    const Trajectory& tr = ds.trajectories[traj];
    for (std::size_t s = 0; s <= w; ++s) {
      for (std::size_t d = 0; d < kStateDim; ++d) {
        raw.v[(i * (w + 1) + s) * kStateDim + d] = tr.states[t + s][d];
      }
    }
    for (std::size_t s = 0; s < w; ++s) {
      for (std::size_t d = 0; d < kActionDim; ++d) {
        batch.a.v[(i * w + s) * kActionDim + d] = tr.actions[t + s][d];
      }
    }
  }
  Tensor z = encode_whitened(jepa, ds, raw);
  batch.z = Tensor({b, w + 1, cfg.d_z}, std::move(z.v));
  return batch;
}

// --- training --------------------------------------------------------------------

struct AcTrainLog {
  std::vector<std::string> csv_rows;  // step,lr,loss_tf,loss_ro,loss_neg,total,hinge_frac
  std::vector<double> totals;
  std::vector<double> hinge_fracs;
};

inline AcTrainLog train_ac(AcModel& m, const OfflineDataset& ds,
                           const JepaModel& jepa, RngStream rng) {
  const AcConfig& cfg = m.cfg;
  OptimConfig oc = cfg.optim;
  oc.total = cfg.steps;
  OptimState opt(oc);
  AcTrainLog log;
  RngStream data_rng = rng.derive("batches");
  char row[256];
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    RngStream sr = data_rng.derive(step);
    AcBatch batch = ac_sample_batch(ds, jepa, cfg, sr);
    RngStream pr = sr.derive("perm");
    auto pi = permute_actions_indices(cfg.batch, pr);
    Tensor a_perm = apply_permutation_rows(batch.a, pi);

    Graph g;
    Var z = g.input(batch.z);
    Var a = g.input(batch.a);
    Var z_next = g.slice_t(z, 1, cfg.window);
    Var zhat = ac_predict_next(g, m, z, a, true);
    Var l_tf = ac_loss_tf(g, zhat, z_next);
    Var l_ro = ac_loss_ro(g, m, z, a, cfg.rollout_h, true);
    AcNegParts neg = ac_loss_neg(g, m, z, a_perm, z_next, cfg.margin, true);
    Var total = g.add(l_tf, g.add(g.scale(l_ro, cfg.lambda_ro),
                                  g.scale(neg.loss, cfg.lambda_neg)));
    double total_v = g.scalar(total);
    if (!std::isfinite(total_v)) {
      throw NumericError("train_ac: non-finite loss at step " +
                         std::to_string(step));
    }
    const Tensor& e_neg = g.val(neg.e_neg);
    double active = 0.0;
    for (double e : e_neg.v) {
      if (e < cfg.margin) active += 1.0;
    }
    double hinge_frac = active / static_cast<double>(e_neg.numel());

    GradMap grads = g.backward(total);
    opt.step(m.params, grads);

    std::snprintf(row, sizeof row, "%zu,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g", step,
                  opt.current_lr(m.params), g.scalar(l_tf), g.scalar(l_ro),
                  g.scalar(neg.loss), total_v, hinge_frac);
    log.csv_rows.emplace_back(row);
    log.totals.push_back(total_v);
    log.hinge_fracs.push_back(hinge_frac);
  }
  return log;
}

// --- tape-free single-transition forward -------------------------------------------

// f_eta on a batch of independent single transitions:
// z [N, d_z] whitened, a [N, dim_a] -> predicted next latents [N, d_z].
// Matches the graph path with a length-1 window (self-attention weight is
// exactly 1, so Q/K drop out).
inline Tensor ac_predict_single(const AcModel& m, const Tensor& z,
                                const Tensor& a) {
  const AcConfig& cfg = m.cfg;
  if (z.last() != cfg.d_z || a.last() != kActionDim || z.rows() != a.rows()) {
    throw StructuralError("ac_predict_single: bad shapes " + z.shape_str() +
                          " / " + a.shape_str());
  }
  std::size_t n = z.rows();
  Tensor bundle({n, cfg.d_z + kActionDim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.d_z; ++j) {
      bundle.v[i * (cfg.d_z + kActionDim) + j] = z.v[i * cfg.d_z + j];
    }
    for (std::size_t j = 0; j < kActionDim; ++j) {
      bundle.v[i * (cfg.d_z + kActionDim) + cfg.d_z + j] =
          a.v[i * kActionDim + j];
    }
  }
  Tensor tok = raw_dense(m.params, "ac.embed", bundle);
  const Tensor& type = m.params.at("ac.type");
  const Tensor& pos = m.params.at("ac.pos");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
      tok.v[i * cfg.hidden + j] += type.v[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
      tok.v[i * cfg.hidden + j] += pos.v[j];  // position 0
    }
  }
  TransformerDef def = cfg.tf_def();
  Tensor h = std::move(tok);
  for (std::size_t l = 0; l < def.layers; ++l) {
    std::string lp = def.prefix + ".blk" + std::to_string(l);
    Tensor n1 = raw_layernorm(m.params, lp + ".ln1", h);
    // T = 1: attention output reduces to the value projection.
    Tensor att = raw_dense(m.params, lp + ".v", n1);
    Tensor proj = raw_dense(m.params, lp + ".o", att);
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += proj.v[i];
    Tensor n2 = raw_layernorm(m.params, lp + ".ln2", h);
    Tensor f1 = raw_dense(m.params, lp + ".f1", n2);
    raw_gelu_inplace(f1);
    Tensor f2 = raw_dense(m.params, lp + ".f2", f1);
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += f2.v[i];
  }
  if (def.final_layernorm) h = raw_layernorm(m.params, def.prefix + ".lnf", h);
  Tensor hn = raw_layernorm(m.params, "ac.head.ln", h);
  Tensor f0 = raw_dense(m.params, "ac.head.l0", hn);
  raw_gelu_inplace(f0);
  Tensor delta = raw_dense(m.params, "ac.head.l1", f0);
  Tensor out = z;
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += delta.v[i];
  return out;
}

// --- checkpoint layout --------------------------------------------------------------

inline ParameterStore ac_to_store(const AcModel& m) {
  ParameterStore all = m.params.clone();
  all.step_count = m.cfg.steps;
  return all;
}

inline AcModel ac_from_store(const AcConfig& cfg, const ParameterStore& all) {
  AcModel m;
  m.cfg = cfg;
  for (const auto& name : all.names()) {
    m.params.create(name, all.at(name).shape).v = all.at(name).v;
  }
  return m;
}

}  // namespace sage
