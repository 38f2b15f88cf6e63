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
#include <vector>

#include "sage/graph.hpp"
#include "sage/params.hpp"
#include "sage/rng.hpp"

namespace sage {

// Parameter leaf that is trainable or frozen depending on the caller; lets
// one forward definition serve training and inference.
inline Var leaf(Graph& g, const ParameterStore& ps, const std::string& name,
                bool trainable) {
  return trainable ? g.param(ps, name) : g.frozen(ps, name);
}

// --- dense layer --------------------------------------------------------------

inline void dense_register(ParameterStore& ps, const std::string& prefix,
                           std::size_t in, std::size_t out, RngStream rng,
                           bool zero_init = false) {
  Tensor& w = ps.create(prefix + ".w", {in, out});
  ps.create(prefix + ".b", {out});
  if (!zero_init) init_linear(w, rng.derive("w"));
}

inline Var dense(Graph& g, const ParameterStore& ps, const std::string& prefix,
                 Var x, bool trainable) {
  Var w = leaf(g, ps, prefix + ".w", trainable);
  Var b = leaf(g, ps, prefix + ".b", trainable);
  return g.add(g.matmul(x, w), b);
}

// --- layer norm ----------------------------------------------------------------

inline void layernorm_register(ParameterStore& ps, const std::string& prefix,
                               std::size_t d) {
  Tensor& gain = ps.create(prefix + ".g", {d});
  ps.create(prefix + ".b", {d});
  for (double& x : gain.v) x = 1.0;
}

inline Var layernorm(Graph& g, const ParameterStore& ps,
                     const std::string& prefix, Var x, bool trainable) {
  return g.layernorm(x, leaf(g, ps, prefix + ".g", trainable),
                     leaf(g, ps, prefix + ".b", trainable));
}

// --- MLP -------------------------------------------------------------------------

// widths = {in, h1, ..., out}. Hidden layers are Linear -> LayerNorm -> GELU,
// the final layer is plain Linear.
struct MlpDef {
  std::string prefix;
  std::vector<std::size_t> widths;
  bool hidden_layernorm = true;
  bool zero_init_last = false;
};

inline void mlp_register(ParameterStore& ps, const MlpDef& def, RngStream rng) {
  for (std::size_t i = 0; i + 1 < def.widths.size(); ++i) {
    std::string lp = def.prefix + ".l" + std::to_string(i);
    bool last = i + 2 == def.widths.size();
    dense_register(ps, lp, def.widths[i], def.widths[i + 1],
                   rng.derive(static_cast<std::uint64_t>(i)),
                   last && def.zero_init_last);
    if (!last && def.hidden_layernorm) {
      layernorm_register(ps, lp + ".ln", def.widths[i + 1]);
    }
  }
}

inline Var mlp_apply(Graph& g, const ParameterStore& ps, const MlpDef& def,
                     Var x, bool trainable) {
  Var h = x;
  for (std::size_t i = 0; i + 1 < def.widths.size(); ++i) {
    std::string lp = def.prefix + ".l" + std::to_string(i);
    h = dense(g, ps, lp, h, trainable);
    bool last = i + 2 == def.widths.size();
    if (!last) {
      if (def.hidden_layernorm) h = layernorm(g, ps, lp + ".ln", h, trainable);
      h = g.gelu(h);
    }
  }
  return h;
}

// --- tape-free forwards ---------------------------------------------------------
// Used on frozen models in inference loops; must mirror the graph ops exactly.

inline Tensor raw_dense(const ParameterStore& ps, const std::string& prefix,
                        const Tensor& x, bool row_pure = false) {
  const Tensor& w = ps.at(prefix + ".w");
  const Tensor& b = ps.at(prefix + ".b");
  std::size_t k = w.dim(0), n = w.dim(1), r = x.rows();
  if (x.last() != k) {
    throw StructuralError("raw_dense: inner dims differ " + x.shape_str());
  }
  std::vector<std::size_t> oshape = x.shape;
  oshape.back() = n;
  Tensor out(oshape);
  if (row_pure) {
    matmul_rowpure(r, n, k, x.data(), w.data(), out.data());
  } else {
    gemm(false, false, r, n, k, 1.0, x.data(), w.data(), 0.0, out.data());
  }
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.v[i * n + j] += b.v[j];
  }
  return out;
}

inline void raw_gelu_inplace(Tensor& x) {
  for (double& v : x.v) {
    v = 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440));
  }
}

inline Tensor raw_layernorm(const ParameterStore& ps, const std::string& prefix,
                            const Tensor& x, double eps = 1e-5) {
  const Tensor& gain = ps.at(prefix + ".g");
  const Tensor& bias = ps.at(prefix + ".b");
  std::size_t d = x.last(), r = x.rows();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double dd = row[j] - mu;
      var += dd * dd;
    }
    var /= static_cast<double>(d);
    double isd = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      out.v[i * d + j] = (row[j] - mu) * isd * gain.v[j] + bias.v[j];
    }
  }
  return out;
}

inline Tensor raw_mlp(const ParameterStore& ps, const MlpDef& def,
                      const Tensor& x, bool row_pure = false) {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < def.widths.size(); ++i) {
    std::string lp = def.prefix + ".l" + std::to_string(i);
    h = raw_dense(ps, lp, h, row_pure);
    bool last = i + 2 == def.widths.size();
    if (!last) {
      if (def.hidden_layernorm) h = raw_layernorm(ps, lp + ".ln", h);
      raw_gelu_inplace(h);
    }
  }
  return h;
}

// --- attention masks ----------------------------------------------------------

// Additive masks use a large negative fill rather than -inf so fully shifted
// rows stay NaN-free.
inline constexpr double kMaskFill = -1e30;

inline Tensor causal_mask(std::size_t t) {
  Tensor m({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      m.v[i * t + j] = j <= i ? 0.0 : kMaskFill;
    }
  }
  return m;
}

// Block-causal: position i may attend to any position j with
// block(j) <= block(i).
inline Tensor block_causal_mask(const std::vector<std::size_t>& block_of) {
  std::size_t t = block_of.size();
  Tensor m({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      m.v[i * t + j] = block_of[j] <= block_of[i] ? 0.0 : kMaskFill;
    }
  }
  return m;
}

// --- transformer encoder ----------------------------------------------------------

struct TransformerDef;
inline Tensor raw_transformer(const ParameterStore& ps,
                              const TransformerDef& def, const Tensor& x,
                              const Tensor* mask);

struct TransformerDef {
  std::string prefix;
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  bool final_layernorm = true;
};

inline void transformer_register(ParameterStore& ps, const TransformerDef& def,
                                 RngStream rng) {
  if (def.d_model % def.heads != 0) {
    throw ConfigError("transformer: d_model must divide into heads");
  }
  for (std::size_t l = 0; l < def.layers; ++l) {
    std::string lp = def.prefix + ".blk" + std::to_string(l);
    RngStream lr = rng.derive(static_cast<std::uint64_t>(l));
    layernorm_register(ps, lp + ".ln1", def.d_model);
    dense_register(ps, lp + ".q", def.d_model, def.d_model, lr.derive("q"));
    dense_register(ps, lp + ".k", def.d_model, def.d_model, lr.derive("k"));
    dense_register(ps, lp + ".v", def.d_model, def.d_model, lr.derive("v"));
    dense_register(ps, lp + ".o", def.d_model, def.d_model, lr.derive("o"));
    layernorm_register(ps, lp + ".ln2", def.d_model);
    dense_register(ps, lp + ".f1", def.d_model, def.ff_mult * def.d_model,
                   lr.derive("f1"));
    dense_register(ps, lp + ".f2", def.ff_mult * def.d_model, def.d_model,
                   lr.derive("f2"));
  }
  if (def.final_layernorm) {
    layernorm_register(ps, def.prefix + ".lnf", def.d_model);
  }
}

// x: [B, T, D]; mask: optional additive [T, T].
inline Var transformer_apply(Graph& g, const ParameterStore& ps,
                             const TransformerDef& def, Var x,
                             const Tensor* mask, bool trainable) {
  const Tensor& tx = g.val(x);
  if (tx.rank() != 3 || tx.dim(2) != def.d_model) {
    throw StructuralError("transformer: input must be [B,T," +
                          std::to_string(def.d_model) + "], got " +
                          tx.shape_str());
  }
  std::size_t dh = def.d_model / def.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Var mask_in{-1};
  if (mask != nullptr) mask_in = g.input(*mask);

  Var h = x;
  for (std::size_t l = 0; l < def.layers; ++l) {
    std::string lp = def.prefix + ".blk" + std::to_string(l);
    Var n1 = layernorm(g, ps, lp + ".ln1", h, trainable);
    Var q = g.split_heads(dense(g, ps, lp + ".q", n1, trainable), def.heads);
    Var k = g.split_heads(dense(g, ps, lp + ".k", n1, trainable), def.heads);
    Var v = g.split_heads(dense(g, ps, lp + ".v", n1, trainable), def.heads);
    Var scores = g.scale(g.bmm(q, g.transpose_last2(k)), inv_sqrt_dh);
    if (mask != nullptr) scores = g.add(scores, mask_in);
    Var att = g.bmm(g.softmax_last(scores), v);
    Var proj = dense(g, ps, lp + ".o", g.merge_heads(att, def.heads), trainable);
    h = g.add(h, proj);
    Var n2 = layernorm(g, ps, lp + ".ln2", h, trainable);
    Var f = dense(g, ps, lp + ".f2", g.gelu(dense(g, ps, lp + ".f1", n2, trainable)),
                  trainable);
    h = g.add(h, f);
  }
  if (def.final_layernorm) {
    h = layernorm(g, ps, def.prefix + ".lnf", h, trainable);
  }
  return h;
}

// Tape-free mirror of transformer_apply for frozen-model inference.
inline Tensor raw_transformer(const ParameterStore& ps,
                              const TransformerDef& def, const Tensor& x,
                              const Tensor* mask) {
  if (x.rank() != 3 || x.dim(2) != def.d_model) {
    throw StructuralError("raw_transformer: bad input " + x.shape_str());
  }
  std::size_t b = x.dim(0), t = x.dim(1), d = def.d_model;
  std::size_t heads = def.heads, dh = d / heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  auto split = [&](const Tensor& m) {
    Tensor out({b * heads, t, dh});
    for (std::size_t bb = 0; bb < b; ++bb) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t tt = 0; tt < t; ++tt) {
          const double* src = m.data() + (bb * t + tt) * d + h * dh;
          double* dst = out.data() + ((bb * heads + h) * t + tt) * dh;
          for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
        }
      }
    }
    return out;
  };

  Tensor h = x;
  for (std::size_t l = 0; l < def.layers; ++l) {
    std::string lp = def.prefix + ".blk" + std::to_string(l);
    Tensor n1 = raw_layernorm(ps, lp + ".ln1", h);
    Tensor q = split(raw_dense(ps, lp + ".q", n1));
    Tensor k = split(raw_dense(ps, lp + ".k", n1));
    Tensor v = split(raw_dense(ps, lp + ".v", n1));
    Tensor att({b * heads, t, dh});
    std::vector<double> scores(t * t);
    for (std::size_t bh = 0; bh < b * heads; ++bh) {
      const double* qm = q.data() + bh * t * dh;
      const double* km = k.data() + bh * t * dh;
      const double* vm = v.data() + bh * t * dh;
      double* om = att.data() + bh * t * dh;
      gemm(false, true, t, t, dh, inv_sqrt_dh, qm, km, 0.0, scores.data());
      for (std::size_t i = 0; i < t; ++i) {
        double* row = scores.data() + i * t;
        if (mask != nullptr) {
          for (std::size_t j = 0; j < t; ++j) row[j] += mask->v[i * t + j];
        }
        double mx = row[0];
        for (std::size_t j = 1; j < t; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          row[j] = std::exp(row[j] - mx);
          denom += row[j];
        }
        double inv = 1.0 / denom;
        for (std::size_t j = 0; j < t; ++j) row[j] *= inv;
      }
      gemm(false, false, t, dh, t, 1.0, scores.data(), vm, 0.0, om);
    }
    Tensor merged({b, t, d});
    for (std::size_t bb = 0; bb < b; ++bb) {
      for (std::size_t hh = 0; hh < heads; ++hh) {
        for (std::size_t tt = 0; tt < t; ++tt) {
          const double* src = att.data() + ((bb * heads + hh) * t + tt) * dh;
          double* dst = merged.data() + (bb * t + tt) * d + hh * dh;
          for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
        }
      }
    }
    Tensor proj = raw_dense(ps, lp + ".o", merged);
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += proj.v[i];
    Tensor n2 = raw_layernorm(ps, lp + ".ln2", h);
    Tensor f1 = raw_dense(ps, lp + ".f1", n2);
    raw_gelu_inplace(f1);
    Tensor f2 = raw_dense(ps, lp + ".f2", f1);
    for (std::size_t i = 0; i < h.numel(); ++i) h.v[i] += f2.v[i];
  }
  if (def.final_layernorm) h = raw_layernorm(ps, def.prefix + ".lnf", h);
  return h;
}

}  // namespace sage
