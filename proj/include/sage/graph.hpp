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

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sage/blas.hpp"
#include "sage/common.hpp"
#include "sage/params.hpp"
#include "sage/tensor.hpp"

namespace sage {

// Handle to a node inside a Graph.
struct Var {
  int id = -1;
};

// Reverse-mode tape over dense tensors. Ops evaluate eagerly at creation;
// backward() walks the tape in reverse and accumulates gradients into the
// parameter leaves. One graph is built, used and dropped per step.
class Graph {
 public:
  // --- leaves ---------------------------------------------------------------

  Var input(Tensor t) { return push(std::move(t), {}, nullptr, false); }

  Var scalar_input(double x) { return input(Tensor::scalar(x)); }

  // Trainable leaf bound to a ParameterStore entry (copied in; gradients are
  // reported under the given name).
  Var param(const ParameterStore& ps, const std::string& name) {
    Var v = push(ps.at(name), {}, nullptr, true);
    nodes_[static_cast<std::size_t>(v.id)].param_name = name;
    param_ids_.push_back(v.id);
    return v;
  }

  // Frozen leaf: same values, no gradient.
  Var frozen(const ParameterStore& ps, const std::string& name) {
    return input(ps.at(name));
  }

  // --- access ---------------------------------------------------------------

  const Tensor& val(Var v) const { return node(v).value; }

  double scalar(Var v) const {
    const Tensor& t = node(v).value;
    if (t.numel() != 1) {
      throw StructuralError("scalar() on tensor of shape " + t.shape_str());
    }
    return t.v[0];
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // --- elementwise ------------------------------------------------------------

  Var add(Var a, Var b) { return binary_bcast("add", a, b, /*is_mul=*/false); }
  Var mul(Var a, Var b) { return binary_bcast("mul", a, b, /*is_mul=*/true); }

  Var sub(Var a, Var b) { return add(a, neg(b)); }

  Var neg(Var a) {
    Tensor out = node(a).value;
    for (double& x : out.v) x = -x;
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] -= go.v[i];
    });
  }

  Var scale(Var a, double c) {
    Tensor out = node(a).value;
    for (double& x : out.v) x *= c;
    return push(std::move(out), {a}, [c](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += c * go.v[i];
    });
  }

  Var add_const(Var a, double c) {
    Tensor out = node(a).value;
    for (double& x : out.v) x += c;
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += go.v[i];
    });
  }

  Var gelu(Var a) {
    const Tensor& in = node(a).value;
    Tensor out = in;
    for (double& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& x = g.node_value(g.parents(id)[0]);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) {
        double xi = x.v[i];
        double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
        double pdf = std::exp(-0.5 * xi * xi) * kInvSqrt2Pi;
        ga.v[i] += go.v[i] * (cdf + xi * pdf);
      }
    });
  }

  Var relu(Var a) {
    const Tensor& in = node(a).value;
    Tensor out = in;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& x = g.node_value(g.parents(id)[0]);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) {
        if (x.v[i] > 0.0) ga.v[i] += go.v[i];
      }
    });
  }

  Var abs_(Var a) {
    const Tensor& in = node(a).value;
    Tensor out = in;
    for (double& x : out.v) x = std::fabs(x);
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& x = g.node_value(g.parents(id)[0]);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) {
        double s = x.v[i] > 0.0 ? 1.0 : (x.v[i] < 0.0 ? -1.0 : 0.0);
        ga.v[i] += s * go.v[i];
      }
    });
  }

  Var square(Var a) {
    const Tensor& in = node(a).value;
    Tensor out = in;
    for (double& x : out.v) x = x * x;
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& x = g.node_value(g.parents(id)[0]);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) {
        ga.v[i] += 2.0 * x.v[i] * go.v[i];
      }
    });
  }

  Var sqrt_(Var a) {
    const Tensor& in = node(a).value;
    Tensor out = in;
    for (double& x : out.v) {
      if (x < 0.0) throw NumericError("sqrt of negative value");
      x = std::sqrt(x);
    }
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& y = g.node_value(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) {
        ga.v[i] += go.v[i] / (2.0 * y.v[i]);
      }
    });
  }

  // --- linear algebra ---------------------------------------------------------

  // a: [..., K] (leading dims flattened to rows) x w: [K, N] -> [..., N].
  Var matmul(Var a, Var w) {
    const Tensor& ta = node(a).value;
    const Tensor& tw = node(w).value;
    if (tw.rank() != 2) {
      throw StructuralError("matmul: weight must be rank-2, got " +
                            tw.shape_str());
    }
    std::size_t k = tw.dim(0), n = tw.dim(1);
    if (ta.last() != k) {
      throw StructuralError("matmul: inner dims differ " + ta.shape_str() +
                            " x " + tw.shape_str());
    }
    std::size_t r = ta.rows();
    std::vector<std::size_t> oshape = ta.shape;
    oshape.back() = n;
    Tensor out(oshape);
    gemm(false, false, r, n, k, 1.0, ta.data(), tw.data(), 0.0, out.data());
    return push(std::move(out), {a, w}, [r, n, k](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& ta = g.node_value(g.parents(id)[0]);
      const Tensor& tw = g.node_value(g.parents(id)[1]);
      if (g.wants_grad(g.parents(id)[0])) {
        Tensor& ga = g.grad_buf(g.parents(id)[0]);
        gemm(false, true, r, k, n, 1.0, go.data(), tw.data(), 1.0, ga.data());
      }
      if (g.wants_grad(g.parents(id)[1])) {
        Tensor& gw = g.grad_buf(g.parents(id)[1]);
        gemm(true, false, k, n, r, 1.0, ta.data(), go.data(), 1.0, gw.data());
      }
    });
  }

  // Batched product: [B, M, K] x [B, K, N] -> [B, M, N].
  Var bmm(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(1)) {
      throw StructuralError("bmm: incompatible shapes " + ta.shape_str() +
                            " x " + tb.shape_str());
    }
    std::size_t bs = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(2);
    Tensor out({bs, m, n});
    for (std::size_t i = 0; i < bs; ++i) {
      gemm(false, false, m, n, k, 1.0, ta.data() + i * m * k,
           tb.data() + i * k * n, 0.0, out.data() + i * m * n);
    }
    return push(std::move(out), {a, b}, [bs, m, k, n](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& ta = g.node_value(g.parents(id)[0]);
      const Tensor& tb = g.node_value(g.parents(id)[1]);
      if (g.wants_grad(g.parents(id)[0])) {
        Tensor& ga = g.grad_buf(g.parents(id)[0]);
        for (std::size_t i = 0; i < bs; ++i) {
          gemm(false, true, m, k, n, 1.0, go.data() + i * m * n,
               tb.data() + i * k * n, 1.0, ga.data() + i * m * k);
        }
      }
      if (g.wants_grad(g.parents(id)[1])) {
        Tensor& gb = g.grad_buf(g.parents(id)[1]);
        for (std::size_t i = 0; i < bs; ++i) {
          gemm(true, false, k, n, m, 1.0, ta.data() + i * m * k,
               go.data() + i * m * n, 1.0, gb.data() + i * k * n);
        }
      }
    });
  }

  // [B, M, N] -> [B, N, M]; rank-2 tensors transpose as a single batch.
  Var transpose_last2(Var a) {
    const Tensor& ta = node(a).value;
    if (ta.rank() != 2 && ta.rank() != 3) {
      throw StructuralError("transpose_last2: rank must be 2 or 3, got " +
                            ta.shape_str());
    }
    std::size_t bs = ta.rank() == 3 ? ta.dim(0) : 1;
    std::size_t m = ta.dim(ta.rank() - 2), n = ta.dim(ta.rank() - 1);
    std::vector<std::size_t> oshape = ta.shape;
    std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
    Tensor out(oshape);
    for (std::size_t b = 0; b < bs; ++b) {
      const double* src = ta.data() + b * m * n;
      double* dst = out.data() + b * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
      }
    }
    return push(std::move(out), {a}, [bs, m, n](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t b = 0; b < bs; ++b) {
        const double* src = go.data() + b * m * n;
        double* dst = ga.data() + b * m * n;
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t i = 0; i < m; ++i) dst[i * n + j] += src[j * m + i];
        }
      }
    });
  }

  // [B, T, D] -> [B*heads, T, D/heads]
  Var split_heads(Var x, std::size_t heads) {
    const Tensor& t = node(x).value;
    if (t.rank() != 3 || t.dim(2) % heads != 0) {
      throw StructuralError("split_heads: bad shape " + t.shape_str());
    }
    std::size_t b = t.dim(0), s = t.dim(1), d = t.dim(2), dh = d / heads;
    Tensor out({b * heads, s, dh});
    for (std::size_t bb = 0; bb < b; ++bb) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t tt = 0; tt < s; ++tt) {
          const double* src = t.data() + (bb * s + tt) * d + h * dh;
          double* dst = out.data() + ((bb * heads + h) * s + tt) * dh;
          for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
        }
      }
    }
    return push(std::move(out), {x}, [b, heads, s, d, dh](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& gx = g.grad_buf(g.parents(id)[0]);
      for (std::size_t bb = 0; bb < b; ++bb) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t tt = 0; tt < s; ++tt) {
            const double* src = go.data() + ((bb * heads + h) * s + tt) * dh;
            double* dst = gx.data() + (bb * s + tt) * d + h * dh;
            for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }

  // [B*heads, T, Dh] -> [B, T, heads*Dh]
  Var merge_heads(Var x, std::size_t heads) {
    const Tensor& t = node(x).value;
    if (t.rank() != 3 || t.dim(0) % heads != 0) {
      throw StructuralError("merge_heads: bad shape " + t.shape_str());
    }
    std::size_t b = t.dim(0) / heads, s = t.dim(1), dh = t.dim(2);
    std::size_t d = heads * dh;
    Tensor out({b, s, d});
    for (std::size_t bb = 0; bb < b; ++bb) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t tt = 0; tt < s; ++tt) {
          const double* src = t.data() + ((bb * heads + h) * s + tt) * dh;
          double* dst = out.data() + (bb * s + tt) * d + h * dh;
          for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
        }
      }
    }
    return push(std::move(out), {x}, [b, heads, s, d, dh](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& gx = g.grad_buf(g.parents(id)[0]);
      for (std::size_t bb = 0; bb < b; ++bb) {
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t tt = 0; tt < s; ++tt) {
            const double* src = go.data() + (bb * s + tt) * d + h * dh;
            double* dst = gx.data() + ((bb * heads + h) * s + tt) * dh;
            for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }

  // --- normalisation / softmax -------------------------------------------------

  // Softmax over the last axis; numerically shifted by the row max.
  Var softmax_last(Var a) {
    const Tensor& in = node(a).value;
    std::size_t c = in.last(), r = in.rows();
    Tensor out = in;
    for (std::size_t i = 0; i < r; ++i) {
      double* row = out.data() + i * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        s += row[j];
      }
      for (std::size_t j = 0; j < c; ++j) row[j] /= s;
    }
    return push(std::move(out), {a}, [r, c](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      const Tensor& y = g.node_value(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < r; ++i) {
        const double* gr = go.data() + i * c;
        const double* yr = y.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
        double* dst = ga.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  // LayerNorm over the last axis with learned gain/bias of shape [D].
  Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5) {
    const Tensor& in = node(x).value;
    std::size_t d = in.last(), r = in.rows();
    const Tensor& tg = node(gain).value;
    const Tensor& tb = node(bias).value;
    if (tg.numel() != d || tb.numel() != d) {
      throw StructuralError("layernorm: gain/bias must be [" +
                            std::to_string(d) + "]");
    }
    Tensor out(in.shape);
    Tensor xhat(in.shape);
    std::vector<double> inv_sd(r);
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = in.data() + i * d;
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
      inv_sd[i] = isd;
      for (std::size_t j = 0; j < d; ++j) {
        double xh = (row[j] - mu) * isd;
        xhat.v[i * d + j] = xh;
        out.v[i * d + j] = xh * tg.v[j] + tb.v[j];
      }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto isd = std::make_shared<std::vector<double>>(std::move(inv_sd));
    return push(std::move(out), {x, gain, bias},
                [r, d, xh, isd](Graph& g, int id) {
                  const Tensor& go = g.grad(id);
                  const Tensor& tg = g.node_value(g.parents(id)[1]);
                  if (g.wants_grad(g.parents(id)[1])) {
                    Tensor& gg = g.grad_buf(g.parents(id)[1]);
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gg.v[j] += go.v[i * d + j] * xh->v[i * d + j];
                      }
                    }
                  }
                  if (g.wants_grad(g.parents(id)[2])) {
                    Tensor& gb = g.grad_buf(g.parents(id)[2]);
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < d; ++j) {
                        gb.v[j] += go.v[i * d + j];
                      }
                    }
                  }
                  if (g.wants_grad(g.parents(id)[0])) {
                    Tensor& gx = g.grad_buf(g.parents(id)[0]);
                    for (std::size_t i = 0; i < r; ++i) {
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        double dxh = go.v[i * d + j] * tg.v[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh->v[i * d + j];
                      }
                      mean_dxh /= static_cast<double>(d);
                      mean_dxh_xh /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        double dxh = go.v[i * d + j] * tg.v[j];
                        gx.v[i * d + j] +=
                            (*isd)[i] * (dxh - mean_dxh -
                                         xh->v[i * d + j] * mean_dxh_xh);
                      }
                    }
                  }
                });
  }

  // --- reductions ---------------------------------------------------------------

  Var sum_all(Var a) {
    const Tensor& in = node(a).value;
    double s = 0.0;
    for (double x : in.v) s += x;
    return push(Tensor::scalar(s), {a}, [](Graph& g, int id) {
      const double go = g.grad(id).v[0];
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (double& x : ga.v) x += go;
    });
  }

  Var mean_all(Var a) {
    std::size_t n = node(a).value.numel();
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  // [R, C] -> [C], summing over rows.
  Var colsum(Var a) {
    const Tensor& in = node(a).value;
    std::size_t c = in.last(), r = in.rows();
    Tensor out({c});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out.v[j] += in.v[i * c + j];
    }
    return push(std::move(out), {a}, [r, c](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga.v[i * c + j] += go.v[j];
      }
    });
  }

  // [B, ...] -> [B], summing everything but the first axis.
  Var sum_except_first(Var a) {
    const Tensor& in = node(a).value;
    if (in.rank() < 1) throw StructuralError("sum_except_first: rank 0");
    std::size_t b = in.dim(0), inner = in.numel() / std::max<std::size_t>(b, 1);
    Tensor out({b});
    for (std::size_t i = 0; i < b; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < inner; ++j) s += in.v[i * inner + j];
      out.v[i] = s;
    }
    return push(std::move(out), {a}, [b, inner](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < inner; ++j) ga.v[i * inner + j] += go.v[i];
      }
    });
  }

  // --- shaping --------------------------------------------------------------------

  Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& in = node(a).value;
    if (Tensor::numel_of(shape) != in.numel()) {
      throw StructuralError("reshape: element count mismatch");
    }
    Tensor out(std::move(shape), in.v);
    return push(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < go.numel(); ++i) ga.v[i] += go.v[i];
    });
  }

  // [B, T, D] -> [B, len, D], rows t0..t0+len-1 of the middle axis.
  Var slice_t(Var a, std::size_t t0, std::size_t len) {
    const Tensor& in = node(a).value;
    if (in.rank() != 3 || t0 + len > in.dim(1)) {
      throw StructuralError("slice_t: bad slice on " + in.shape_str());
    }
    std::size_t b = in.dim(0), tt = in.dim(1), d = in.dim(2);
    Tensor out({b, len, d});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < len; ++t) {
        const double* src = in.data() + (i * tt + t0 + t) * d;
        double* dst = out.data() + (i * len + t) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
      }
    }
    return push(std::move(out), {a}, [b, tt, d, t0, len](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < len; ++t) {
          const double* src = go.data() + (i * len + t) * d;
          double* dst = ga.data() + (i * tt + t0 + t) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
    });
  }

  // Concatenate along the middle axis: [B,T1,D] + [B,T2,D] -> [B,T1+T2,D].
  Var concat_t(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(2)) {
      throw StructuralError("concat_t: incompatible " + ta.shape_str() +
                            " vs " + tb.shape_str());
    }
    std::size_t bs = ta.dim(0), t1 = ta.dim(1), t2 = tb.dim(1), d = ta.dim(2);
    Tensor out({bs, t1 + t2, d});
    for (std::size_t i = 0; i < bs; ++i) {
      double* dst = out.data() + i * (t1 + t2) * d;
      const double* s1 = ta.data() + i * t1 * d;
      const double* s2 = tb.data() + i * t2 * d;
      for (std::size_t j = 0; j < t1 * d; ++j) dst[j] = s1[j];
      for (std::size_t j = 0; j < t2 * d; ++j) dst[t1 * d + j] = s2[j];
    }
    return push(std::move(out), {a, b}, [bs, t1, t2, d](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(g.parents(id)[0])) {
        Tensor& ga = g.grad_buf(g.parents(id)[0]);
        for (std::size_t i = 0; i < bs; ++i) {
          const double* src = go.data() + i * (t1 + t2) * d;
          for (std::size_t j = 0; j < t1 * d; ++j) ga.v[i * t1 * d + j] += src[j];
        }
      }
      if (g.wants_grad(g.parents(id)[1])) {
        Tensor& gb = g.grad_buf(g.parents(id)[1]);
        for (std::size_t i = 0; i < bs; ++i) {
          const double* src = go.data() + i * (t1 + t2) * d + t1 * d;
          for (std::size_t j = 0; j < t2 * d; ++j) gb.v[i * t2 * d + j] += src[j];
        }
      }
    });
  }

  // Concatenate along the last axis; leading dims must match.
  Var concat_last(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rows() != tb.rows()) {
      throw StructuralError("concat_last: row mismatch " + ta.shape_str() +
                            " vs " + tb.shape_str());
    }
    std::size_t r = ta.rows(), d1 = ta.last(), d2 = tb.last();
    std::vector<std::size_t> oshape = ta.shape;
    oshape.back() = d1 + d2;
    Tensor out(oshape);
    for (std::size_t i = 0; i < r; ++i) {
      double* dst = out.data() + i * (d1 + d2);
      for (std::size_t j = 0; j < d1; ++j) dst[j] = ta.v[i * d1 + j];
      for (std::size_t j = 0; j < d2; ++j) dst[d1 + j] = tb.v[i * d2 + j];
    }
    return push(std::move(out), {a, b}, [r, d1, d2](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(g.parents(id)[0])) {
        Tensor& ga = g.grad_buf(g.parents(id)[0]);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < d1; ++j) {
            ga.v[i * d1 + j] += go.v[i * (d1 + d2) + j];
          }
        }
      }
      if (g.wants_grad(g.parents(id)[1])) {
        Tensor& gb = g.grad_buf(g.parents(id)[1]);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < d2; ++j) {
            gb.v[i * d2 + j] += go.v[i * (d1 + d2) + d1 + j];
          }
        }
      }
    });
  }

  // Row gather from a [V, D] table; backward scatter-adds into the table.
  Var embed(Var table, const std::vector<std::size_t>& idx) {
    const Tensor& t = node(table).value;
    if (t.rank() != 2) throw StructuralError("embed: table must be rank-2");
    std::size_t vocab = t.dim(0), d = t.dim(1);
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= vocab) {
        throw StructuralError("embed: index " + std::to_string(idx[i]) +
                              " out of range " + std::to_string(vocab));
      }
      const double* src = t.data() + idx[i] * d;
      for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] = src[j];
    }
    auto ids = std::make_shared<std::vector<std::size_t>>(idx);
    return push(std::move(out), {table}, [ids, d](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      Tensor& gt = g.grad_buf(g.parents(id)[0]);
      for (std::size_t i = 0; i < ids->size(); ++i) {
        double* dst = gt.data() + (*ids)[i] * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += go.v[i * d + j];
      }
    });
  }

  // Value passes through, gradient does not.
  Var stopgrad(Var a) {
    return push(node(a).value, {}, nullptr, false);
  }

  // --- backward --------------------------------------------------------------------

  // Accumulates d(loss)/d(param) for every parameter leaf in this graph.
  // Unreached parameters get zero gradients.
  GradMap backward(Var loss) {
    const Tensor& lt = node(loss).value;
    if (lt.numel() != 1) {
      throw StructuralError("backward: loss must be scalar, got " +
                            lt.shape_str());
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_buf(loss.id).v[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      auto& nd = nodes_[static_cast<std::size_t>(id)];
      if (!nd.needs_grad || nd.back == nullptr) continue;
      if (grads_[static_cast<std::size_t>(id)].numel() == 0) continue;
      nd.back(*this, id);
    }
    GradMap out;
    for (int pid : param_ids_) {
      auto& nd = nodes_[static_cast<std::size_t>(pid)];
      Tensor g = grads_[static_cast<std::size_t>(pid)].numel()
                     ? grads_[static_cast<std::size_t>(pid)]
                     : Tensor(nd.value.shape);
      auto [it, inserted] = out.try_emplace(nd.param_name, std::move(g));
      if (!inserted) {
        // Same parameter bound twice (e.g. weight sharing): accumulate.
        for (std::size_t i = 0; i < it->second.numel(); ++i) {
          it->second.v[i] += g.v[i];
        }
      }
    }
    return out;
  }

  // --- internals used by backward lambdas --------------------------------------

  const Tensor& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }
  const Tensor& node_value(int id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  const std::vector<int>& parents(int id) const {
    return nodes_[static_cast<std::size_t>(id)].parents;
  }
  bool wants_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].needs_grad;
  }
  Tensor& grad_buf(int id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.numel() == 0) g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    std::function<void(Graph&, int)> back;
    bool needs_grad = false;
    std::string param_name;
  };

  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw StructuralError("invalid Var handle");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Var push(Tensor value, std::vector<int> parents,
           std::function<void(Graph&, int)> back, bool force_grad = false) {
    Node nd;
    nd.value = std::move(value);
    nd.parents = std::move(parents);
    nd.back = std::move(back);
    nd.needs_grad = force_grad;
    for (int p : nd.parents) {
      if (nodes_[static_cast<std::size_t>(p)].needs_grad) nd.needs_grad = true;
    }
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push(Tensor value, std::initializer_list<Var> parents,
           std::function<void(Graph&, int)> back, bool force_grad = false) {
    std::vector<int> ps;
    for (Var p : parents) {
      node(p);  // validate
      ps.push_back(p.id);
    }
    return push(std::move(value), std::move(ps), std::move(back), force_grad);
  }

  // Elementwise binary with optional trailing-shape broadcast of b over a's
  // leading dims (or of a over b's, symmetric).
  Var binary_bcast(const char* opname, Var a, Var b, bool is_mul) {
    const Tensor* ta = &node(a).value;
    const Tensor* tb = &node(b).value;
    bool swapped = false;
    if (tb->numel() > ta->numel()) {
      std::swap(ta, tb);
      std::swap(a, b);
      swapped = true;
    }
    (void)swapped;
    // b must equal a's trailing shape (suffix) or be a scalar.
    std::size_t nb = tb->numel();
    bool suffix_ok = nb == 1;
    if (!suffix_ok) {
      if (tb->shape.size() <= ta->shape.size()) {
        suffix_ok = true;
        std::size_t off = ta->shape.size() - tb->shape.size();
        for (std::size_t i = 0; i < tb->shape.size(); ++i) {
          if (ta->shape[off + i] != tb->shape[i]) suffix_ok = false;
        }
      }
    }
    if (!suffix_ok) {
      throw StructuralError(std::string(opname) + ": shapes " +
                            node(a).value.shape_str() + " vs " +
                            node(b).value.shape_str() +
                            " are not suffix-broadcastable");
    }
    std::size_t na = ta->numel();
    Tensor out = *ta;
    const double* pb = tb->data();
    if (is_mul) {
      for (std::size_t i = 0; i < na; ++i) out.v[i] *= pb[i % nb];
    } else {
      for (std::size_t i = 0; i < na; ++i) out.v[i] += pb[i % nb];
    }
    return push(std::move(out), {a, b}, [na, nb, is_mul](Graph& g, int id) {
      const Tensor& go = g.grad(id);
      int pa = g.parents(id)[0], pb_id = g.parents(id)[1];
      const Tensor& va = g.node_value(pa);
      const Tensor& vb = g.node_value(pb_id);
      if (g.wants_grad(pa)) {
        Tensor& ga = g.grad_buf(pa);
        if (is_mul) {
          for (std::size_t i = 0; i < na; ++i) ga.v[i] += go.v[i] * vb.v[i % nb];
        } else {
          for (std::size_t i = 0; i < na; ++i) ga.v[i] += go.v[i];
        }
      }
      if (g.wants_grad(pb_id)) {
        Tensor& gb = g.grad_buf(pb_id);
        if (is_mul) {
          for (std::size_t i = 0; i < na; ++i) gb.v[i % nb] += go.v[i] * va.v[i];
        } else {
          for (std::size_t i = 0; i < na; ++i) gb.v[i % nb] += go.v[i];
        }
      }
    });
  }

  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<int> param_ids_;
};

// Builds a fresh graph, evaluates `build` to a scalar loss and runs the
// backward pass. Throws NumericError when the loss is non-finite.
template <typename BuildFn>
std::pair<double, GradMap> forward_backward(BuildFn&& build,
                                            const std::string& context = "") {
  Graph g;
  Var loss = build(g);
  double value = g.scalar(loss);
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss" +
                       (context.empty() ? "" : " at " + context));
  }
  return {value, g.backward(loss)};
}

}  // namespace sage
