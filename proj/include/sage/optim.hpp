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
#include <cstdint>
#include <string>

#include "sage/common.hpp"
#include "sage/params.hpp"

namespace sage {

// Linear warmup 0 -> base over `warmup` steps, cosine decay base -> lr_min
// over the remainder.
inline double cosine_lr(std::uint64_t step, std::uint64_t warmup,
                        std::uint64_t total, double base, double lr_min) {
  if (total <= warmup) {
    throw ConfigError("cosine_lr: total steps must exceed warmup");
  }
  if (step > total) {
    throw ConfigError("cosine_lr: step beyond total");
  }
  if (step < warmup) {
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  double t = static_cast<double>(step - warmup) /
             static_cast<double>(total - warmup);
  return lr_min + 0.5 * (base - lr_min) * (1.0 + std::cos(M_PI * t));
}

// Cosine ramp of the teacher momentum from mu0 at step 0 to mu1 at `total`.
inline double ema_momentum_schedule(std::uint64_t step, std::uint64_t total,
                                    double mu0 = 0.99, double mu1 = 0.9999) {
  if (total == 0) return mu1;
  double t = static_cast<double>(step) / static_cast<double>(total);
  if (t > 1.0) t = 1.0;
  return mu1 + (mu0 - mu1) * 0.5 * (1.0 + std::cos(M_PI * t));
}

// teacher <- mu * teacher + (1 - mu) * student, entrywise over all parameters.
inline void ema_update(ParameterStore& teacher, const ParameterStore& student,
                       double mu) {
  if (teacher.names() != student.names()) {
    throw StructuralError("ema_update: parameter names differ");
  }
  for (const auto& name : teacher.names()) {
    Tensor& t = teacher.at(name);
    const Tensor& s = student.at(name);
    if (t.shape != s.shape) {
      throw StructuralError("ema_update: shape mismatch on " + name);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.v[i] = mu * t.v[i] + (1.0 - mu) * s.v[i];
    }
  }
}

struct OptimConfig {
  double lr_base = 1e-4;
  double lr_min = 1e-6;
  std::uint64_t warmup = 5000;
  std::uint64_t total = 200000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
};

// AdamW moments, created lazily to mirror the parameter shapes.
class OptimState {
 public:
  OptimConfig cfg;

  explicit OptimState(OptimConfig c = {}) : cfg(c) {}

  // Clips the global gradient norm in place, then applies one decoupled
  // weight-decay Adam update. Returns the pre-clip gradient norm.
  double step(ParameterStore& params, GradMap& grads) {
    for (const auto& name : params.names()) {
      if (!grads.count(name)) {
        throw StructuralError("adamw: missing gradient for " + name);
      }
    }
    double sq = 0.0;
    for (auto& [name, g] : grads) {
      for (double x : g.v) {
        sq += x * x;
      }
    }
    if (!std::isfinite(sq)) {
      throw NumericError("adamw: non-finite gradient norm");
    }
    double norm = std::sqrt(sq);
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
      double s = cfg.clip_norm / norm;
      for (auto& [name, g] : grads) {
        for (double& x : g.v) x *= s;
      }
    }

    params.step_count += 1;
    double t = static_cast<double>(params.step_count);
    double lr = cosine_lr(std::min<std::uint64_t>(params.step_count, cfg.total),
                          cfg.warmup, cfg.total, cfg.lr_base, cfg.lr_min);
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (const auto& name : params.names()) {
      Tensor& p = params.at(name);
      const Tensor& g = grads.at(name);
      if (g.shape != p.shape) {
        throw StructuralError("adamw: gradient shape mismatch on " + name);
      }
      if (!m_.has(name)) {
        m_.create(name, p.shape);
        v_.create(name, p.shape);
      }
      Tensor& m = m_.at(name);
      Tensor& v = v_.at(name);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
        v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
        double mhat = m.v[i] / bc1;
        double vhat = v.v[i] / bc2;
        p.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                        cfg.weight_decay * p.v[i]);
      }
    }
    return norm;
  }

  double current_lr(const ParameterStore& params) const {
    return cosine_lr(std::min<std::uint64_t>(params.step_count, cfg.total),
                     cfg.warmup, cfg.total, cfg.lr_base, cfg.lr_min);
  }

 private:
  ParameterStore m_;
  ParameterStore v_;
};

}  // namespace sage
