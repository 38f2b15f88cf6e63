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
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "sage/common.hpp"
#include "sage/rng.hpp"

namespace sage {

struct StatReport {
  double delta = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 0.5;
  double t_stat = 0.0;
  double nu = 0.0;  // Welch-Satterthwaite degrees of freedom
  std::string test;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  bool degenerate = false;
};

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_var(const std::vector<double>& x, double mu) {
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  return s / static_cast<double>(x.size() - 1);
}

// Welch's t-test, one-sided H1: mean(a) > mean(b), with the
// Welch-Satterthwaite degrees of freedom and a 95% CI for the difference.
inline StatReport welch_test(const std::vector<double>& a,
                             const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ConfigError("welch_test: both samples need n >= 2");
  }
  StatReport r;
  r.test = "welch";
  r.n_a = a.size();
  r.n_b = b.size();
  double ma = mean_of(a), mb = mean_of(b);
  double va = sample_var(a, ma), vb = sample_var(b, mb);
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  r.delta = ma - mb;
  double se2 = va / na + vb / nb;
  if (se2 == 0.0) {
    // Zero variance in both samples: flagged, p = 0.5 by convention when the
    // means agree, else a hard 0/1 decision.
    r.degenerate = true;
    r.p_value = r.delta == 0.0 ? 0.5 : (r.delta > 0.0 ? 0.0 : 1.0);
    r.ci_lo = r.ci_hi = r.delta;
    return r;
  }
  double se = std::sqrt(se2);
  double t = r.delta / se;
  double nu = se2 * se2 /
              (va * va / (na * na * (na - 1.0)) +
               vb * vb / (nb * nb * (nb - 1.0)));
  r.t_stat = t;
  r.nu = nu;
  boost::math::students_t dist(nu);
  r.p_value = 1.0 - boost::math::cdf(dist, t);
  double q = boost::math::quantile(dist, 0.975);
  r.ci_lo = r.delta - q * se;
  r.ci_hi = r.delta + q * se;
  return r;
}

// Exact rank-based AUROC: P(score_pos > score_neg) + 0.5 * P(tie), computed
// with midranks.
inline double auroc(const std::vector<double>& positives,
                    const std::vector<double>& negatives) {
  if (positives.empty() || negatives.empty()) {
    throw ConfigError("auroc: both sets must be nonempty");
  }
  struct Item {
    double score;
    bool pos;
  };
  std::vector<Item> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, true});
  for (double s : negatives) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].pos) rank_sum_pos += midrank;
    }
    i = j;
  }
  double np = static_cast<double>(positives.size());
  double nn = static_cast<double>(negatives.size());
  double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

// --- bootstrap over evaluation episodes ---------------------------------------------

struct BootstrapInput {
  // per task: per-episode scores for methods A and B
  std::vector<std::vector<double>> task_scores_a;
  std::vector<std::vector<double>> task_scores_b;
};

// Nonparametric bootstrap of the task-average improvement Delta_T = mean over
// tasks of (mean_a - mean_b); episodes are resampled with replacement,
// independently per method and task. Percentile CI; one-sided p for
// H1: Delta_T > 0.
inline StatReport bootstrap_improvement(const BootstrapInput& in,
                                        std::size_t replicates,
                                        RngStream rng) {
  if (in.task_scores_a.empty() ||
      in.task_scores_a.size() != in.task_scores_b.size()) {
    throw ConfigError("bootstrap: task sets must match and be nonempty");
  }
  for (std::size_t t = 0; t < in.task_scores_a.size(); ++t) {
    if (in.task_scores_a[t].empty() || in.task_scores_b[t].empty()) {
      throw ConfigError("bootstrap: empty episode set");
    }
  }
  std::size_t n_tasks = in.task_scores_a.size();
  StatReport r;
  r.test = "bootstrap";
  r.n_a = replicates;
  r.n_b = n_tasks;
  double point = 0.0;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    point += mean_of(in.task_scores_a[t]) - mean_of(in.task_scores_b[t]);
  }
  point /= static_cast<double>(n_tasks);
  r.delta = point;

  std::vector<double> deltas(replicates);
  for (std::size_t rep = 0; rep < replicates; ++rep) {
    RngStream rr = rng.derive(rep);
    double d = 0.0;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const auto& sa = in.task_scores_a[t];
      const auto& sb = in.task_scores_b[t];
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < sa.size(); ++i) {
        ma += sa[rr.uniform_int(sa.size())];
      }
      for (std::size_t i = 0; i < sb.size(); ++i) {
        mb += sb[rr.uniform_int(sb.size())];
      }
      d += ma / static_cast<double>(sa.size()) -
           mb / static_cast<double>(sb.size());
    }
    deltas[rep] = d / static_cast<double>(n_tasks);
  }
  std::sort(deltas.begin(), deltas.end());
  auto quantile = [&](double q) {
    double idx = q * static_cast<double>(replicates - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(idx));
    std::size_t hi = std::min(lo + 1, replicates - 1);
    double w = idx - static_cast<double>(lo);
    return (1.0 - w) * deltas[lo] + w * deltas[hi];
  };
  r.ci_lo = quantile(0.025);
  r.ci_hi = quantile(0.975);
  std::size_t non_positive = 0;
  for (double d : deltas) {
    if (d <= 0.0) ++non_positive;
  }
  r.p_value = (1.0 + static_cast<double>(non_positive)) /
              (1.0 + static_cast<double>(replicates));
  return r;
}

}  // namespace sage
