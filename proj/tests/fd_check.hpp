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

// Test-only oracle: central finite differences over parameter entries,
// independent of the reverse-mode path it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sage/graph.hpp"
#include "sage/params.hpp"
#include "sage/rng.hpp"

namespace sage::testing {

struct FdResult {
  double max_rel_err = 0.0;
  std::size_t checks = 0;
  std::string worst_site;
};

// build(g, ps) must construct the loss graph from the current store values.
template <typename BuildFn>
FdResult fd_check(ParameterStore& ps, BuildFn&& build,
                  std::size_t probes_per_param, RngStream rng,
                  double h = 1e-5) {
  GradMap grads;
  {
    Graph g;
    Var loss = build(g, ps);
    grads = g.backward(loss);
  }
  auto eval = [&]() {
    Graph g;
    return g.scalar(build(g, ps));
  };
  FdResult res;
  for (const auto& name : ps.names()) {
    Tensor& t = ps.at(name);
    std::size_t n = t.numel();
    RngStream pr = rng.derive(name);
    for (std::size_t p = 0; p < std::min(probes_per_param, n); ++p) {
      std::size_t i =
          probes_per_param >= n ? p : static_cast<std::size_t>(pr.uniform_int(n));
      double saved = t.v[i];
      t.v[i] = saved + h;
      double up = eval();
      t.v[i] = saved - h;
      double dn = eval();
      t.v[i] = saved;
      double fd = (up - dn) / (2.0 * h);
      double ad = grads.count(name) ? grads.at(name).v[i] : 0.0;
      double denom = std::max({std::fabs(fd), std::fabs(ad), 1e-6});
      double rel = std::fabs(fd - ad) / denom;
      ++res.checks;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_site = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace sage::testing
