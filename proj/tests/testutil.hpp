// Copyright 2026 The cvegan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cvegan/graph.hpp"
#include "cvegan/tensor.hpp"

namespace cvegan::test {

// Central finite-difference check of d(scalar fn)/d(input) against the
// autodiff gradient. `probes` entries of the input are perturbed; when
// probes <= 0 every entry is checked. Returns the worst relative error.
inline double fd_gradcheck(const std::function<Var(Graph&, Var)>& fn, const Tensor& x,
                           int probes = -1, double h = 1e-6, Rng* rng = nullptr) {
  Graph g;
  Var in = g.input(x);
  Var out = fn(g, in);
  g.backward(out);
  const Tensor& analytic = g.grad(in);

  std::vector<int64_t> idx;
  if (probes <= 0 || probes >= x.numel()) {
    for (int64_t i = 0; i < x.numel(); ++i) idx.push_back(i);
  } else {
    Rng fallback(7);
    Rng& r = rng ? *rng : fallback;
    for (int p = 0; p < probes; ++p) idx.push_back(r.uniform_int(0, x.numel() - 1));
  }

  double worst = 0.0;
  for (int64_t i : idx) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    Graph gp, gm;
    const double fp = gp.val(fn(gp, gp.constant(xp)))[0];
    const double fm = gm.val(fn(gm, gm.constant(xm)))[0];
    const double fd = (fp - fm) / (2.0 * h);
    const double ga = analytic[i];
    const double denom = std::max({std::abs(fd), std::abs(ga), 1e-6});
    worst = std::max(worst, std::abs(fd - ga) / denom);
  }
  return worst;
}

}  // namespace cvegan::test
