#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vitc/rng.hpp"
#include "vitc/sparsity.hpp"
#include "vitc/tensor.hpp"

// Independent brute-force minimizer for the proximal subproblem
//   min_W (1/2)||W - Wbar||^2 + eta * S(W)
// over per-row scale factors, used as the oracle for the keep-or-shrink
// implementation. S is the two-level group-sparsity penalty: y times the sum
// of the ceil(s) smallest head-group squared norms plus, per head i, p_i
// times the sum of the ceil(r_i) smallest row squared norms inside the head.
// Single-level instances are the special case head_dim = 1, p = 0.

namespace vitc::testing {

struct ProxInstance {
  DiffTensor<double> w_bar;  // (num_heads*head_dim) x cols
  int64_t num_heads = 0;
  int64_t head_dim = 0;
  double s = 0, y = 0, eta = 0;
  std::vector<double> r, p;
};

inline double prox_objective(const DiffTensor<double>& w, const ProxInstance& inst) {
  double quad = 0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    double d = w.data()[i] - inst.w_bar.data()[i];
    quad += 0.5 * d * d;
  }
  auto units = unit_sqnorms(w);
  std::vector<double> groups(static_cast<size_t>(inst.num_heads), 0.0);
  double within_pen = 0;
  for (int64_t i = 0; i < inst.num_heads; ++i) {
    std::vector<double> local(units.begin() + i * inst.head_dim, units.begin() + (i + 1) * inst.head_dim);
    for (double v : local) groups[static_cast<size_t>(i)] += v;
    within_pen += inst.p[static_cast<size_t>(i)] * least_s_sqnorm(local, inst.r[static_cast<size_t>(i)]);
  }
  double group_pen = inst.y * least_s_sqnorm(groups, inst.s);
  return quad + inst.eta * (group_pen + within_pen);
}

namespace detail {

inline void all_subsets(int64_t n, int64_t k, std::vector<std::vector<int64_t>>& out) {
  out.clear();
  if (k <= 0) {
    out.push_back({});
    return;
  }
  std::vector<int64_t> comb(static_cast<size_t>(k));
  std::iota(comb.begin(), comb.end(), 0);
  while (true) {
    out.push_back(comb);
    int64_t i = k - 1;
    while (i >= 0 && comb[static_cast<size_t>(i)] == n - (k - i)) --i;
    if (i < 0) break;
    ++comb[static_cast<size_t>(i)];
    for (int64_t j = i + 1; j < k; ++j) comb[static_cast<size_t>(j)] = comb[static_cast<size_t>(j - 1)] + 1;
  }
}

}  // namespace detail

// Exhaustive enumeration over every head subset and every within-head row
// subset, applying the closed-form scaling each structure induces and
// evaluating the true objective on the result. The per-structure scalings are
// the stationary points of the piecewise-quadratic objective, so the global
// minimum over per-row scalings is attained by one of them.
inline double prox_oracle_min(const ProxInstance& inst, DiffTensor<double>* argmin = nullptr) {
  int64_t h = inst.num_heads, dh = inst.head_dim;
  int64_t k_groups =
      std::clamp<int64_t>(static_cast<int64_t>(std::ceil(std::max(0.0, inst.s))), 0, h);

  std::vector<std::vector<int64_t>> group_subsets;
  detail::all_subsets(h, k_groups, group_subsets);

  std::vector<std::vector<std::vector<int64_t>>> within_subsets(static_cast<size_t>(h));
  for (int64_t i = 0; i < h; ++i) {
    int64_t ki = std::clamp<int64_t>(
        static_cast<int64_t>(std::ceil(std::max(0.0, inst.r[static_cast<size_t>(i)]))), 0, dh);
    detail::all_subsets(dh, ki, within_subsets[static_cast<size_t>(i)]);
  }

  double best = 0;
  bool have_best = false;
  DiffTensor<double> best_w;

  std::vector<size_t> pick(static_cast<size_t>(h), 0);
  for (const auto& gs : group_subsets) {
    std::vector<char> in_group(static_cast<size_t>(h), 0);
    for (int64_t i : gs) in_group[static_cast<size_t>(i)] = 1;
    // cross product of within-subset choices across heads
    std::fill(pick.begin(), pick.end(), 0);
    while (true) {
      DiffTensor<double> w = inst.w_bar.clone();
      for (int64_t i = 0; i < h; ++i) {
        std::vector<char> in_within(static_cast<size_t>(dh), 0);
        for (int64_t u : within_subsets[static_cast<size_t>(i)][pick[static_cast<size_t>(i)]])
          in_within[static_cast<size_t>(u)] = 1;
        for (int64_t u = 0; u < dh; ++u) {
          double coef = 0;
          if (in_within[static_cast<size_t>(u)]) coef += inst.p[static_cast<size_t>(i)];
          if (in_group[static_cast<size_t>(i)]) coef += inst.y;
          double f = 1.0 / (1.0 + 2.0 * inst.eta * coef);
          if (f != 1.0)
            for (int64_t j = 0; j < w.cols(); ++j)
              w.at(i * dh + u, j) *= f;
        }
      }
      double obj = prox_objective(w, inst);
      if (!have_best || obj < best) {
        best = obj;
        have_best = true;
        if (argmin) best_w = w.clone();
      }
      // advance the cross-product odometer
      int64_t i = 0;
      for (; i < h; ++i) {
        if (++pick[static_cast<size_t>(i)] < within_subsets[static_cast<size_t>(i)].size()) break;
        pick[static_cast<size_t>(i)] = 0;
      }
      if (i == h) break;
    }
  }
  if (argmin) *argmin = best_w;
  return best;
}

// random per-row scalings; used to sanity-check that nothing beats the oracle
inline double prox_random_probe_min(const ProxInstance& inst, Rng& rng, int trials) {
  double best = prox_objective(inst.w_bar, inst);
  int64_t rows = inst.w_bar.rows();
  for (int t = 0; t < trials; ++t) {
    DiffTensor<double> w = inst.w_bar.clone();
    for (int64_t i = 0; i < rows; ++i) {
      double f = rng.uniform();
      for (int64_t j = 0; j < w.cols(); ++j) w.at(i, j) *= f;
    }
    best = std::min(best, prox_objective(w, inst));
  }
  return best;
}

inline ProxInstance random_prox_instance(Rng& rng, bool two_level) {
  ProxInstance inst;
  if (two_level) {
    inst.num_heads = rng.uniform_int(2, 3);
    inst.head_dim = rng.uniform_int(1, 2);
  } else {
    inst.num_heads = rng.uniform_int(2, 3);
    inst.head_dim = 1;
  }
  int64_t rows = inst.num_heads * inst.head_dim;
  int64_t cols = rng.uniform_int(1, 6);
  inst.w_bar = DiffTensor<double>({rows, cols});
  for (int64_t i = 0; i < inst.w_bar.numel(); ++i) inst.w_bar.data()[i] = rng.uniform_range(-1.5, 1.5);
  inst.s = rng.uniform_range(0.0, static_cast<double>(inst.num_heads));
  inst.y = rng.uniform() < 0.2 ? 0.0 : rng.uniform_range(0.0, 2.0);
  inst.eta = rng.uniform_range(0.05, 1.0);
  for (int64_t i = 0; i < inst.num_heads; ++i) {
    if (two_level) {
      inst.r.push_back(rng.uniform_range(0.0, static_cast<double>(inst.head_dim)));
      inst.p.push_back(rng.uniform() < 0.2 ? 0.0 : rng.uniform_range(0.0, 3.0));
    } else {
      inst.r.push_back(0.0);
      inst.p.push_back(0.0);
    }
  }
  return inst;
}

}  // namespace vitc::testing
