#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vitc/tensor.hpp"
#include "vitc/vit.hpp"

// Group-sparsity machinery: group norms over a weight matrix's input
// dimension, the least-s squared norm, its marginal-group gradient proxy,
// and the keep-or-shrink proximal update. Weights are stored
// (input_dim x output_dim), so an "input unit" is a row and a pruning group
// is a set of rows.

namespace vitc {

struct GroupSpec {
  std::vector<std::pair<int64_t, int64_t>> ranges;  // (start, size) over the input axis

  static GroupSpec heads(int64_t num_heads, int64_t head_dim) {
    GroupSpec s;
    for (int64_t i = 0; i < num_heads; ++i) s.ranges.emplace_back(i * head_dim, head_dim);
    return s;
  }
  static GroupSpec singletons(int64_t n) {
    GroupSpec s;
    for (int64_t i = 0; i < n; ++i) s.ranges.emplace_back(i, 1);
    return s;
  }

  int64_t count() const { return static_cast<int64_t>(ranges.size()); }
  int64_t total_units() const {
    int64_t t = 0;
    for (auto& r : ranges) t += r.second;
    return t;
  }
  void validate(int64_t input_dim) const {
    int64_t expect = 0;
    for (auto& r : ranges) {
      if (r.first != expect || r.second <= 0)
        throw std::invalid_argument("GroupSpec: groups must be contiguous, ordered and cover all units");
      expect += r.second;
    }
    if (expect != input_dim)
      throw std::invalid_argument("GroupSpec: groups cover " + std::to_string(expect) + " units, matrix has " +
                                  std::to_string(input_dim));
  }
};

template <typename Real>
std::vector<double> unit_sqnorms(const DiffTensor<Real>& w) {
  std::vector<double> out(static_cast<size_t>(w.rows()), 0.0);
  for (int64_t i = 0; i < w.rows(); ++i) {
    double acc = 0;
    for (int64_t j = 0; j < w.cols(); ++j) {
      double v = static_cast<double>(w.at(i, j));
      acc += v * v;
    }
    out[static_cast<size_t>(i)] = acc;
  }
  return out;
}

template <typename Real>
std::vector<double> group_sqnorms(const DiffTensor<Real>& w, const GroupSpec& spec) {
  spec.validate(w.rows());
  auto units = unit_sqnorms(w);
  std::vector<double> out;
  out.reserve(spec.ranges.size());
  for (auto& r : spec.ranges) {
    double acc = 0;
    for (int64_t u = r.first; u < r.first + r.second; ++u) acc += units[static_cast<size_t>(u)];
    out.push_back(acc);
  }
  return out;
}

// indices of the k smallest values; ties broken by lowest index
inline std::vector<int64_t> smallest_k(const std::vector<double>& vals, int64_t k) {
  std::vector<int64_t> idx(vals.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    if (vals[static_cast<size_t>(a)] != vals[static_cast<size_t>(b)])
      return vals[static_cast<size_t>(a)] < vals[static_cast<size_t>(b)];
    return a < b;
  });
  idx.resize(static_cast<size_t>(std::min<int64_t>(k, static_cast<int64_t>(vals.size()))));
  return idx;
}

// sum of the ceil(s) smallest group squared norms
inline double least_s_sqnorm(const std::vector<double>& group_sq, double s) {
  int64_t k = static_cast<int64_t>(std::ceil(s));
  if (k < 0) k = 0;
  if (k > static_cast<int64_t>(group_sq.size()))
    throw std::out_of_range("least_s_sqnorm: ceil(s) = " + std::to_string(k) + " exceeds group count " +
                            std::to_string(group_sq.size()));
  std::vector<double> sorted = group_sq;
  std::sort(sorted.begin(), sorted.end());
  double acc = 0;
  for (int64_t i = 0; i < k; ++i) acc += sorted[static_cast<size_t>(i)];
  return acc;
}

template <typename Real>
double least_s_sqnorm(const DiffTensor<Real>& w, const GroupSpec& spec, double s) {
  return least_s_sqnorm(group_sqnorms(w, spec), s);
}

// Marginal-group proxy for the derivative of the least-s squared norm with
// respect to s: the squared norm of the min(#groups, ceil(s)+1)-th smallest
// group. For integer s below saturation this equals
// least_s_sqnorm(s+1) - least_s_sqnorm(s).
inline double grad_sparsity_wrt_s(const std::vector<double>& group_sq, double s) {
  if (group_sq.empty()) return 0.0;
  int64_t k = static_cast<int64_t>(std::ceil(std::max(0.0, s))) + 1;
  k = std::min<int64_t>(k, static_cast<int64_t>(group_sq.size()));
  std::vector<double> sorted = group_sq;
  std::sort(sorted.begin(), sorted.end());
  return sorted[static_cast<size_t>(k - 1)];
}

template <typename Real>
double grad_sparsity_wrt_s(const DiffTensor<Real>& w, const GroupSpec& spec, double s) {
  return grad_sparsity_wrt_s(group_sqnorms(w, spec), s);
}

// Continuous pruning amounts. s1 in [0,H] per block, s3 in [0,hidden] per
// block, r in [0,head_dim] per block/head; clamped after every update.
struct PrimalVars {
  std::vector<double> s1, s3;
  std::vector<std::vector<double>> r;

  static PrimalVars zeros(const ViTConfig& cfg) {
    PrimalVars v;
    v.s1.assign(static_cast<size_t>(cfg.num_blocks), 0.0);
    v.s3.assign(static_cast<size_t>(cfg.num_blocks), 0.0);
    v.r.assign(static_cast<size_t>(cfg.num_blocks),
               std::vector<double>(static_cast<size_t>(cfg.num_heads), 0.0));
    return v;
  }

  void clamp(const ViTConfig& cfg) {
    for (auto& v : s1) v = std::clamp(v, 0.0, static_cast<double>(cfg.num_heads));
    for (auto& v : s3) v = std::clamp(v, 0.0, static_cast<double>(cfg.hidden_dim()));
    for (auto& br : r)
      for (auto& v : br) v = std::clamp(v, 0.0, static_cast<double>(cfg.head_dim()));
  }
};

// Nonnegative multipliers; z is the budget multiplier.
struct DualVars {
  std::vector<double> y1, y3;
  std::vector<std::vector<double>> p;
  double z = 0.0;

  static DualVars zeros(const ViTConfig& cfg) {
    DualVars v;
    v.y1.assign(static_cast<size_t>(cfg.num_blocks), 0.0);
    v.y3.assign(static_cast<size_t>(cfg.num_blocks), 0.0);
    v.p.assign(static_cast<size_t>(cfg.num_blocks),
               std::vector<double>(static_cast<size_t>(cfg.num_heads), 0.0));
    return v;
  }

  bool all_nonnegative() const {
    if (z < 0) return false;
    for (double v : y1)
      if (v < 0) return false;
    for (double v : y3)
      if (v < 0) return false;
    for (const auto& b : p)
      for (double v : b)
        if (v < 0) return false;
    return true;
  }
};

// S(y, s, p, r, W): per block, y1 * least-ceil(s1) over head groups of the
// attention projection + y3 * least-ceil(s3) over MLP output rows, plus the
// per-head p * least-ceil(r) terms within each head group.
template <typename Real>
double sparsity_loss(const ViTWeights<Real>& w, const PrimalVars& primal, const DualVars& dual) {
  if (!w.dense_shaped()) throw std::invalid_argument("sparsity_loss: model must be dense-shaped");
  const ViTConfig& cfg = w.config;
  int64_t dh = cfg.head_dim();
  double total = 0;
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& blk = w.blocks[l];
    auto units = unit_sqnorms(blk.w_proj);
    std::vector<double> head_sq(static_cast<size_t>(cfg.num_heads), 0.0);
    for (int64_t i = 0; i < cfg.num_heads; ++i)
      for (int64_t u = 0; u < dh; ++u) head_sq[static_cast<size_t>(i)] += units[static_cast<size_t>(i * dh + u)];
    total += dual.y1[l] * least_s_sqnorm(head_sq, primal.s1[l]);
    total += dual.y3[l] * least_s_sqnorm(unit_sqnorms(blk.w_mlp2), primal.s3[l]);
    for (int64_t i = 0; i < cfg.num_heads; ++i) {
      std::vector<double> local(units.begin() + i * dh, units.begin() + (i + 1) * dh);
      total += dual.p[l][static_cast<size_t>(i)] * least_s_sqnorm(local, primal.r[l][static_cast<size_t>(i)]);
    }
  }
  return total;
}

namespace detail {

template <typename Real>
void scale_rows(DiffTensor<Real>& w, const std::vector<double>& factors) {
  for (int64_t i = 0; i < w.rows(); ++i) {
    double f = factors[static_cast<size_t>(i)];
    if (f == 1.0) continue;
    for (int64_t j = 0; j < w.cols(); ++j) w.at(i, j) = static_cast<Real>(static_cast<double>(w.at(i, j)) * f);
  }
}

inline double sum_k_smallest(std::vector<double> vals, int64_t k) {
  if (k <= 0) return 0.0;
  k = std::min<int64_t>(k, static_cast<int64_t>(vals.size()));
  std::nth_element(vals.begin(), vals.begin() + (k - 1), vals.end());
  double acc = 0;
  for (int64_t i = 0; i < k; ++i) acc += vals[static_cast<size_t>(i)];
  return acc;
}

// lexicographic enumeration of k-subsets of {0..n-1}
inline bool next_combination(std::vector<int64_t>& c, int64_t n) {
  int64_t k = static_cast<int64_t>(c.size());
  for (int64_t i = k - 1; i >= 0; --i) {
    if (c[static_cast<size_t>(i)] < n - (k - i)) {
      ++c[static_cast<size_t>(i)];
      for (int64_t j = i + 1; j < k; ++j) c[static_cast<size_t>(j)] = c[static_cast<size_t>(j - 1)] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace detail

// Single-level keep-or-shrink prox over singleton input rows: the ceil(s)
// rows with smallest squared norms (ties by lowest index) are scaled by
// 1/(1 + 2*eta*y); all other rows are untouched. This is the exact argmin of
//   (1/2)||W - Wbar||^2 + eta * y * least-ceil(s) squared norm.
template <typename Real>
void prox_one_level_inplace(DiffTensor<Real>& w, double s, double y, double eta) {
  int64_t k = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(std::max(0.0, s))), 0, w.rows());
  if (k == 0 || y == 0.0) return;
  auto units = unit_sqnorms(w);
  auto sel = smallest_k(units, k);
  std::vector<double> factors(static_cast<size_t>(w.rows()), 1.0);
  double f = 1.0 / (1.0 + 2.0 * eta * y);
  for (int64_t u : sel) factors[static_cast<size_t>(u)] = f;
  detail::scale_rows(w, factors);
}

// Two-level keep-or-shrink prox for a head-grouped matrix. Within each head
// the ceil(r_i) smallest rows shrink; whole head groups selected for the
// ceil(s) least set shrink as well. A row hit by both levels gets the joint
// factor 1/(1 + 2*eta*(p_i + y)). The head subset is chosen by exact
// evaluation of the prox objective over all ceil(s)-subsets, which reduces
// to ranking by group norm except on overlap corner cases.
template <typename Real>
void prox_two_level_inplace(DiffTensor<Real>& w, int64_t num_heads, int64_t head_dim, double s,
                            const std::vector<double>& r, double y, const std::vector<double>& p, double eta) {
  if (w.rows() != num_heads * head_dim)
    throw std::invalid_argument("prox_two_level: matrix rows do not match head grouping");
  auto units = unit_sqnorms(w);
  int64_t k_groups = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(std::max(0.0, s))), 0, num_heads);

  // within-head shrink sets: ceil(r_i) smallest rows of each head
  std::vector<std::vector<char>> within(static_cast<size_t>(num_heads),
                                        std::vector<char>(static_cast<size_t>(head_dim), 0));
  for (int64_t i = 0; i < num_heads; ++i) {
    int64_t ki = std::clamp<int64_t>(
        static_cast<int64_t>(std::ceil(std::max(0.0, r[static_cast<size_t>(i)]))), 0, head_dim);
    if (ki == 0) continue;
    std::vector<double> local(units.begin() + i * head_dim, units.begin() + (i + 1) * head_dim);
    for (int64_t u : smallest_k(local, ki)) within[static_cast<size_t>(i)][static_cast<size_t>(u)] = 1;
  }

  // evaluates the prox objective for a candidate head subset under the
  // closed-form per-row scalings it induces
  auto evaluate = [&](const std::vector<char>& in_group, std::vector<double>* out_factors) {
    double cost = 0;
    std::vector<double> group_res(static_cast<size_t>(num_heads), 0.0);
    std::vector<double> factors(static_cast<size_t>(num_heads * head_dim), 1.0);
    for (int64_t i = 0; i < num_heads; ++i) {
      std::vector<double> res_local(static_cast<size_t>(head_dim));
      for (int64_t u = 0; u < head_dim; ++u) {
        double coef = 0;
        if (within[static_cast<size_t>(i)][static_cast<size_t>(u)]) coef += p[static_cast<size_t>(i)];
        if (in_group[static_cast<size_t>(i)]) coef += y;
        double f = 1.0 / (1.0 + 2.0 * eta * coef);
        double n = units[static_cast<size_t>(i * head_dim + u)];
        factors[static_cast<size_t>(i * head_dim + u)] = f;
        cost += 0.5 * n * (1.0 - f) * (1.0 - f);
        double m = f * f * n;
        res_local[static_cast<size_t>(u)] = m;
        group_res[static_cast<size_t>(i)] += m;
      }
      int64_t ki = std::clamp<int64_t>(
          static_cast<int64_t>(std::ceil(std::max(0.0, r[static_cast<size_t>(i)]))), 0, head_dim);
      cost += eta * p[static_cast<size_t>(i)] * detail::sum_k_smallest(res_local, ki);
    }
    cost += eta * y * detail::sum_k_smallest(group_res, k_groups);
    if (out_factors) *out_factors = std::move(factors);
    return cost;
  };

  std::vector<char> best_subset(static_cast<size_t>(num_heads), 0);
  if (k_groups == 0) {
    // no group-level shrink; subset is empty
  } else {
    double best_cost = 0;
    bool have_best = false;
    std::vector<int64_t> comb(static_cast<size_t>(k_groups));
    std::iota(comb.begin(), comb.end(), 0);
    do {
      std::vector<char> in_group(static_cast<size_t>(num_heads), 0);
      for (int64_t i : comb) in_group[static_cast<size_t>(i)] = 1;
      double cost = evaluate(in_group, nullptr);
      if (!have_best || cost < best_cost) {
        best_cost = cost;
        best_subset = in_group;
        have_best = true;
      }
    } while (detail::next_combination(comb, num_heads));
  }

  std::vector<double> factors;
  evaluate(best_subset, &factors);
  detail::scale_rows(w, factors);
}

template <typename Real>
void prox_weights_inplace(ViTWeights<Real>& w, const PrimalVars& primal, const DualVars& dual, double eta1);

// Proximal update for the whole model: the attention projection of each block
// gets the two-level update (within-head rows, then head groups), the second
// MLP matrix gets the single-level update on its input rows. All other
// weights pass through unchanged.
template <typename Real>
ViTWeights<Real> prox_weights(const ViTWeights<Real>& w_bar, const PrimalVars& primal, const DualVars& dual,
                              double eta1) {
  if (eta1 <= 0) throw std::invalid_argument("prox_weights: eta1 must be positive");
  if (!dual.all_nonnegative()) throw std::invalid_argument("prox_weights: dual variables must be nonnegative");
  ViTWeights<Real> w = w_bar.clone();
  prox_weights_inplace(w, primal, dual, eta1);
  return w;
}

template <typename Real>
void prox_weights_inplace(ViTWeights<Real>& w, const PrimalVars& primal, const DualVars& dual, double eta1) {
  if (!w.dense_shaped()) throw std::invalid_argument("prox_weights: model must be dense-shaped");
  const ViTConfig& cfg = w.config;
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    prox_two_level_inplace(w.blocks[l].w_proj, cfg.num_heads, cfg.head_dim(), primal.s1[l], primal.r[l],
                           dual.y1[l], dual.p[l], eta1);
    prox_one_level_inplace(w.blocks[l].w_mlp2, primal.s3[l], dual.y3[l], eta1);
  }
}

}  // namespace vitc
