#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vitc/plan.hpp"
#include "vitc/sparsity.hpp"
#include "vitc/vit.hpp"

// Differentiable expected-FLOPs model. One multiply-accumulate counts as one
// FLOP; layernorm/softmax/GELU costs are omitted as is conventional (they are
// well under 1% of the total). The soft model uses the fractional pruning
// amounts directly and scales each block by its gate keep-probability; exact
// integer counts for a hard plan live in flops_of_plan.

namespace vitc {

struct BlockFlops {
  double qkv = 0, attn = 0, proj = 0, mlp1 = 0, mlp2 = 0;
  double gate_keep = 1.0;
  double raw() const { return qkv + attn + proj + mlp1 + mlp2; }
  double expected() const { return gate_keep * raw(); }
};

struct FlopsBreakdown {
  double stem = 0, head = 0;
  std::vector<BlockFlops> blocks;
  double total() const {
    double t = stem + head;
    for (const auto& b : blocks) t += b.expected();
    return t;
  }
};

// Per-block soft costs with kept-head fraction k = (H - s1)/H, per-head kept
// dims a_i = head_dim - r_i, A = k * sum_i a_i, kept hidden m = hidden - s3:
//   qkv  = 3 N D (k D)        (projections of the kept heads)
//   attn = k N^2 D + N^2 A    (scores + attention-weighted V)
//   proj = N A D
//   mlp  = N D m + N m D
// all scaled by the gate keep-probability.
inline FlopsBreakdown flops_soft(const ViTConfig& cfg, const PrimalVars& primal,
                                 const std::vector<double>& keep_probs) {
  if (static_cast<int64_t>(keep_probs.size()) != cfg.num_blocks ||
      static_cast<int64_t>(primal.s1.size()) != cfg.num_blocks)
    throw std::invalid_argument("flops_soft: per-block variable counts do not match the configuration");
  double n = static_cast<double>(cfg.num_tokens());
  double d = static_cast<double>(cfg.embed_dim);
  double h = static_cast<double>(cfg.num_heads);
  double dh = static_cast<double>(cfg.head_dim());
  double hidden = static_cast<double>(cfg.hidden_dim());

  FlopsBreakdown out;
  out.stem = static_cast<double>(cfg.num_patches()) * static_cast<double>(cfg.patch_vec()) * d + n * d;
  out.head = d * static_cast<double>(cfg.num_classes);
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    double k = (h - primal.s1[static_cast<size_t>(l)]) / h;
    double sum_a = 0;
    for (double r : primal.r[static_cast<size_t>(l)]) sum_a += dh - r;
    double big_a = k * sum_a;
    double m = hidden - primal.s3[static_cast<size_t>(l)];
    BlockFlops b;
    b.qkv = 3.0 * n * d * (k * d);
    b.attn = k * n * n * d + n * n * big_a;
    b.proj = n * big_a * d;
    b.mlp1 = n * d * m;
    b.mlp2 = n * m * d;
    b.gate_keep = keep_probs[static_cast<size_t>(l)];
    out.blocks.push_back(b);
  }
  return out;
}

inline double flops_total(const ViTConfig& cfg, const PrimalVars& primal,
                          const std::vector<double>& keep_probs) {
  return flops_soft(cfg, primal, keep_probs).total();
}

inline double flops_dense(const ViTConfig& cfg) {
  PrimalVars primal = PrimalVars::zeros(cfg);
  std::vector<double> keep(static_cast<size_t>(cfg.num_blocks), 1.0);
  return flops_total(cfg, primal, keep);
}

// analytic partials of the soft total w.r.t. s1, s3, r and the keep probabilities
struct FlopsPartials {
  std::vector<double> s1, s3;
  std::vector<std::vector<double>> r;
  std::vector<double> keep;
};

inline FlopsPartials flops_partials(const ViTConfig& cfg, const PrimalVars& primal,
                                    const std::vector<double>& keep_probs) {
  double n = static_cast<double>(cfg.num_tokens());
  double d = static_cast<double>(cfg.embed_dim);
  double h = static_cast<double>(cfg.num_heads);
  double dh = static_cast<double>(cfg.head_dim());

  FlopsBreakdown bd = flops_soft(cfg, primal, keep_probs);
  FlopsPartials out;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    double g = keep_probs[static_cast<size_t>(l)];
    double k = (h - primal.s1[static_cast<size_t>(l)]) / h;
    double sum_a = 0;
    for (double r : primal.r[static_cast<size_t>(l)]) sum_a += dh - r;
    // d(block)/d(s1): k enters qkv, the score term and A = k*sum_a
    out.s1.push_back(g * (-1.0 / h) * (3.0 * n * d * d + n * n * d + (n * n + n * d) * sum_a));
    out.s3.push_back(g * (-2.0 * n * d));
    std::vector<double> dr;
    for (size_t i = 0; i < primal.r[static_cast<size_t>(l)].size(); ++i)
      dr.push_back(g * (-(n * n + n * d) * k));
    out.r.push_back(std::move(dr));
    out.keep.push_back(bd.blocks[static_cast<size_t>(l)].raw());
  }
  return out;
}

// z * (R - budget); drives z's ascent and the descent of (s, r, gates)
inline double resource_loss(const ViTConfig& cfg, const PrimalVars& primal,
                            const std::vector<double>& keep_probs, double z, double budget) {
  if (z < 0) throw std::invalid_argument("resource_loss: z must be nonnegative");
  return z * (flops_total(cfg, primal, keep_probs) - budget);
}

// Exact integer counts for a hard plan. Kept heads pay full Q/K projections
// and scores; V projection, attention-weighted sum and proj only cover kept
// dims. Skipped blocks cost nothing.
inline FlopsBreakdown flops_of_plan(const ViTConfig& cfg, const CompressionPlan& plan) {
  if (static_cast<int64_t>(plan.blocks.size()) != cfg.num_blocks)
    throw std::invalid_argument("flops_of_plan: plan block count does not match the configuration");
  double n = static_cast<double>(cfg.num_tokens());
  double d = static_cast<double>(cfg.embed_dim);
  double dh = static_cast<double>(cfg.head_dim());

  FlopsBreakdown out;
  out.stem = static_cast<double>(cfg.num_patches()) * static_cast<double>(cfg.patch_vec()) * d + n * d;
  out.head = d * static_cast<double>(cfg.num_classes);
  for (const auto& bp : plan.blocks) {
    BlockFlops b;
    if (bp.skip) {
      b.gate_keep = 0.0;
      out.blocks.push_back(b);
      continue;
    }
    double kept_heads = 0, sum_a = 0;
    for (int64_t i = 0; i < cfg.num_heads; ++i) {
      bool dropped = std::find(bp.dropped_heads.begin(), bp.dropped_heads.end(), i) != bp.dropped_heads.end();
      if (dropped) continue;
      kept_heads += 1;
      sum_a += dh - static_cast<double>(bp.dropped_dims[static_cast<size_t>(i)].size());
    }
    double m = static_cast<double>(cfg.hidden_dim()) - static_cast<double>(bp.dropped_hidden.size());
    b.qkv = n * d * (2.0 * kept_heads * dh + sum_a);
    b.attn = n * n * dh * kept_heads + n * n * sum_a;
    b.proj = n * sum_a * d;
    b.mlp1 = n * d * m;
    b.mlp2 = n * m * d;
    b.gate_keep = 1.0;
    out.blocks.push_back(b);
  }
  return out;
}

// direct per-layer recount from the parameter shapes of a (possibly
// extracted) model
template <typename Real>
double flops_recount(const ViTWeights<Real>& w) {
  const ViTConfig& cfg = w.config;
  double n = static_cast<double>(cfg.num_tokens());
  double d = static_cast<double>(cfg.embed_dim);
  double total = static_cast<double>(cfg.num_patches()) * static_cast<double>(cfg.patch_vec()) * d + n * d;
  total += d * static_cast<double>(cfg.num_classes);
  for (const auto& blk : w.blocks) {
    total += n * d * static_cast<double>(blk.w_q.cols() + blk.w_k.cols() + blk.w_v.cols());
    for (int64_t vd : blk.v_head_dims) {
      if (vd == 0) continue;
      total += n * n * static_cast<double>(blk.qk_head_dim);  // scores
      total += n * n * static_cast<double>(vd);               // attention-weighted V
    }
    total += n * static_cast<double>(blk.w_proj.rows()) * d;
    total += n * d * static_cast<double>(blk.hidden) + n * static_cast<double>(blk.hidden) * d;
  }
  return total;
}

}  // namespace vitc
