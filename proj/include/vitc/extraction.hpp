#pragma once

#include <algorithm>
#include <iostream>
#include <vector>

#include "vitc/flops.hpp"
#include "vitc/optimizer.hpp"
#include "vitc/plan.hpp"
#include "vitc/trainer.hpp"

// Step 2 of the pipeline: convert converged soft variables into a hard
// CompressionPlan (ceil the amounts, rank groups by ascending norm), shrink
// the model physically, and finetune the result.

namespace vitc {

// Per block: skip iff the gate's skip component dominates; drop the
// ceil(s1) heads / ceil(r_i) within-head dims / ceil(s3) hidden units with
// the smallest norms (ties by lowest index). A kept head whose dims are all
// dropped is promoted to a dropped head (exact: its output is zero). If that
// empties a kept block, the largest-norm head is kept whole instead, with a
// warning; the MLP keeps at least one unit the same way.
template <typename Real>
CompressionPlan build_plan(const OptimState<Real>& state, double budget_flops,
                           std::ostream* warnings = nullptr) {
  const ViTConfig& cfg = state.weights.config;
  if (!state.weights.dense_shaped())
    throw std::invalid_argument("build_plan: state weights must be dense-shaped");
  auto norms = detail::block_norms(state.weights);
  int64_t dh = cfg.head_dim();

  CompressionPlan plan;
  plan.budget_flops = budget_flops;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    size_t sl = static_cast<size_t>(l);
    BlockPlan bp;
    bp.skip = hard_skip(state.gates.logits[sl]);
    bp.dropped_dims.assign(static_cast<size_t>(cfg.num_heads), {});
    if (bp.skip) {
      plan.blocks.push_back(std::move(bp));
      continue;
    }

    int64_t k1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(state.primal.s1[sl])), 0, cfg.num_heads);
    bp.dropped_heads = smallest_k(norms.head_sq[sl], k1);
    std::vector<char> head_dropped(static_cast<size_t>(cfg.num_heads), 0);
    for (int64_t h : bp.dropped_heads) head_dropped[static_cast<size_t>(h)] = 1;

    for (int64_t i = 0; i < cfg.num_heads; ++i) {
      size_t si = static_cast<size_t>(i);
      if (head_dropped[si]) continue;
      int64_t ki = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(state.primal.r[sl][si])), 0, dh);
      auto dropped = smallest_k(norms.within_sq[sl][si], ki);
      if (static_cast<int64_t>(dropped.size()) == dh) {
        // fully dim-pruned head contributes nothing; drop it whole
        bp.dropped_heads.push_back(i);
        head_dropped[si] = 1;
      } else {
        std::sort(dropped.begin(), dropped.end());
        bp.dropped_dims[si] = std::move(dropped);
      }
    }

    if (static_cast<int64_t>(bp.dropped_heads.size()) == cfg.num_heads) {
      // gate says keep but the plan would empty the block: keep the
      // largest-norm head whole
      int64_t keep = 0;
      for (int64_t i = 1; i < cfg.num_heads; ++i)
        if (norms.head_sq[sl][static_cast<size_t>(i)] > norms.head_sq[sl][static_cast<size_t>(keep)]) keep = i;
      bp.dropped_heads.erase(std::remove(bp.dropped_heads.begin(), bp.dropped_heads.end(), keep),
                             bp.dropped_heads.end());
      bp.dropped_dims[static_cast<size_t>(keep)].clear();
      if (warnings)
        *warnings << "build_plan: block " << l << " would lose every head; keeping head " << keep << "\n";
    }
    std::sort(bp.dropped_heads.begin(), bp.dropped_heads.end());

    int64_t k3 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(state.primal.s3[sl])), 0, cfg.hidden_dim());
    if (k3 == cfg.hidden_dim()) {
      k3 = cfg.hidden_dim() - 1;
      if (warnings) *warnings << "build_plan: block " << l << " would lose every MLP unit; keeping one\n";
    }
    bp.dropped_hidden = smallest_k(norms.mlp_sq[sl], k3);
    std::sort(bp.dropped_hidden.begin(), bp.dropped_hidden.end());
    plan.blocks.push_back(std::move(bp));
  }

  bool any_kept = false;
  for (const auto& b : plan.blocks) any_kept |= !b.skip;
  if (!any_kept) throw std::invalid_argument("build_plan: every block is gated off");

  plan.achieved_flops = flops_of_plan(cfg, plan).total();
  return plan;
}

// plan validation plus the physical shrink (masked_copy does both)
template <typename Real>
ViTWeights<Real> extract(const ViTWeights<Real>& weights, const CompressionPlan& plan) {
  return masked_copy(weights, plan);
}

struct FinetuneOptions {
  int64_t epochs = 8;
  int64_t batch_size = 64;
  double lr = 0.005;  // one tenth of the compression-phase weight rate
  double momentum = 0.9;
  double lambda = 1.0;  // distillation stays on by default; set 0 to disable
  bool cosine_decay = true;
  uint64_t seed = 0;
};

// Post-training: supervised finetune of the extracted model (task loss plus
// the optional distillation term, no sparsity/resource terms) at a reduced
// learning rate; keeps the best-validation checkpoint.
template <typename Real>
EvalResult finetune(ViTWeights<Real>& model, const Dataset& data, const FinetuneOptions& opt,
                    const ViTWeights<Real>* teacher, TraceWriter* trace = nullptr) {
  TrainOptions t;
  t.epochs = opt.epochs;
  t.batch_size = opt.batch_size;
  t.lr = opt.lr;
  t.momentum = opt.momentum;
  t.cosine_decay = opt.cosine_decay;
  t.seed = opt.seed;
  t.lambda = opt.lambda;
  return train_supervised(model, data, t, trace, teacher);
}

}  // namespace vitc
