#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "vitc/errors.hpp"
#include "vitc/flops.hpp"
#include "vitc/gating.hpp"
#include "vitc/sparsity.hpp"
#include "vitc/trace.hpp"
#include "vitc/trainer.hpp"

// Primal-dual compression loop. Each step descends the weights (proximal SGD
// with momentum), the pruning amounts s/r (sparsity proxy gradient plus the
// budget term) and the gate logits (network gradient through the Gumbel
// reparameterization plus the budget term), then ascends the multipliers
// z, y, p. Budget pressure operates on FLOPs normalized by the dense total,
// so the multiplier scales are architecture-independent.

namespace vitc {

struct HyperParams {
  double lr_w = 0.05;      // weight step (proximal SGD)
  double momentum = 0.9;
  double lr_s = 0.5;       // head/hidden pruning amounts
  double lr_r = 1.0;       // within-head amounts
  double lr_gate = 0.3;    // gate logits
  double lr_y = 1.0;       // group multipliers
  double lr_p = 2.0;       // within-head multipliers
  double lr_z = 0.1;       // budget multiplier (the seventh rate)
  double lambda = 1.0;     // distillation coefficient
  double budget_flops = 0;
  int64_t epochs = 16;
  int64_t batch_size = 64;
  uint64_t seed = 0;
  // lr_z is set to lr_z * factor[k] once the epoch passes milestone[k]
  // (fractions of the phase)
  std::vector<double> z_rate_milestones = {0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<double> z_rate_factors = {1, 5, 9, 13, 17};
  double tau_start = 5.0;
  double tau_end = 0.5;
  bool enable_gating = true;
  bool enable_pruning = true;
  bool cosine_w_decay = true;

  void validate() const {
    if (lr_w <= 0 || lr_s < 0 || lr_r < 0 || lr_gate < 0 || lr_y < 0 || lr_p < 0 || lr_z < 0)
      throw std::invalid_argument("HyperParams: learning rates must be nonnegative (lr_w positive)");
    if (lambda < 0) throw std::invalid_argument("HyperParams: lambda must be nonnegative");
    if (budget_flops <= 0) throw std::invalid_argument("HyperParams: budget must be positive");
    if (epochs <= 0 || batch_size <= 0) throw std::invalid_argument("HyperParams: epochs/batch must be positive");
    if (tau_start <= 0 || tau_end <= 0) throw std::invalid_argument("HyperParams: tau must be positive");
    if (z_rate_milestones.size() != z_rate_factors.size())
      throw std::invalid_argument("HyperParams: z-rate milestones/factors must align");
  }
};

template <typename Real>
struct OptimState {
  ViTWeights<Real> weights;
  ViTWeights<Real> teacher;  // frozen dense snapshot
  PrimalVars primal;
  DualVars dual;
  GateVars gates;
  int64_t iteration = 0;
  std::vector<DiffTensor<Real>> momentum;

  static OptimState start(const ViTWeights<Real>& dense) {
    OptimState s;
    s.weights = dense.clone();
    s.teacher = dense.clone();
    s.primal = PrimalVars::zeros(dense.config);
    s.dual = DualVars::zeros(dense.config);
    s.gates = GateVars::init(dense.config.num_blocks);
    for (auto* p : s.weights.parameters()) s.momentum.emplace_back(p->shape());
    return s;
  }

  std::vector<double> gate_keep_probs() const {
    std::vector<double> out;
    for (const auto& l : gates.logits) out.push_back(keep_prob(l));
    return out;
  }
  std::vector<uint8_t> hard_skips() const {
    std::vector<uint8_t> out;
    for (const auto& l : gates.logits) out.push_back(hard_skip(l) ? 1 : 0);
    return out;
  }
};

struct StepSchedule {
  double tau = 1.0;
  double lr_w = 0.05;
  double lr_z = 0.1;
};

inline double tau_at(const HyperParams& hp, int64_t iter, int64_t total_iters) {
  if (total_iters <= 1) return hp.tau_end;
  double prog = static_cast<double>(iter) / static_cast<double>(total_iters - 1);
  prog = std::clamp(prog, 0.0, 1.0);
  return hp.tau_start * std::pow(hp.tau_end / hp.tau_start, prog);
}

inline double lr_z_at(const HyperParams& hp, int64_t epoch, int64_t total_epochs) {
  double frac = total_epochs <= 0 ? 0.0 : static_cast<double>(epoch) / static_cast<double>(total_epochs);
  double factor = 1.0;
  for (size_t k = 0; k < hp.z_rate_milestones.size(); ++k)
    if (frac >= hp.z_rate_milestones[k]) factor = hp.z_rate_factors[k];
  return hp.lr_z * factor;
}

struct StepParts {
  double task = 0, distill = 0, sparsity = 0, resource = 0, objective = 0;
  double expected_flops = 0, expected_flops_fraction = 0;  // at post-step keep probabilities
  double sampled_flops = 0;                                // at this step's gate samples
  std::vector<double> gate_keep;                           // post-step keep probabilities
  std::vector<double> y1_ascent, y3_ascent;
  std::vector<std::vector<double>> p_ascent;
  double tau = 0, lr_w_eff = 0, lr_z_eff = 0;
};

namespace detail {

// head-group / within-head / mlp-row squared norms for every block
template <typename Real>
struct BlockNorms {
  std::vector<std::vector<double>> head_sq;                 // [block][head]
  std::vector<std::vector<std::vector<double>>> within_sq;  // [block][head][dim]
  std::vector<std::vector<double>> mlp_sq;                  // [block][hidden unit]
};

template <typename Real>
BlockNorms<Real> block_norms(const ViTWeights<Real>& w) {
  const ViTConfig& cfg = w.config;
  int64_t dh = cfg.head_dim();
  BlockNorms<Real> out;
  for (const auto& blk : w.blocks) {
    auto units = unit_sqnorms(blk.w_proj);
    std::vector<double> heads(static_cast<size_t>(cfg.num_heads), 0.0);
    std::vector<std::vector<double>> within(static_cast<size_t>(cfg.num_heads));
    for (int64_t i = 0; i < cfg.num_heads; ++i) {
      within[static_cast<size_t>(i)].assign(units.begin() + i * dh, units.begin() + (i + 1) * dh);
      for (double v : within[static_cast<size_t>(i)]) heads[static_cast<size_t>(i)] += v;
    }
    out.head_sq.push_back(std::move(heads));
    out.within_sq.push_back(std::move(within));
    out.mlp_sq.push_back(unit_sqnorms(blk.w_mlp2));
  }
  return out;
}

inline std::string magnitude_dump(const PrimalVars& primal, const DualVars& dual, double task, double distill) {
  std::ostringstream os;
  os << "task=" << task << " distill=" << distill << " z=" << dual.z;
  double smax = 0, rmax = 0, ymax = 0, pmax = 0;
  for (double v : primal.s1) smax = std::max(smax, v);
  for (double v : primal.s3) smax = std::max(smax, v);
  for (auto& b : primal.r)
    for (double v : b) rmax = std::max(rmax, v);
  for (double v : dual.y1) ymax = std::max(ymax, v);
  for (double v : dual.y3) ymax = std::max(ymax, v);
  for (auto& b : dual.p)
    for (double v : b) pmax = std::max(pmax, v);
  os << " max_s=" << smax << " max_r=" << rmax << " max_y=" << ymax << " max_p=" << pmax;
  return os.str();
}

}  // namespace detail

// Value-only evaluation of the full objective: task + lambda*distill +
// resource + sparsity, with one fresh Gumbel sample per block. The resource
// term is reported in dense-normalized units.
template <typename Real>
StepParts total_objective(const OptimState<Real>& state, const Batch<Real>& batch, const HyperParams& hp,
                          double tau, Rng& gate_rng) {
  const ViTConfig& cfg = state.weights.config;
  double norm = flops_dense(cfg);

  std::vector<DiffTensor<Real>> samples;
  std::vector<double> sample_keep;
  ForwardOptions<Real> opt;
  if (hp.enable_gating) {
    for (const auto& logits : state.gates.logits) {
      auto s = gumbel_sample_values(logits, tau, draw_gumbel_noise(gate_rng));
      samples.push_back(
          DiffTensor<Real>::from({1, 2}, {static_cast<Real>(s[0]), static_cast<Real>(s[1])}));
      sample_keep.push_back(s[1]);
    }
    opt.gates = &samples;
  } else {
    sample_keep.assign(static_cast<size_t>(cfg.num_blocks), 1.0);
  }

  StepParts parts;
  DiffTensor<Real> logits = vit_forward<Real>(nullptr, state.weights, batch.patches, batch.size, opt);
  parts.task = cross_entropy_mean<Real>(nullptr, logits, batch.labels).data()[0];
  if (hp.lambda > 0) {
    DiffTensor<Real> t = vit_forward<Real>(nullptr, state.teacher, batch.patches, batch.size);
    parts.distill = distill_loss<Real>(nullptr, logits, t).data()[0];
  }
  parts.sampled_flops = flops_total(cfg, state.primal, sample_keep);
  parts.resource = state.dual.z * (parts.sampled_flops - hp.budget_flops) / norm;
  parts.sparsity = sparsity_loss(state.weights, state.primal, state.dual);
  parts.objective = parts.task + hp.lambda * parts.distill + parts.resource + parts.sparsity;
  return parts;
}

// One primal-dual iteration, in order:
//   (1) W      <- prox(W - lr_w * (momentum-smoothed) grad of task+distill)
//   (2) s      <- s - lr_s * (y * marginal-group proxy + z * dR/ds),  clamped
//   (3) r      <- likewise with lr_r and the within-head proxy
//   (4) gates  <- logits - lr_gate * (network grad + z * dR/dG * dG/dlogits)
//   (5) z      <- max(0, z + lr_z * (R - budget)/dense)
//   (6) y      += lr_y * least-ceil(s) squared norms of the updated weights
//   (7) p      += lr_p * least-ceil(r) squared norms
// The network gradients are taken once at the step's starting weights; the
// resource partials follow the update order (s at old s/r, r at new s, gates
// at new s/r, z at the fully updated point with this step's gate noise).
template <typename Real>
StepParts primal_dual_step(OptimState<Real>& state, const Batch<Real>& batch, const HyperParams& hp,
                           const StepSchedule& sched, Rng& gate_rng) {
  const ViTConfig& cfg = state.weights.config;
  const int64_t L = cfg.num_blocks;
  const double norm = flops_dense(cfg);
  const double budget_frac = hp.budget_flops / norm;

  StepParts parts;
  parts.tau = sched.tau;
  parts.lr_w_eff = sched.lr_w;
  parts.lr_z_eff = sched.lr_z;

  // forward with one fresh Gumbel sample per block
  Graph<Real> g;
  std::vector<std::array<double, 2>> noise(static_cast<size_t>(L));
  std::vector<DiffTensor<Real>> logit_leaves;
  std::vector<DiffTensor<Real>> samples;
  std::vector<double> sample_keep(static_cast<size_t>(L), 1.0);
  ForwardOptions<Real> opt;
  if (hp.enable_gating) {
    for (int64_t l = 0; l < L; ++l) {
      noise[static_cast<size_t>(l)] = draw_gumbel_noise(gate_rng);
      const auto& lg = state.gates.logits[static_cast<size_t>(l)];
      logit_leaves.push_back(
          DiffTensor<Real>::from({1, 2}, {static_cast<Real>(lg[0]), static_cast<Real>(lg[1])}));
      samples.push_back(gumbel_sample(&g, logit_leaves.back(), sched.tau, noise[static_cast<size_t>(l)]));
      sample_keep[static_cast<size_t>(l)] = static_cast<double>(samples.back().data()[1]);
    }
    opt.gates = &samples;
  }

  DiffTensor<Real> student = vit_forward(&g, state.weights, batch.patches, batch.size, opt);
  DiffTensor<Real> loss = task_loss(&g, student, batch.labels);
  parts.task = loss.data()[0];
  if (hp.lambda > 0) {
    DiffTensor<Real> tlogits = vit_forward<Real>(nullptr, state.teacher, batch.patches, batch.size);
    DiffTensor<Real> dl = distill_loss(&g, student, tlogits);
    parts.distill = dl.data()[0];
    loss = add(&g, loss, scale(&g, dl, static_cast<Real>(hp.lambda)));
  }
  if (!std::isfinite(static_cast<double>(loss.data()[0])))
    throw DivergenceError("primal_dual_step: non-finite loss; " +
                          detail::magnitude_dump(state.primal, state.dual, parts.task, parts.distill));

  // objective value at the step's starting point
  parts.sampled_flops = flops_total(cfg, state.primal, sample_keep);
  parts.resource = state.dual.z * (parts.sampled_flops - hp.budget_flops) / norm;
  parts.sparsity = hp.enable_pruning ? sparsity_loss(state.weights, state.primal, state.dual) : 0.0;
  parts.objective = parts.task + hp.lambda * parts.distill + parts.resource + parts.sparsity;

  g.zero_grads();
  g.backward(loss);

  // (1) weights: momentum SGD on the network gradient, then the prox
  {
    auto params = state.weights.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
      DiffTensor<Real>& p = *params[i];
      DiffTensor<Real>& v = state.momentum[i];
      const bool has_grad = p.grad_allocated();
      for (int64_t j = 0; j < p.numel(); ++j) {
        Real gj = has_grad ? p.grad()[j] : Real(0);
        v.data()[j] = static_cast<Real>(hp.momentum) * v.data()[j] + gj;
        p.data()[j] -= static_cast<Real>(sched.lr_w) * v.data()[j];
      }
    }
    if (hp.enable_pruning) prox_weights_inplace(state.weights, state.primal, state.dual, sched.lr_w);
  }

  auto norms = detail::block_norms(state.weights);  // updated weights

  if (hp.enable_pruning) {
    // (2) s: resource partials at (s_t, r_t, this step's gate sample)
    FlopsPartials p1 = flops_partials(cfg, state.primal, sample_keep);
    for (int64_t l = 0; l < L; ++l) {
      size_t sl = static_cast<size_t>(l);
      double gs1 = state.dual.y1[sl] * grad_sparsity_wrt_s(norms.head_sq[sl], state.primal.s1[sl]) +
                   state.dual.z * p1.s1[sl] / norm;
      double gs3 = state.dual.y3[sl] * grad_sparsity_wrt_s(norms.mlp_sq[sl], state.primal.s3[sl]) +
                   state.dual.z * p1.s3[sl] / norm;
      state.primal.s1[sl] -= hp.lr_s * gs1;
      state.primal.s3[sl] -= hp.lr_s * gs3;
    }
    state.primal.clamp(cfg);

    // (3) r: resource partials at (s_{t+1}, r_t, gate sample)
    FlopsPartials p2 = flops_partials(cfg, state.primal, sample_keep);
    for (int64_t l = 0; l < L; ++l) {
      size_t sl = static_cast<size_t>(l);
      for (int64_t i = 0; i < cfg.num_heads; ++i) {
        size_t si = static_cast<size_t>(i);
        double gr = state.dual.p[sl][si] * grad_sparsity_wrt_s(norms.within_sq[sl][si], state.primal.r[sl][si]) +
                    state.dual.z * p2.r[sl][si] / norm;
        state.primal.r[sl][si] -= hp.lr_r * gr;
      }
    }
    state.primal.clamp(cfg);
  }

  // (4) gate logits: network gradient through the reparameterized sample plus
  // the budget term z * dR/dG * dG/dlogits at (s_{t+1}, r_{t+1})
  if (hp.enable_gating) {
    FlopsPartials p3 = flops_partials(cfg, state.primal, sample_keep);
    for (int64_t l = 0; l < L; ++l) {
      size_t sl = static_cast<size_t>(l);
      double raw = p3.keep[sl] / norm;  // dR/dG_keep in normalized units
      double g1 = sample_keep[sl], g0 = 1.0 - g1;
      double dg1_dl0 = -g1 * g0 / sched.tau;
      double dg1_dl1 = g1 * g0 / sched.tau;  // g1*(1-g1)
      double grad0 = static_cast<double>(logit_leaves[sl].grad()[0]) + state.dual.z * raw * dg1_dl0;
      double grad1 = static_cast<double>(logit_leaves[sl].grad()[1]) + state.dual.z * raw * dg1_dl1;
      state.gates.logits[sl][0] -= hp.lr_gate * grad0;
      state.gates.logits[sl][1] -= hp.lr_gate * grad1;
    }
  }

  // (5) z: projected ascent on the budget violation at the updated point,
  // re-sampling the gates with this step's noise
  {
    std::vector<double> keep_new(static_cast<size_t>(L), 1.0);
    if (hp.enable_gating)
      for (int64_t l = 0; l < L; ++l)
        keep_new[static_cast<size_t>(l)] = gumbel_sample_values(state.gates.logits[static_cast<size_t>(l)],
                                                                sched.tau, noise[static_cast<size_t>(l)])[1];
    double r_frac = flops_total(cfg, state.primal, keep_new) / norm;
    state.dual.z = std::max(0.0, state.dual.z + sched.lr_z * (r_frac - budget_frac));
  }

  // (6)+(7) dual ascent on the group/within multipliers
  if (hp.enable_pruning) {
    for (int64_t l = 0; l < L; ++l) {
      size_t sl = static_cast<size_t>(l);
      double a1 = least_s_sqnorm(norms.head_sq[sl], state.primal.s1[sl]);
      double a3 = least_s_sqnorm(norms.mlp_sq[sl], state.primal.s3[sl]);
      state.dual.y1[sl] += hp.lr_y * a1;
      state.dual.y3[sl] += hp.lr_y * a3;
      parts.y1_ascent.push_back(a1);
      parts.y3_ascent.push_back(a3);
      std::vector<double> pa;
      for (int64_t i = 0; i < cfg.num_heads; ++i) {
        size_t si = static_cast<size_t>(i);
        double ap = least_s_sqnorm(norms.within_sq[sl][si], state.primal.r[sl][si]);
        state.dual.p[sl][si] += hp.lr_p * ap;
        pa.push_back(ap);
      }
      parts.p_ascent.push_back(std::move(pa));
    }
  }

  state.iteration += 1;
  parts.gate_keep = hp.enable_gating ? state.gate_keep_probs()
                                     : std::vector<double>(static_cast<size_t>(L), 1.0);
  parts.expected_flops = flops_total(cfg, state.primal, parts.gate_keep);
  parts.expected_flops_fraction = parts.expected_flops / norm;
  return parts;
}

// UVC-style compression phase: iterates the primal-dual step over shuffled
// batches, streaming one trace record per iteration and one per epoch.
template <typename Real>
void run_compression(OptimState<Real>& state, const Dataset& data, const HyperParams& hp,
                     TraceWriter& trace) {
  hp.validate();
  const ViTConfig& cfg = state.weights.config;
  double floor = flops_soft(cfg, PrimalVars::zeros(cfg), std::vector<double>(static_cast<size_t>(cfg.num_blocks), 0.0))
                     .total();  // stem + head
  if (hp.budget_flops <= floor)
    throw std::invalid_argument("run_compression: budget " + std::to_string(hp.budget_flops) +
                                " is infeasible (stem+head cost " + std::to_string(floor) + ")");

  Rng root(hp.seed);
  Rng shuffle_rng = root.stream(101);
  Rng gate_rng = root.stream(102);

  std::vector<int64_t> order = data.train_idx;
  int64_t iters_per_epoch =
      (static_cast<int64_t>(order.size()) + hp.batch_size - 1) / std::max<int64_t>(1, hp.batch_size);
  int64_t total_iters = std::max<int64_t>(1, hp.epochs * iters_per_epoch);

  for (int64_t epoch = 0; epoch < hp.epochs; ++epoch) {
    StepSchedule sched;
    sched.lr_z = lr_z_at(hp, epoch, hp.epochs);
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      std::vector<int64_t> chunk(
          order.begin() + static_cast<int64_t>(start),
          order.begin() + static_cast<int64_t>(std::min(order.size(), start + static_cast<size_t>(hp.batch_size))));
      Batch<Real> b = make_batch<Real>(cfg, data, chunk);
      sched.tau = tau_at(hp, state.iteration, total_iters);
      sched.lr_w = cosine_lr(hp.lr_w, state.iteration, total_iters, hp.cosine_w_decay);

      StepParts parts = primal_dual_step(state, b, hp, sched, gate_rng);

      TraceRecord rec;
      rec.kind = "iter";
      rec.iteration = state.iteration - 1;
      rec.epoch = epoch;
      rec.task = parts.task;
      rec.distill = parts.distill;
      rec.sparsity = parts.sparsity;
      rec.resource = parts.resource;
      rec.objective = parts.objective;
      rec.expected_flops = parts.expected_flops;
      rec.expected_flops_fraction = parts.expected_flops_fraction;
      rec.z = state.dual.z;
      double ysum = 0, pcount = 0, psum = 0;
      for (double v : state.dual.y1) ysum += v;
      for (double v : state.dual.y3) ysum += v;
      for (auto& bl : state.dual.p)
        for (double v : bl) {
          psum += v;
          pcount += 1;
        }
      rec.mean_y = ysum / static_cast<double>(state.dual.y1.size() + state.dual.y3.size());
      rec.mean_p = pcount > 0 ? psum / pcount : 0.0;
      rec.tau = parts.tau;
      rec.gate_keep = parts.gate_keep;
      trace.write(rec);

      if (!std::isfinite(parts.objective) || parts.objective > 1e6)
        throw DivergenceError("run_compression: diverged at iteration " + std::to_string(state.iteration) +
                              "; " + detail::magnitude_dump(state.primal, state.dual, parts.task, parts.distill));
    }

    auto skips = state.hard_skips();
    EvalResult ev = evaluate(state.weights, data, data.val_idx, &skips);
    TraceRecord rec;
    rec.kind = "epoch";
    rec.iteration = state.iteration;
    rec.epoch = epoch;
    rec.val_accuracy = ev.accuracy;
    rec.val_loss = ev.mean_loss;
    auto keep = state.gate_keep_probs();
    rec.expected_flops = flops_total(cfg, state.primal, keep);
    rec.expected_flops_fraction = rec.expected_flops / flops_dense(cfg);
    trace.write(rec);
  }
}

}  // namespace vitc
