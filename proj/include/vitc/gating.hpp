#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vitc/ops.hpp"
#include "vitc/rng.hpp"
#include "vitc/tensor.hpp"

// Per-block skip gating. Component 0 is the skip path, component 1 keeps the
// block. Logits are stored pre-softmax, which keeps the probability-form
// gate variables positive by construction.

namespace vitc {

struct GateVars {
  std::vector<std::array<double, 2>> logits;

  // biased toward keeping every block so early training resembles the dense model
  static GateVars init(int64_t num_blocks) {
    GateVars g;
    g.logits.assign(static_cast<size_t>(num_blocks), {0.0, 3.0});
    return g;
  }
};

inline std::array<double, 2> softmax_pair(const std::array<double, 2>& logits) {
  double m = std::max(logits[0], logits[1]);
  double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
  double s = e0 + e1;
  return {e0 / s, e1 / s};
}

// probability that the block is kept
inline double keep_prob(const std::array<double, 2>& logits) { return softmax_pair(logits)[1]; }

// skip iff the skip component dominates; ties keep the block
inline bool hard_skip(const std::array<double, 2>& logits) { return softmax_pair(logits)[0] > 0.5; }

inline std::array<double, 2> draw_gumbel_noise(Rng& rng) {
  double g0 = rng.gumbel();
  double g1 = rng.gumbel();
  return {g0, g1};
}

// Reparameterized soft categorical sample softmax((logits + noise)/tau) as a
// 1x2 graph tensor, differentiable w.r.t. the logits leaf. Noise is supplied
// by the caller so gradients can be checked with it held fixed.
template <typename Real>
DiffTensor<Real> gumbel_sample(Graph<Real>* g, DiffTensor<Real> logits, double tau,
                               const std::array<double, 2>& noise) {
  if (tau <= 0) throw std::invalid_argument("gumbel_sample: tau must be positive");
  if (logits.numel() != 2 || logits.rank() != 2)
    throw std::invalid_argument("gumbel_sample: logits must be a 1x2 tensor, got " + shape_str(logits.shape()));
  DiffTensor<Real> n = DiffTensor<Real>::from({1, 2}, {static_cast<Real>(noise[0]), static_cast<Real>(noise[1])});
  return softmax_rows(g, scale(g, add(g, logits, n), static_cast<Real>(1.0 / tau)));
}

// value-only sample for places that do not need gradients
inline std::array<double, 2> gumbel_sample_values(const std::array<double, 2>& logits, double tau,
                                                  const std::array<double, 2>& noise) {
  if (tau <= 0) throw std::invalid_argument("gumbel_sample: tau must be positive");
  return softmax_pair({(logits[0] + noise[0]) / tau, (logits[1] + noise[1]) / tau});
}

}  // namespace vitc
