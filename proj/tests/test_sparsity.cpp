#include <gtest/gtest.h>

#include <cmath>

#include "prox_oracle.hpp"
#include "testutil.hpp"
#include "vitc/sparsity.hpp"

using vitc::DiffTensor;
using vitc::DualVars;
using vitc::GroupSpec;
using vitc::PrimalVars;
using vitc::Rng;
using vitc::ViTConfig;
using vitc::ViTWeights;

namespace {

using T = DiffTensor<double>;

// matrix whose input rows have the given norms
T rows_with_norms(const std::vector<double>& norms, int64_t cols = 1) {
  T w({static_cast<int64_t>(norms.size()), cols});
  for (size_t i = 0; i < norms.size(); ++i) w.at(static_cast<int64_t>(i), 0) = norms[i];
  return w;
}

double brute_force_least(const std::vector<double>& group_sq, int64_t k) {
  // exhaustive minimum over all k-subsets of group squared norms
  int64_t n = static_cast<int64_t>(group_sq.size());
  double best = std::numeric_limits<double>::infinity();
  for (uint64_t bits = 0; bits < (uint64_t{1} << n); ++bits) {
    if (static_cast<int64_t>(__builtin_popcountll(bits)) != k) continue;
    double s = 0;
    for (int64_t i = 0; i < n; ++i)
      if (bits & (uint64_t{1} << i)) s += group_sq[static_cast<size_t>(i)];
    best = std::min(best, s);
  }
  return k == 0 ? 0.0 : best;
}

TEST(LeastS, SpecExamples) {
  // columns with norms [3, 1, 2] as singleton groups
  std::vector<double> gsq = {9, 1, 4};
  EXPECT_DOUBLE_EQ(vitc::least_s_sqnorm(gsq, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(vitc::least_s_sqnorm(gsq, 2.0), 5.0);  // 1^2 + 2^2
  EXPECT_DOUBLE_EQ(vitc::least_s_sqnorm(gsq, 3.0), 14.0); // whole matrix
  EXPECT_THROW(vitc::least_s_sqnorm(gsq, 3.5), std::out_of_range);
}

TEST(LeastS, MatchesBruteForceOnRandomCases) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    int64_t n = rng.uniform_int(1, 8);
    std::vector<double> gsq;
    for (int64_t i = 0; i < n; ++i)
      gsq.push_back(rng.uniform() < 0.15 ? 0.0 : rng.uniform_range(0.0, 5.0));
    int64_t k = rng.uniform_int(0, n);
    EXPECT_DOUBLE_EQ(vitc::least_s_sqnorm(gsq, static_cast<double>(k)), brute_force_least(gsq, k));
  }
}

TEST(LeastS, NondecreasingInS) {
  Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t n = rng.uniform_int(2, 8);
    std::vector<double> gsq;
    for (int64_t i = 0; i < n; ++i) gsq.push_back(rng.uniform_range(0.0, 5.0));
    double prev = 0;
    for (int64_t k = 0; k <= n; ++k) {
      double v = vitc::least_s_sqnorm(gsq, static_cast<double>(k));
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(GradProxy, SpecExamples) {
  std::vector<double> gsq = {9, 1, 4};  // norms [3, 1, 2]
  EXPECT_DOUBLE_EQ(vitc::grad_sparsity_wrt_s(gsq, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(vitc::grad_sparsity_wrt_s(gsq, 3.0), 9.0);  // saturates at the largest group
  std::vector<double> zeros = {0, 0, 0};
  EXPECT_DOUBLE_EQ(vitc::grad_sparsity_wrt_s(zeros, 1.0), 0.0);
}

TEST(GradProxy, EqualsLeastSDifferenceAtIntegerS) {
  Rng rng(107);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t n = rng.uniform_int(2, 8);
    std::vector<double> gsq;
    for (int64_t i = 0; i < n; ++i) gsq.push_back(rng.uniform_range(0.0, 5.0));
    for (int64_t s = 0; s < n; ++s) {
      double diff = vitc::least_s_sqnorm(gsq, static_cast<double>(s + 1)) -
                    vitc::least_s_sqnorm(gsq, static_cast<double>(s));
      EXPECT_NEAR(vitc::grad_sparsity_wrt_s(gsq, static_cast<double>(s)), diff, 1e-12);
    }
  }
}

ViTConfig one_block_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 1;
  cfg.embed_dim = 4;
  cfg.num_blocks = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 1.0;
  cfg.num_classes = 2;
  return cfg;
}

TEST(SparsityLoss, ZeroWhenDualsOrAmountsAreZero) {
  ViTConfig cfg = one_block_config();
  Rng rng(109);
  auto w = ViTWeights<double>::random_init(cfg, rng);
  PrimalVars primal = PrimalVars::zeros(cfg);
  DualVars dual = DualVars::zeros(cfg);

  primal.s1[0] = 1.0;
  primal.s3[0] = 2.0;
  primal.r[0] = {1.0, 1.0};
  EXPECT_DOUBLE_EQ(vitc::sparsity_loss(w, primal, dual), 0.0);  // duals zero

  dual.y1[0] = dual.y3[0] = 1.0;
  dual.p[0] = {1.0, 1.0};
  PrimalVars zero_primal = PrimalVars::zeros(cfg);
  EXPECT_DOUBLE_EQ(vitc::sparsity_loss(w, zero_primal, dual), 0.0);  // amounts zero
}

TEST(SparsityLoss, HandSetSingleBlockMatchesBruteForce) {
  ViTConfig cfg = one_block_config();  // H=2, head_dim=2, hidden=4
  Rng rng(113);
  auto w = ViTWeights<double>::random_init(cfg, rng);

  // attention projection rows (input units) with norms 1..4 -> head group
  // squared norms {1+4, 9+16} = {5, 25}
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) w.blocks[0].w_proj.at(i, j) = (j == 0) ? double(i + 1) : 0.0;
  // mlp2 rows with norms 2, 1, 3, 5
  std::vector<double> m2 = {2, 1, 3, 5};
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) w.blocks[0].w_mlp2.at(i, j) = (j == 0) ? m2[static_cast<size_t>(i)] : 0.0;

  PrimalVars primal = PrimalVars::zeros(cfg);
  primal.s1[0] = 1.0;
  primal.s3[0] = 1.0;
  primal.r[0] = {1.0, 1.0};
  DualVars dual = DualVars::zeros(cfg);
  dual.y1[0] = 1.0;
  dual.y3[0] = 1.0;
  dual.p[0] = {1.0, 1.0};

  // brute force over subsets
  double expect = brute_force_least({5, 25}, 1)        // head groups
                  + brute_force_least({4, 1, 9, 25}, 1)  // mlp2 rows
                  + brute_force_least({1, 4}, 1)         // within head 0
                  + brute_force_least({9, 16}, 1);       // within head 1
  EXPECT_NEAR(vitc::sparsity_loss(w, primal, dual), expect, 1e-12);
  // the same arithmetic by hand: 5 + 1 + 1 + 9
  EXPECT_NEAR(expect, 16.0, 1e-12);
}

TEST(Prox, AllDualsZeroIsIdentity) {
  ViTConfig cfg = one_block_config();
  Rng rng(127);
  auto w = ViTWeights<double>::random_init(cfg, rng);
  PrimalVars primal = PrimalVars::zeros(cfg);
  primal.s1[0] = 1.5;
  primal.s3[0] = 2.0;
  primal.r[0] = {1.0, 2.0};
  DualVars dual = DualVars::zeros(cfg);
  auto out = vitc::prox_weights(w, primal, dual, 0.5);
  EXPECT_EQ(out.blocks[0].w_proj.values(), w.blocks[0].w_proj.values());
  EXPECT_EQ(out.blocks[0].w_mlp2.values(), w.blocks[0].w_mlp2.values());
}

TEST(Prox, SingleLevelSpecExample) {
  // two singleton input rows with norms [3, 1]; s=1, y=1, eta=0.5:
  // the smaller row shrinks by 1/(1+2*0.5*1) = 0.5, the larger is untouched
  T w = rows_with_norms({3, 1}, 2);
  w.at(0, 1) = 0.0;
  w.at(1, 1) = 0.0;
  vitc::prox_one_level_inplace(w, 1.0, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(w.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(w.at(1, 0), 0.5);

  // verify against the independent numerical minimizer on this instance
  vitc::testing::ProxInstance inst;
  inst.w_bar = rows_with_norms({3, 1}, 2);
  inst.num_heads = 2;
  inst.head_dim = 1;
  inst.s = 1.0;
  inst.y = 1.0;
  inst.eta = 0.5;
  inst.r = {0, 0};
  inst.p = {0, 0};
  double got = vitc::testing::prox_objective(w, inst);
  double best = vitc::testing::prox_oracle_min(inst);
  EXPECT_NEAR(got, best, 1e-12);
}

TEST(Prox, HugePWithinHeadDrivesLosingRowsToZero) {
  T w({4, 2});  // 2 heads x 2 dims
  Rng rng(131);
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.uniform_range(0.5, 2.0);
  std::vector<double> r = {1.0, 1.0};
  std::vector<double> p = {1e12, 1e12};
  vitc::prox_two_level_inplace(w, 2, 2, 0.0, r, 0.0, p, 0.1);
  auto units = vitc::unit_sqnorms(w);
  // one row per head is crushed to ~0
  int crushed = 0;
  for (double u : units)
    if (u < 1e-18) ++crushed;
  EXPECT_EQ(crushed, 2);
}

TEST(Prox, NeverIncreasesNormsAndKeepsUnselectedRows) {
  Rng rng(137);
  for (int trial = 0; trial < 50; ++trial) {
    Rng trng = rng.stream(static_cast<uint64_t>(trial));
    auto inst = vitc::testing::random_prox_instance(trng, true);
    T w = inst.w_bar.clone();
    vitc::prox_two_level_inplace(w, inst.num_heads, inst.head_dim, inst.s, inst.r, inst.y, inst.p, inst.eta);
    auto before = vitc::unit_sqnorms(inst.w_bar);
    auto after = vitc::unit_sqnorms(w);
    int changed = 0;
    for (size_t i = 0; i < before.size(); ++i) {
      EXPECT_LE(after[i], before[i] + 1e-15);
      if (after[i] < before[i] - 1e-15) ++changed;
    }
    int64_t k_groups = static_cast<int64_t>(std::ceil(inst.s));
    int64_t max_changed = k_groups * inst.head_dim;
    for (double ri : inst.r) max_changed += static_cast<int64_t>(std::ceil(ri));
    EXPECT_LE(changed, max_changed);
  }
}

TEST(Prox, AttainsOracleObjectiveOnRandomSmallInstances) {
  Rng rng(139);
  for (int trial = 0; trial < 60; ++trial) {
    Rng trng = rng.stream(static_cast<uint64_t>(trial));
    bool two_level = trial % 2 == 0;
    auto inst = vitc::testing::random_prox_instance(trng, two_level);
    T w = inst.w_bar.clone();
    if (two_level)
      vitc::prox_two_level_inplace(w, inst.num_heads, inst.head_dim, inst.s, inst.r, inst.y, inst.p,
                                   inst.eta);
    else
      vitc::prox_one_level_inplace(w, inst.s, inst.y, inst.eta);
    double got = vitc::testing::prox_objective(w, inst);
    double best = vitc::testing::prox_oracle_min(inst);
    EXPECT_LE(got, best + 1e-6) << "trial " << trial;
    // random scalings never beat the oracle
    double probe = vitc::testing::prox_random_probe_min(inst, trng, 50);
    EXPECT_GE(probe, best - 1e-9);
  }
}

TEST(PrimalVars, ClampKeepsStatedRanges) {
  ViTConfig cfg = one_block_config();
  PrimalVars v = PrimalVars::zeros(cfg);
  v.s1[0] = -1.0;
  v.s3[0] = 100.0;
  v.r[0] = {5.0, -0.5};
  v.clamp(cfg);
  EXPECT_DOUBLE_EQ(v.s1[0], 0.0);
  EXPECT_DOUBLE_EQ(v.s3[0], static_cast<double>(cfg.hidden_dim()));
  EXPECT_DOUBLE_EQ(v.r[0][0], static_cast<double>(cfg.head_dim()));
  EXPECT_DOUBLE_EQ(v.r[0][1], 0.0);
}

TEST(GroupSpec, ValidatesPartition) {
  GroupSpec ok = GroupSpec::heads(2, 3);
  ok.validate(6);
  EXPECT_THROW(ok.validate(7), std::invalid_argument);
  GroupSpec gap;
  gap.ranges = {{0, 2}, {3, 2}};
  EXPECT_THROW(gap.validate(5), std::invalid_argument);
}

}  // namespace
