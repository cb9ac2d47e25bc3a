#include <gtest/gtest.h>

#include <cmath>

#include "testutil.hpp"
#include "vitc/flops.hpp"

using vitc::BlockPlan;
using vitc::CompressionPlan;
using vitc::PrimalVars;
using vitc::Rng;
using vitc::ViTConfig;
using vitc::ViTWeights;

namespace {

ViTConfig deit_config(int64_t d, int64_t h) {
  ViTConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  cfg.channels = 3;
  cfg.embed_dim = d;
  cfg.num_blocks = 12;
  cfg.num_heads = h;
  cfg.mlp_ratio = 4.0;
  cfg.num_classes = 1000;
  return cfg;
}

ViTConfig toy_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 2;
  cfg.embed_dim = 16;
  cfg.num_blocks = 3;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.num_classes = 3;
  return cfg;
}

std::vector<double> all_keep(const ViTConfig& cfg) {
  return std::vector<double>(static_cast<size_t>(cfg.num_blocks), 1.0);
}

// published dense baselines: 1.3 / 4.6 / 17.6 GFLOPs for the three standard
// model sizes at 224x224 with 16x16 patches
TEST(FlopsModel, DenseBaselinesWithinFivePercent) {
  struct Anchor {
    int64_t d, h;
    double gflops;
  };
  for (const Anchor& a : {Anchor{192, 3, 1.3}, Anchor{384, 6, 4.6}, Anchor{768, 12, 17.6}}) {
    ViTConfig cfg = deit_config(a.d, a.h);
    double total = vitc::flops_dense(cfg);
    EXPECT_NEAR(total, a.gflops * 1e9, 0.05 * a.gflops * 1e9) << "d=" << a.d;
  }
}

TEST(FlopsModel, TinyPerBlockBreakdownMatchesKnownSplit) {
  // 192-dim 3-head block at 197 tokens: ~8.71e7 matmul + ~1.49e7 attention
  ViTConfig cfg = deit_config(192, 3);
  auto bd = vitc::flops_soft(cfg, PrimalVars::zeros(cfg), all_keep(cfg));
  const auto& b = bd.blocks[0];
  EXPECT_NEAR(b.qkv + b.proj + b.mlp1 + b.mlp2, 8.71e7, 0.02e7);
  EXPECT_NEAR(b.attn, 1.49e7, 0.01e7);
  EXPECT_NEAR(b.raw(), 1.02e8, 0.01e8);
}

TEST(FlopsModel, SkippedBlockCostsNothing) {
  ViTConfig cfg = toy_config();
  PrimalVars primal = PrimalVars::zeros(cfg);
  std::vector<double> keep = all_keep(cfg);
  keep[1] = 0.0;
  auto bd = vitc::flops_soft(cfg, primal, keep);
  EXPECT_DOUBLE_EQ(bd.blocks[1].expected(), 0.0);
  EXPECT_GT(bd.blocks[0].expected(), 0.0);
}

TEST(FlopsModel, AllHeadsPrunedZeroesAttentionTermsRegardlessOfR) {
  ViTConfig cfg = toy_config();
  PrimalVars primal = PrimalVars::zeros(cfg);
  primal.s1[0] = static_cast<double>(cfg.num_heads);
  primal.r[0] = {1.0, 2.0};
  auto bd = vitc::flops_soft(cfg, primal, all_keep(cfg));
  EXPECT_DOUBLE_EQ(bd.blocks[0].qkv, 0.0);
  EXPECT_DOUBLE_EQ(bd.blocks[0].attn, 0.0);
  EXPECT_DOUBLE_EQ(bd.blocks[0].proj, 0.0);
  EXPECT_GT(bd.blocks[0].mlp1, 0.0);
}

TEST(FlopsModel, HalvingEveryKeptQuantityBeatsHalfDense) {
  ViTConfig cfg = toy_config();
  PrimalVars primal = PrimalVars::zeros(cfg);
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    primal.s1[static_cast<size_t>(l)] = cfg.num_heads / 2.0;
    primal.s3[static_cast<size_t>(l)] = cfg.hidden_dim() / 2.0;
    for (auto& r : primal.r[static_cast<size_t>(l)]) r = cfg.head_dim() / 2.0;
  }
  auto dense = vitc::flops_soft(cfg, PrimalVars::zeros(cfg), all_keep(cfg));
  auto half = vitc::flops_soft(cfg, primal, all_keep(cfg));
  for (int64_t l = 0; l < cfg.num_blocks; ++l)
    EXPECT_LT(half.blocks[static_cast<size_t>(l)].raw(),
              0.5 * dense.blocks[static_cast<size_t>(l)].raw());
}

TEST(FlopsModel, DenseEqualityAndMonotonicity) {
  ViTConfig cfg = toy_config();
  EXPECT_DOUBLE_EQ(vitc::flops_total(cfg, PrimalVars::zeros(cfg), all_keep(cfg)), vitc::flops_dense(cfg));

  Rng rng(301);
  for (int trial = 0; trial < 100; ++trial) {
    PrimalVars primal = PrimalVars::zeros(cfg);
    std::vector<double> keep = all_keep(cfg);
    for (int64_t l = 0; l < cfg.num_blocks; ++l) {
      primal.s1[static_cast<size_t>(l)] = rng.uniform_range(0, cfg.num_heads);
      primal.s3[static_cast<size_t>(l)] = rng.uniform_range(0, cfg.hidden_dim());
      for (auto& r : primal.r[static_cast<size_t>(l)]) r = rng.uniform_range(0, cfg.head_dim());
      keep[static_cast<size_t>(l)] = rng.uniform();
    }
    double base = vitc::flops_total(cfg, primal, keep);

    // bumping any pruning amount up, or any keep probability down, never
    // increases the total
    PrimalVars p2 = primal;
    int64_t l = rng.uniform_int(0, cfg.num_blocks - 1);
    p2.s1[static_cast<size_t>(l)] =
        std::min<double>(cfg.num_heads, p2.s1[static_cast<size_t>(l)] + rng.uniform());
    EXPECT_LE(vitc::flops_total(cfg, p2, keep), base + 1e-9);

    PrimalVars p3 = primal;
    p3.s3[static_cast<size_t>(l)] =
        std::min<double>(cfg.hidden_dim(), p3.s3[static_cast<size_t>(l)] + rng.uniform());
    EXPECT_LE(vitc::flops_total(cfg, p3, keep), base + 1e-9);

    std::vector<double> k2 = keep;
    k2[static_cast<size_t>(l)] *= rng.uniform();
    EXPECT_LE(vitc::flops_total(cfg, primal, k2), base + 1e-9);
  }
}

TEST(FlopsModel, AnalyticPartialsMatchFiniteDifferences) {
  ViTConfig cfg = toy_config();
  Rng rng(307);
  for (int trial = 0; trial < 20; ++trial) {
    PrimalVars primal = PrimalVars::zeros(cfg);
    std::vector<double> keep = all_keep(cfg);
    for (int64_t l = 0; l < cfg.num_blocks; ++l) {
      primal.s1[static_cast<size_t>(l)] = rng.uniform_range(0.2, cfg.num_heads - 0.2);
      primal.s3[static_cast<size_t>(l)] = rng.uniform_range(0.2, cfg.hidden_dim() - 0.2);
      for (auto& r : primal.r[static_cast<size_t>(l)]) r = rng.uniform_range(0.2, cfg.head_dim() - 0.2);
      keep[static_cast<size_t>(l)] = rng.uniform_range(0.1, 0.9);
    }
    auto parts = vitc::flops_partials(cfg, primal, keep);
    const double h = 1e-4;
    auto check = [&](double analytic, double fd) {
      double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
      EXPECT_LT(rel, 1e-6);
    };
    for (int64_t l = 0; l < cfg.num_blocks; ++l) {
      auto f = [&](PrimalVars& p, std::vector<double>& k) { return vitc::flops_total(cfg, p, k); };
      {
        PrimalVars p = primal;
        p.s1[static_cast<size_t>(l)] += h;
        double fp = f(p, keep);
        p.s1[static_cast<size_t>(l)] -= 2 * h;
        double fm = f(p, keep);
        check(parts.s1[static_cast<size_t>(l)], (fp - fm) / (2 * h));
      }
      {
        PrimalVars p = primal;
        p.s3[static_cast<size_t>(l)] += h;
        double fp = f(p, keep);
        p.s3[static_cast<size_t>(l)] -= 2 * h;
        double fm = f(p, keep);
        check(parts.s3[static_cast<size_t>(l)], (fp - fm) / (2 * h));
      }
      for (size_t i = 0; i < primal.r[static_cast<size_t>(l)].size(); ++i) {
        PrimalVars p = primal;
        p.r[static_cast<size_t>(l)][i] += h;
        double fp = f(p, keep);
        p.r[static_cast<size_t>(l)][i] -= 2 * h;
        double fm = f(p, keep);
        check(parts.r[static_cast<size_t>(l)][i], (fp - fm) / (2 * h));
      }
      {
        std::vector<double> k = keep;
        k[static_cast<size_t>(l)] += h;
        double fp = f(primal, k);
        k[static_cast<size_t>(l)] -= 2 * h;
        double fm = f(primal, k);
        check(parts.keep[static_cast<size_t>(l)], (fp - fm) / (2 * h));
      }
    }
  }
}

TEST(ResourceLoss, SpecExamples) {
  ViTConfig cfg = toy_config();
  PrimalVars primal = PrimalVars::zeros(cfg);
  auto keep = all_keep(cfg);
  double dense = vitc::flops_dense(cfg);
  EXPECT_DOUBLE_EQ(vitc::resource_loss(cfg, primal, keep, 0.0, dense / 2), 0.0);
  EXPECT_DOUBLE_EQ(vitc::resource_loss(cfg, primal, keep, 3.0, dense), 0.0);
  // z=2, excess 1e8 -> 2e8
  EXPECT_DOUBLE_EQ(vitc::resource_loss(cfg, primal, keep, 2.0, dense - 1e8), 2e8);
  EXPECT_THROW(vitc::resource_loss(cfg, primal, keep, -1.0, dense), std::invalid_argument);
}

TEST(FlopsModel, PlanCountEqualsExtractedRecount) {
  ViTConfig cfg = toy_config();
  Rng rng(311);
  auto w = ViTWeights<double>::random_init(cfg, rng);

  CompressionPlan plan;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    BlockPlan b;
    b.dropped_dims.assign(static_cast<size_t>(cfg.num_heads), {});
    plan.blocks.push_back(b);
  }
  plan.blocks[0].dropped_heads = {1};
  plan.blocks[0].dropped_dims[0] = {2, 5};
  plan.blocks[0].dropped_hidden = {0, 3, 7};
  plan.blocks[1].skip = true;
  plan.blocks[2].dropped_dims[1] = {0};
  plan.blocks[2].dropped_hidden = {4};

  auto small = vitc::masked_copy(w, plan);
  EXPECT_DOUBLE_EQ(vitc::flops_of_plan(cfg, plan).total(), vitc::flops_recount(small));

  // the dense plan reproduces the dense count
  CompressionPlan none;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    BlockPlan b;
    b.dropped_dims.assign(static_cast<size_t>(cfg.num_heads), {});
    none.blocks.push_back(b);
  }
  EXPECT_DOUBLE_EQ(vitc::flops_of_plan(cfg, none).total(), vitc::flops_dense(cfg));
  EXPECT_DOUBLE_EQ(vitc::flops_recount(w), vitc::flops_dense(cfg));
}

}  // namespace
