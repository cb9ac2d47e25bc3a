#include <gtest/gtest.h>

#include <cmath>

#include "testutil.hpp"
#include "vitc/vit.hpp"

using vitc::BlockMask;
using vitc::BlockPlan;
using vitc::CompressionPlan;
using vitc::DiffTensor;
using vitc::Graph;
using vitc::Rng;
using vitc::ViTConfig;
using vitc::ViTWeights;
using vitc::testing::grad_copy;
using vitc::testing::random_tensor;

namespace {

using T = DiffTensor<double>;
using W = ViTWeights<double>;

ViTConfig tiny_config() {
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

std::vector<float> random_images(const ViTConfig& cfg, int64_t batch, Rng& rng) {
  std::vector<float> imgs(static_cast<size_t>(batch * cfg.channels * cfg.image_size * cfg.image_size));
  for (auto& v : imgs) v = static_cast<float>(rng.uniform());
  return imgs;
}

T gate_pair(double g0, double g1) { return T::from({1, 2}, {g0, g1}); }

double max_abs_diff(const T& a, const T& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

TEST(ForwardBlock, FullSkipGateReturnsInputExactly) {
  ViTConfig cfg = tiny_config();
  Rng rng(3);
  W w = W::random_init(cfg, rng);
  T x = random_tensor({2 * cfg.num_tokens(), cfg.embed_dim}, rng, -1, 1);
  T gate = gate_pair(1.0, 0.0);
  T out = vitc::forward_block<double>(nullptr, w.blocks[0], x, 2, cfg.num_tokens(), &gate, nullptr);
  EXPECT_EQ(out.values(), x.values());
}

TEST(ForwardBlock, NoSkipGateEqualsPlainBlock) {
  ViTConfig cfg = tiny_config();
  Rng rng(5);
  W w = W::random_init(cfg, rng);
  T x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng, -1, 1);
  T gate = gate_pair(0.0, 1.0);
  T gated = vitc::forward_block<double>(nullptr, w.blocks[0], x, 1, cfg.num_tokens(), &gate, nullptr);
  T plain = vitc::forward_block<double>(nullptr, w.blocks[0], x, 1, cfg.num_tokens(), nullptr, nullptr);
  EXPECT_EQ(gated.values(), plain.values());
}

TEST(ForwardBlock, HalfHalfGateIsMeanOfBranches) {
  ViTConfig cfg = tiny_config();
  Rng rng(7);
  W w = W::random_init(cfg, rng);
  T x = random_tensor({cfg.num_tokens(), cfg.embed_dim}, rng, -1, 1);
  T gate = gate_pair(0.5, 0.5);
  T mixed = vitc::forward_block<double>(nullptr, w.blocks[0], x, 1, cfg.num_tokens(), &gate, nullptr);
  T plain = vitc::forward_block<double>(nullptr, w.blocks[0], x, 1, cfg.num_tokens(), nullptr, nullptr);
  for (int64_t i = 0; i < mixed.numel(); ++i)
    EXPECT_NEAR(mixed.data()[i], 0.5 * x.data()[i] + 0.5 * plain.data()[i], 1e-12);
}

TEST(Forward, AllSkipGatesReduceToStemClassifier) {
  ViTConfig cfg = tiny_config();
  Rng rng(11);
  W w = W::random_init(cfg, rng);
  auto imgs = random_images(cfg, 2, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 2);

  std::vector<T> gates;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) gates.push_back(gate_pair(1.0, 0.0));
  vitc::ForwardOptions<double> opt;
  opt.gates = &gates;
  T logits = vitc::vit_forward<double>(nullptr, w, patches, 2, opt);

  // reference: no block contributes
  T emb = vitc::matmul<double>(nullptr, patches, w.patch_embed);
  T tok = vitc::assemble_tokens<double>(nullptr, emb, w.class_token, w.pos_embed, 2);
  T ln = vitc::layernorm<double>(nullptr, tok, w.final_gamma, w.final_beta, vitc::kLayernormEps);
  T cls = vitc::gather_rows<double>(nullptr, ln, {0, cfg.num_tokens()});
  T ref = vitc::matmul<double>(nullptr, cls, w.head);
  EXPECT_EQ(logits.values(), ref.values());
}

TEST(Forward, FullKeepMasksBitForBitIdenticalToNoMasks) {
  ViTConfig cfg = tiny_config();
  Rng rng(13);
  W w = W::random_init(cfg, rng);
  auto imgs = random_images(cfg, 2, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 2);

  std::vector<BlockMask> masks(static_cast<size_t>(cfg.num_blocks), BlockMask::full_keep(cfg));
  vitc::ForwardOptions<double> opt;
  opt.masks = &masks;
  T with_masks = vitc::vit_forward<double>(nullptr, w, patches, 2, opt);
  T without = vitc::vit_forward<double>(nullptr, w, patches, 2);
  EXPECT_EQ(with_masks.values(), without.values());
}

TEST(Forward, RejectsWrongImageSize) {
  ViTConfig cfg = tiny_config();
  Rng rng(17);
  W w = W::random_init(cfg, rng);
  T bad = T::zeros({3, cfg.patch_vec()});
  EXPECT_THROW(vitc::vit_forward<double>(nullptr, w, bad, 2), std::invalid_argument);
  std::vector<float> wrong(static_cast<size_t>(2 * cfg.channels * 4 * 4));
  EXPECT_THROW(vitc::patchify<double>(cfg, wrong, 2), std::invalid_argument);
}

TEST(Forward, GradientMatchesFiniteDifferencesWholeNetwork) {
  ViTConfig cfg = tiny_config();
  cfg.num_blocks = 2;
  Rng rng(19);
  W w = W::random_init(cfg, rng);
  auto imgs = random_images(cfg, 2, rng);
  T probe = random_tensor({2, cfg.num_classes}, rng, 0.2, 1.0);

  auto build = [&](Graph<double>* g) {
    T patches = vitc::patchify<double>(cfg, imgs, 2);
    return vitc::sum_sq(g, vitc::mul(g, vitc::vit_forward(g, w, patches, 2), probe));
  };
  Graph<double> g;
  T loss = build(&g);
  g.backward(loss);

  auto params = w.parameters();
  std::vector<T> leaves;
  std::vector<std::vector<double>> grads;
  for (auto* p : params) {
    leaves.push_back(*p);
    grads.push_back(grad_copy(*p));
  }
  double err = vitc::testing::max_fd_rel_err(leaves, grads, [&] { return build(nullptr).data()[0]; });
  EXPECT_LT(err, 1e-4);
}

TEST(Forward, AllSkipGatesSendZeroGradientToBlockWeights) {
  ViTConfig cfg = tiny_config();
  Rng rng(23);
  W w = W::random_init(cfg, rng);
  auto imgs = random_images(cfg, 1, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 1);
  std::vector<T> gates;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) gates.push_back(gate_pair(1.0, 0.0));
  vitc::ForwardOptions<double> opt;
  opt.gates = &gates;

  Graph<double> g;
  T logits = vitc::vit_forward(&g, w, patches, 1, opt);
  T loss = vitc::sum_sq(&g, logits);
  g.backward(loss);

  for (const auto& b : w.blocks) {
    for (const auto* t : {&b.w_q, &b.w_k, &b.w_v, &b.w_proj, &b.w_mlp1, &b.w_mlp2}) {
      if (!t->grad_allocated()) continue;
      for (double v : t->grad_values()) EXPECT_EQ(v, 0.0);
    }
  }
  // the class-token path (the only one reaching the classifier) still gets gradient
  ASSERT_TRUE(w.class_token.grad_allocated());
  double s = 0;
  for (double v : w.class_token.grad_values()) s += std::abs(v);
  EXPECT_GT(s, 0.0);
}

TEST(Forward, PermutingKeptHeadsLeavesLogitsUnchanged) {
  ViTConfig cfg = tiny_config();
  Rng rng(29);
  W w = W::random_init(cfg, rng);
  auto imgs = random_images(cfg, 2, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 2);
  T base = vitc::vit_forward<double>(nullptr, w, patches, 2);

  // swap heads 0 and 1 of block 1: Q/K/V column groups jointly with proj rows
  int64_t dh = cfg.head_dim();
  auto& blk = w.blocks[1];
  auto swap_cols = [&](T& m) {
    for (int64_t i = 0; i < m.rows(); ++i)
      for (int64_t j = 0; j < dh; ++j) std::swap(m.at(i, j), m.at(i, dh + j));
  };
  swap_cols(blk.w_q);
  swap_cols(blk.w_k);
  swap_cols(blk.w_v);
  for (int64_t j = 0; j < blk.w_proj.cols(); ++j)
    for (int64_t i = 0; i < dh; ++i) std::swap(blk.w_proj.at(i, j), blk.w_proj.at(dh + i, j));

  T permuted = vitc::vit_forward<double>(nullptr, w, patches, 2);
  EXPECT_LT(max_abs_diff(base, permuted), 1e-10);
}

CompressionPlan empty_plan(const ViTConfig& cfg) {
  CompressionPlan p;
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    BlockPlan b;
    b.dropped_dims.assign(static_cast<size_t>(cfg.num_heads), {});
    p.blocks.push_back(b);
  }
  return p;
}

TEST(MaskedCopy, EmptyPlanIsStructurallyIdentical) {
  ViTConfig cfg = tiny_config();
  Rng rng(31);
  W w = W::random_init(cfg, rng);
  W out = vitc::masked_copy(w, empty_plan(cfg));
  ASSERT_EQ(out.blocks.size(), w.blocks.size());
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    EXPECT_EQ(out.blocks[l].w_q.values(), w.blocks[l].w_q.values());
    EXPECT_EQ(out.blocks[l].w_v.shape(), w.blocks[l].w_v.shape());
    EXPECT_EQ(out.blocks[l].w_mlp2.values(), w.blocks[l].w_mlp2.values());
    EXPECT_EQ(out.blocks[l].v_head_dims, w.blocks[l].v_head_dims);
  }
}

TEST(MaskedCopy, DropOneHeadShrinksProjInputAndMatchesMaskedModel) {
  ViTConfig cfg = tiny_config();
  Rng rng(37);
  W w = W::random_init(cfg, rng);
  CompressionPlan plan = empty_plan(cfg);
  plan.blocks[0].dropped_heads = {1};

  W small = vitc::masked_copy(w, plan);
  EXPECT_EQ(small.blocks[0].w_proj.rows(), cfg.embed_dim - cfg.head_dim());
  EXPECT_EQ(small.blocks[0].w_q.cols(), cfg.embed_dim - cfg.head_dim());

  auto imgs = random_images(cfg, 2, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 2);
  auto [masks, skip] = vitc::masks_from_plan(cfg, plan);
  vitc::ForwardOptions<double> opt;
  opt.masks = &masks;
  opt.skip = &skip;
  T masked_logits = vitc::vit_forward<double>(nullptr, w, patches, 2, opt);
  T small_logits = vitc::vit_forward<double>(nullptr, small, patches, 2);
  EXPECT_LT(max_abs_diff(masked_logits, small_logits), 1e-6);
}

TEST(MaskedCopy, SkippedBlockIsRemovedAndMatchesHardSkip) {
  ViTConfig cfg = tiny_config();
  Rng rng(41);
  W w = W::random_init(cfg, rng);
  CompressionPlan plan = empty_plan(cfg);
  plan.blocks[2].skip = true;

  W small = vitc::masked_copy(w, plan);
  EXPECT_EQ(small.blocks.size(), static_cast<size_t>(cfg.num_blocks - 1));

  auto imgs = random_images(cfg, 2, rng);
  T patches = vitc::patchify<double>(cfg, imgs, 2);
  auto [masks, skip] = vitc::masks_from_plan(cfg, plan);
  vitc::ForwardOptions<double> opt;
  opt.masks = &masks;
  opt.skip = &skip;
  T masked_logits = vitc::vit_forward<double>(nullptr, w, patches, 2, opt);
  T small_logits = vitc::vit_forward<double>(nullptr, small, patches, 2);
  EXPECT_LT(max_abs_diff(masked_logits, small_logits), 1e-6);
}

TEST(MaskedCopy, RandomPlansForwardEquivalence) {
  ViTConfig cfg = tiny_config();
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    Rng trng = rng.stream(static_cast<uint64_t>(trial));
    W w = W::random_init(cfg, trng);
    CompressionPlan plan = empty_plan(cfg);
    for (auto& bp : plan.blocks) {
      if (trng.uniform() < 0.25) {
        bp.skip = true;
        continue;
      }
      if (trng.uniform() < 0.5) bp.dropped_heads = {trng.uniform_int(0, cfg.num_heads - 1)};
      for (int64_t h = 0; h < cfg.num_heads; ++h) {
        bool head_dropped =
            std::find(bp.dropped_heads.begin(), bp.dropped_heads.end(), h) != bp.dropped_heads.end();
        if (head_dropped) continue;
        int64_t ndrop = trng.uniform_int(0, cfg.head_dim() / 2);
        std::vector<int64_t> all(static_cast<size_t>(cfg.head_dim()));
        std::iota(all.begin(), all.end(), 0);
        trng.shuffle(all);
        bp.dropped_dims[static_cast<size_t>(h)].assign(all.begin(), all.begin() + ndrop);
      }
      int64_t hdrop = trng.uniform_int(0, cfg.hidden_dim() / 2);
      std::vector<int64_t> allh(static_cast<size_t>(cfg.hidden_dim()));
      std::iota(allh.begin(), allh.end(), 0);
      trng.shuffle(allh);
      bp.dropped_hidden.assign(allh.begin(), allh.begin() + hdrop);
    }
    bool any_kept = false;
    for (auto& bp : plan.blocks) any_kept |= !bp.skip;
    if (!any_kept) plan.blocks[0].skip = false;

    W small = vitc::masked_copy(w, plan);
    auto imgs = random_images(cfg, 2, trng);
    T patches = vitc::patchify<double>(cfg, imgs, 2);
    auto [masks, skip] = vitc::masks_from_plan(cfg, plan);
    vitc::ForwardOptions<double> opt;
    opt.masks = &masks;
    opt.skip = &skip;
    T masked_logits = vitc::vit_forward<double>(nullptr, w, patches, 2, opt);
    T small_logits = vitc::vit_forward<double>(nullptr, small, patches, 2);
    EXPECT_LT(max_abs_diff(masked_logits, small_logits), 1e-6) << "trial " << trial;
  }
}

TEST(MaskedCopy, RejectsPlanEmptyingEveryHead) {
  ViTConfig cfg = tiny_config();
  Rng rng(47);
  W w = W::random_init(cfg, rng);
  CompressionPlan plan = empty_plan(cfg);
  plan.blocks[1].dropped_heads = {0, 1};
  EXPECT_THROW(vitc::masked_copy(w, plan), std::invalid_argument);
}

TEST(BlockMask, ValidatesShapeAndDroppedHeadInvariant) {
  ViTConfig cfg = tiny_config();
  BlockMask m = BlockMask::full_keep(cfg);
  m.validate(cfg);

  BlockMask bad = m;
  bad.mlp_hidden_keep.pop_back();
  EXPECT_THROW(bad.validate(cfg), std::invalid_argument);

  BlockMask bad2 = m;
  bad2.head_keep[0] = 0;  // dims still set to keep
  EXPECT_THROW(bad2.validate(cfg), std::invalid_argument);

  Rng rng(53);
  W w = W::random_init(cfg, rng);
  T x = vitc::DiffTensor<double>::zeros({cfg.num_tokens(), cfg.embed_dim});
  BlockMask wrong = BlockMask::full_keep(cfg);
  wrong.mlp_hidden_keep.resize(3);
  EXPECT_THROW(
      vitc::forward_block<double>(nullptr, w.blocks[0], x, 1, cfg.num_tokens(), nullptr, &wrong),
      std::invalid_argument);
}

}  // namespace
