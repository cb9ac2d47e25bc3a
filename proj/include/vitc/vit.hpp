#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitc/ops.hpp"
#include "vitc/plan.hpp"
#include "vitc/rng.hpp"
#include "vitc/tensor.hpp"

namespace vitc {

inline constexpr double kLayernormEps = 1e-5;

struct ViTConfig {
  int64_t image_size = 32;
  int64_t patch_size = 8;
  int64_t channels = 3;
  int64_t embed_dim = 64;
  int64_t num_blocks = 4;
  int64_t num_heads = 4;
  double mlp_ratio = 4.0;
  int64_t num_classes = 10;

  int64_t head_dim() const { return embed_dim / num_heads; }
  int64_t hidden_dim() const { return static_cast<int64_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim))); }
  int64_t patches_per_side() const { return image_size / patch_size; }
  int64_t num_patches() const { return patches_per_side() * patches_per_side(); }
  int64_t num_tokens() const { return num_patches() + 1; }
  int64_t patch_vec() const { return channels * patch_size * patch_size; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || channels <= 0 || embed_dim <= 0 || num_blocks <= 0 ||
        num_heads <= 0 || num_classes <= 0 || mlp_ratio <= 0)
      throw std::invalid_argument("ViTConfig: all dimensions must be positive");
    if (image_size % patch_size != 0)
      throw std::invalid_argument("ViTConfig: image_size " + std::to_string(image_size) +
                                  " not divisible by patch_size " + std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
      throw std::invalid_argument("ViTConfig: embed_dim " + std::to_string(embed_dim) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
    if (hidden_dim() < 1) throw std::invalid_argument("ViTConfig: mlp hidden dimension must be >= 1");
  }

  bool operator==(const ViTConfig&) const = default;
};

// Hard keep/drop masks realizing (s, r) decisions on a dense block.
struct BlockMask {
  std::vector<uint8_t> head_keep;                   // H
  std::vector<std::vector<uint8_t>> headdim_keep;   // H x head_dim
  std::vector<uint8_t> mlp_hidden_keep;             // hidden

  static BlockMask full_keep(const ViTConfig& cfg) {
    BlockMask m;
    m.head_keep.assign(static_cast<size_t>(cfg.num_heads), 1);
    m.headdim_keep.assign(static_cast<size_t>(cfg.num_heads),
                          std::vector<uint8_t>(static_cast<size_t>(cfg.head_dim()), 1));
    m.mlp_hidden_keep.assign(static_cast<size_t>(cfg.hidden_dim()), 1);
    return m;
  }

  void validate(const ViTConfig& cfg) const {
    if (static_cast<int64_t>(head_keep.size()) != cfg.num_heads ||
        static_cast<int64_t>(headdim_keep.size()) != cfg.num_heads ||
        static_cast<int64_t>(mlp_hidden_keep.size()) != cfg.hidden_dim())
      throw std::invalid_argument("BlockMask: shape inconsistent with model configuration");
    for (size_t i = 0; i < headdim_keep.size(); ++i) {
      if (static_cast<int64_t>(headdim_keep[i].size()) != cfg.head_dim())
        throw std::invalid_argument("BlockMask: head-dim mask width inconsistent with configuration");
      if (!head_keep[i])
        for (uint8_t k : headdim_keep[i])
          if (k) throw std::invalid_argument("BlockMask: dropped head must drop all of its dims");
    }
  }
};

// One transformer block's parameters. Blocks carry their own structure so a
// physically extracted model (fewer heads, narrower V per head, slimmer MLP)
// reuses the same forward path as the dense one. Weight matrices are stored
// (input_dim x output_dim), applied as x * W.
template <typename Real>
struct BlockWeights {
  int64_t qk_head_dim = 0;
  std::vector<int64_t> v_head_dims;  // per kept head; dense: head_dim everywhere
  int64_t hidden = 0;

  DiffTensor<Real> w_q, w_k, w_v;     // D x (H*qk_head_dim), D x (H*qk_head_dim), D x sum(v_head_dims)
  DiffTensor<Real> w_proj;            // sum(v_head_dims) x D
  DiffTensor<Real> w_mlp1;            // D x hidden
  DiffTensor<Real> w_mlp2;            // hidden x D
  DiffTensor<Real> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  int64_t num_heads() const { return static_cast<int64_t>(v_head_dims.size()); }
  int64_t v_total() const { return std::accumulate(v_head_dims.begin(), v_head_dims.end(), int64_t{0}); }
};

template <typename Real>
struct ViTWeights {
  ViTConfig config;  // dense architecture; blocks may be fewer/slimmer after extraction
  std::vector<BlockWeights<Real>> blocks;
  DiffTensor<Real> patch_embed;  // patch_vec x D
  DiffTensor<Real> class_token;  // D
  DiffTensor<Real> pos_embed;    // num_tokens x D
  DiffTensor<Real> final_gamma, final_beta;
  DiffTensor<Real> head;  // D x num_classes

  static ViTWeights random_init(const ViTConfig& cfg, Rng& rng, double std_dev = 0.02) {
    cfg.validate();
    ViTWeights w;
    w.config = cfg;
    auto randn = [&](std::vector<int64_t> shape) {
      DiffTensor<Real> t(std::move(shape));
      for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<Real>(std_dev * rng.normal());
      return t;
    };
    auto ones = [&](int64_t n) {
      DiffTensor<Real> t({n});
      std::fill(t.values().begin(), t.values().end(), Real(1));
      return t;
    };
    int64_t d = cfg.embed_dim, dh = cfg.head_dim(), hid = cfg.hidden_dim();
    w.patch_embed = randn({cfg.patch_vec(), d});
    w.class_token = randn({d});
    w.pos_embed = randn({cfg.num_tokens(), d});
    w.final_gamma = ones(d);
    w.final_beta = DiffTensor<Real>({d});
    w.head = randn({d, cfg.num_classes});
    for (int64_t l = 0; l < cfg.num_blocks; ++l) {
      BlockWeights<Real> b;
      b.qk_head_dim = dh;
      b.v_head_dims.assign(static_cast<size_t>(cfg.num_heads), dh);
      b.hidden = hid;
      b.w_q = randn({d, d});
      b.w_k = randn({d, d});
      b.w_v = randn({d, d});
      b.w_proj = randn({d, d});
      b.w_mlp1 = randn({d, hid});
      b.w_mlp2 = randn({hid, d});
      b.ln1_gamma = ones(d);
      b.ln1_beta = DiffTensor<Real>({d});
      b.ln2_gamma = ones(d);
      b.ln2_beta = DiffTensor<Real>({d});
      w.blocks.push_back(std::move(b));
    }
    return w;
  }

  // true when every block still has the dense structure of config
  bool dense_shaped() const {
    if (static_cast<int64_t>(blocks.size()) != config.num_blocks) return false;
    for (const auto& b : blocks) {
      if (b.num_heads() != config.num_heads || b.qk_head_dim != config.head_dim() ||
          b.hidden != config.hidden_dim())
        return false;
      for (int64_t vd : b.v_head_dims)
        if (vd != config.head_dim()) return false;
    }
    return true;
  }

  std::vector<DiffTensor<Real>*> parameters() {
    std::vector<DiffTensor<Real>*> ps = {&patch_embed, &class_token, &pos_embed};
    for (auto& b : blocks) {
      ps.push_back(&b.w_q);
      ps.push_back(&b.w_k);
      ps.push_back(&b.w_v);
      ps.push_back(&b.w_proj);
      ps.push_back(&b.w_mlp1);
      ps.push_back(&b.w_mlp2);
      ps.push_back(&b.ln1_gamma);
      ps.push_back(&b.ln1_beta);
      ps.push_back(&b.ln2_gamma);
      ps.push_back(&b.ln2_beta);
    }
    ps.push_back(&final_gamma);
    ps.push_back(&final_beta);
    ps.push_back(&head);
    return ps;
  }

  ViTWeights clone() const {
    ViTWeights w;
    w.config = config;
    w.patch_embed = patch_embed.clone();
    w.class_token = class_token.clone();
    w.pos_embed = pos_embed.clone();
    w.final_gamma = final_gamma.clone();
    w.final_beta = final_beta.clone();
    w.head = head.clone();
    for (const auto& b : blocks) {
      BlockWeights<Real> nb;
      nb.qk_head_dim = b.qk_head_dim;
      nb.v_head_dims = b.v_head_dims;
      nb.hidden = b.hidden;
      nb.w_q = b.w_q.clone();
      nb.w_k = b.w_k.clone();
      nb.w_v = b.w_v.clone();
      nb.w_proj = b.w_proj.clone();
      nb.w_mlp1 = b.w_mlp1.clone();
      nb.w_mlp2 = b.w_mlp2.clone();
      nb.ln1_gamma = b.ln1_gamma.clone();
      nb.ln1_beta = b.ln1_beta.clone();
      nb.ln2_gamma = b.ln2_gamma.clone();
      nb.ln2_beta = b.ln2_beta.clone();
      w.blocks.push_back(std::move(nb));
    }
    return w;
  }

  template <typename R2>
  ViTWeights<R2> cast() const {
    ViTWeights<R2> w;
    w.config = config;
    auto cv = [](const DiffTensor<Real>& t) {
      DiffTensor<R2> o(t.shape());
      for (int64_t i = 0; i < t.numel(); ++i) o.data()[i] = static_cast<R2>(t.data()[i]);
      return o;
    };
    w.patch_embed = cv(patch_embed);
    w.class_token = cv(class_token);
    w.pos_embed = cv(pos_embed);
    w.final_gamma = cv(final_gamma);
    w.final_beta = cv(final_beta);
    w.head = cv(head);
    for (const auto& b : blocks) {
      BlockWeights<R2> nb;
      nb.qk_head_dim = b.qk_head_dim;
      nb.v_head_dims = b.v_head_dims;
      nb.hidden = b.hidden;
      nb.w_q = cv(b.w_q);
      nb.w_k = cv(b.w_k);
      nb.w_v = cv(b.w_v);
      nb.w_proj = cv(b.w_proj);
      nb.w_mlp1 = cv(b.w_mlp1);
      nb.w_mlp2 = cv(b.w_mlp2);
      nb.ln1_gamma = cv(b.ln1_gamma);
      nb.ln1_beta = cv(b.ln1_beta);
      nb.ln2_gamma = cv(b.ln2_gamma);
      nb.ln2_beta = cv(b.ln2_beta);
      w.blocks.push_back(std::move(nb));
    }
    return w;
  }
};

// Flattens images (batch x channels x H x W, row-major) into patch vectors:
// one row per patch, channel-major within the row.
template <typename Real>
DiffTensor<Real> patchify(const ViTConfig& cfg, const std::vector<float>& images, int64_t batch) {
  int64_t hw = cfg.image_size, c = cfg.channels, p = cfg.patch_size, side = cfg.patches_per_side();
  if (static_cast<int64_t>(images.size()) != batch * c * hw * hw)
    throw std::invalid_argument("patchify: image buffer does not match configured image size");
  DiffTensor<Real> out({batch * cfg.num_patches(), cfg.patch_vec()});
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t py = 0; py < side; ++py)
      for (int64_t px = 0; px < side; ++px) {
        int64_t row = b * cfg.num_patches() + py * side + px;
        Real* dst = out.data() + row * cfg.patch_vec();
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t y = 0; y < p; ++y)
            for (int64_t x = 0; x < p; ++x)
              dst[(ch * p + y) * p + x] = static_cast<Real>(
                  images[static_cast<size_t>(((b * c + ch) * hw + py * p + y) * hw + px * p + x)]);
      }
  return out;
}

namespace detail {

// column/row keep masks as weight-shaped tensors of 0/1
template <typename Real>
DiffTensor<Real> col_mask(int64_t rows, const std::vector<uint8_t>& keep) {
  DiffTensor<Real> m({rows, static_cast<int64_t>(keep.size())});
  for (int64_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < keep.size(); ++j) m.at(i, static_cast<int64_t>(j)) = keep[j] ? Real(1) : Real(0);
  return m;
}

template <typename Real>
DiffTensor<Real> row_mask(const std::vector<uint8_t>& keep, int64_t cols) {
  DiffTensor<Real> m({static_cast<int64_t>(keep.size()), cols});
  for (size_t i = 0; i < keep.size(); ++i)
    for (int64_t j = 0; j < cols; ++j) m.at(static_cast<int64_t>(i), j) = keep[i] ? Real(1) : Real(0);
  return m;
}

inline std::vector<uint8_t> flat_dim_keep(const BlockMask& m) {
  std::vector<uint8_t> keep;
  for (const auto& h : m.headdim_keep) keep.insert(keep.end(), h.begin(), h.end());
  return keep;
}

}  // namespace detail

// One gated transformer block:
//   out = gate[0] * x + gate[1] * f(x)
// where f is layernorm -> multi-head attention -> residual -> layernorm ->
// MLP -> residual. gate == nullptr runs f alone; the convex gate mixture
// replaces any extra block-level identity while f keeps its internal
// residuals. A mask (dense blocks only) zeroes pruned V columns / proj rows /
// MLP units; Q and K are never masked.
template <typename Real>
DiffTensor<Real> forward_block(Graph<Real>* g, const BlockWeights<Real>& blk, DiffTensor<Real> x,
                               int64_t batch, int64_t num_tokens, const DiffTensor<Real>* gate,
                               const BlockMask* mask) {
  const Real eps = static_cast<Real>(kLayernormEps);
  DiffTensor<Real> wv = blk.w_v, wproj = blk.w_proj, wm1 = blk.w_mlp1, wm2 = blk.w_mlp2;
  if (mask) {
    if (static_cast<int64_t>(mask->head_keep.size()) != blk.num_heads() ||
        static_cast<int64_t>(mask->mlp_hidden_keep.size()) != blk.hidden)
      throw std::invalid_argument("forward_block: mask shape inconsistent with block structure");
    auto dim_keep = detail::flat_dim_keep(*mask);
    if (static_cast<int64_t>(dim_keep.size()) != blk.v_total())
      throw std::invalid_argument("forward_block: mask head-dim width inconsistent with block structure");
    wv = mul(g, wv, detail::col_mask<Real>(wv.rows(), dim_keep));
    wproj = mul(g, wproj, detail::row_mask<Real>(dim_keep, wproj.cols()));
    wm1 = mul(g, wm1, detail::col_mask<Real>(wm1.rows(), mask->mlp_hidden_keep));
    wm2 = mul(g, wm2, detail::row_mask<Real>(mask->mlp_hidden_keep, wm2.cols()));
  }

  DiffTensor<Real> h = layernorm(g, x, blk.ln1_gamma, blk.ln1_beta, eps);
  DiffTensor<Real> q = matmul(g, h, blk.w_q);
  DiffTensor<Real> k = matmul(g, h, blk.w_k);
  DiffTensor<Real> v = matmul(g, h, wv);

  const Real inv_sqrt_dh = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(blk.qk_head_dim)));
  std::vector<DiffTensor<Real>> image_rows;
  image_rows.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    std::vector<DiffTensor<Real>> head_outs;
    int64_t v_off = 0;
    for (int64_t i = 0; i < blk.num_heads(); ++i) {
      int64_t vd = blk.v_head_dims[static_cast<size_t>(i)];
      if (vd == 0) continue;  // a fully dim-pruned head contributes nothing
      DiffTensor<Real> qb = slice_block(g, q, b * num_tokens, num_tokens, i * blk.qk_head_dim, blk.qk_head_dim);
      DiffTensor<Real> kb = slice_block(g, k, b * num_tokens, num_tokens, i * blk.qk_head_dim, blk.qk_head_dim);
      DiffTensor<Real> vb = slice_block(g, v, b * num_tokens, num_tokens, v_off, vd);
      DiffTensor<Real> scores = scale(g, matmul(g, qb, transpose(g, kb)), inv_sqrt_dh);
      DiffTensor<Real> attn = softmax_rows(g, scores);
      head_outs.push_back(matmul(g, attn, vb));
      v_off += vd;
    }
    image_rows.push_back(concat_cols(g, head_outs));
  }
  DiffTensor<Real> attn_all = concat_rows(g, image_rows);
  DiffTensor<Real> x1 = add(g, x, matmul(g, attn_all, wproj));

  DiffTensor<Real> h2 = layernorm(g, x1, blk.ln2_gamma, blk.ln2_beta, eps);
  DiffTensor<Real> m = matmul(g, gelu(g, matmul(g, h2, wm1)), wm2);
  DiffTensor<Real> fx = add(g, x1, m);

  if (!gate) return fx;
  DiffTensor<Real> g0 = slice_block(g, *gate, 0, 1, 0, 1);
  DiffTensor<Real> g1 = slice_block(g, *gate, 0, 1, 1, 1);
  return add(g, scale_by(g, x, g0), scale_by(g, fx, g1));
}

template <typename Real>
struct ForwardOptions {
  const std::vector<DiffTensor<Real>>* gates = nullptr;  // per-block 1x2 soft samples
  const std::vector<uint8_t>* skip = nullptr;            // per-block hard skip decisions
  const std::vector<BlockMask>* masks = nullptr;         // per-block masks (dense model only)
};

// Full forward pass: patch embed -> class token + position embeddings ->
// gated blocks -> final layernorm -> classifier on the class token.
// patches: (batch*num_patches) x patch_vec, from patchify().
template <typename Real>
DiffTensor<Real> vit_forward(Graph<Real>* g, const ViTWeights<Real>& w, DiffTensor<Real> patches,
                             int64_t batch, const ForwardOptions<Real>& opt = {}) {
  const ViTConfig& cfg = w.config;
  if (patches.rows() != batch * cfg.num_patches() || patches.cols() != cfg.patch_vec())
    throw std::invalid_argument("vit_forward: patch matrix " + shape_str(patches.shape()) +
                                " does not match configuration");
  size_t nblocks = w.blocks.size();
  if (opt.gates && opt.gates->size() != nblocks)
    throw std::invalid_argument("vit_forward: gate count does not match block count");
  if (opt.skip && opt.skip->size() != nblocks)
    throw std::invalid_argument("vit_forward: skip count does not match block count");
  if (opt.masks && opt.masks->size() != nblocks)
    throw std::invalid_argument("vit_forward: mask count does not match block count");

  DiffTensor<Real> emb = matmul(g, patches, w.patch_embed);
  DiffTensor<Real> x = assemble_tokens(g, emb, w.class_token, w.pos_embed, batch);
  int64_t n = cfg.num_tokens();
  for (size_t l = 0; l < nblocks; ++l) {
    if (opt.skip && (*opt.skip)[l]) continue;
    const DiffTensor<Real>* gate = opt.gates ? &(*opt.gates)[l] : nullptr;
    const BlockMask* mask = opt.masks ? &(*opt.masks)[l] : nullptr;
    x = forward_block(g, w.blocks[l], x, batch, n, gate, mask);
  }
  x = layernorm(g, x, w.final_gamma, w.final_beta, static_cast<Real>(kLayernormEps));
  std::vector<int64_t> cls_rows(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) cls_rows[static_cast<size_t>(b)] = b * n;
  DiffTensor<Real> cls = gather_rows(g, x, cls_rows);
  return matmul(g, cls, w.head);
}

namespace detail {

inline std::vector<int64_t> sorted_complement(const std::vector<int64_t>& dropped, int64_t n,
                                              const std::string& what) {
  std::vector<uint8_t> is_dropped(static_cast<size_t>(n), 0);
  for (int64_t i : dropped) {
    if (i < 0 || i >= n) throw std::invalid_argument("plan: " + what + " index " + std::to_string(i) + " out of range");
    if (is_dropped[static_cast<size_t>(i)]) throw std::invalid_argument("plan: duplicate " + what + " index");
    is_dropped[static_cast<size_t>(i)] = 1;
  }
  std::vector<int64_t> kept;
  for (int64_t i = 0; i < n; ++i)
    if (!is_dropped[static_cast<size_t>(i)]) kept.push_back(i);
  return kept;
}

template <typename Real>
DiffTensor<Real> take_cols(const DiffTensor<Real>& w, const std::vector<int64_t>& cols) {
  DiffTensor<Real> out({w.rows(), static_cast<int64_t>(cols.size())});
  for (int64_t i = 0; i < w.rows(); ++i)
    for (size_t j = 0; j < cols.size(); ++j) out.at(i, static_cast<int64_t>(j)) = w.at(i, cols[j]);
  return out;
}

template <typename Real>
DiffTensor<Real> take_rows(const DiffTensor<Real>& w, const std::vector<int64_t>& rows) {
  DiffTensor<Real> out({static_cast<int64_t>(rows.size()), w.cols()});
  for (size_t i = 0; i < rows.size(); ++i)
    for (int64_t j = 0; j < w.cols(); ++j) out.at(static_cast<int64_t>(i), j) = w.at(rows[i], j);
  return out;
}

}  // namespace detail

// Physically removes pruned structures: dropped heads lose their Q/K/V column
// groups and proj input rows; pruned within-head dims lose the matching V
// output columns and proj input rows; pruned MLP units lose the matching
// mlp1 output columns and mlp2 input rows; skipped blocks are removed
// entirely. Requires a dense-shaped model.
template <typename Real>
ViTWeights<Real> masked_copy(const ViTWeights<Real>& w, const CompressionPlan& plan) {
  if (!w.dense_shaped()) throw std::invalid_argument("masked_copy: model is not dense-shaped");
  if (plan.blocks.size() != w.blocks.size())
    throw std::invalid_argument("masked_copy: plan block count does not match model");
  const ViTConfig& cfg = w.config;
  int64_t dh = cfg.head_dim();

  ViTWeights<Real> out;
  out.config = cfg;
  out.patch_embed = w.patch_embed.clone();
  out.class_token = w.class_token.clone();
  out.pos_embed = w.pos_embed.clone();
  out.final_gamma = w.final_gamma.clone();
  out.final_beta = w.final_beta.clone();
  out.head = w.head.clone();

  for (size_t l = 0; l < plan.blocks.size(); ++l) {
    const BlockPlan& bp = plan.blocks[l];
    if (bp.skip) continue;
    const BlockWeights<Real>& src = w.blocks[l];
    if (static_cast<int64_t>(bp.dropped_dims.size()) != cfg.num_heads)
      throw std::invalid_argument("masked_copy: dropped_dims must have one entry per original head");
    std::vector<int64_t> kept_heads = detail::sorted_complement(bp.dropped_heads, cfg.num_heads, "head");
    if (kept_heads.empty())
      throw std::invalid_argument("masked_copy: plan empties every head of kept block " + std::to_string(l));

    std::vector<int64_t> qk_cols, v_cols;
    BlockWeights<Real> nb;
    nb.qk_head_dim = dh;
    for (int64_t hidx : kept_heads) {
      std::vector<int64_t> kept_dims =
          detail::sorted_complement(bp.dropped_dims[static_cast<size_t>(hidx)], dh, "head dim");
      nb.v_head_dims.push_back(static_cast<int64_t>(kept_dims.size()));
      for (int64_t j = 0; j < dh; ++j) qk_cols.push_back(hidx * dh + j);
      for (int64_t j : kept_dims) v_cols.push_back(hidx * dh + j);
    }
    std::vector<int64_t> kept_hidden =
        detail::sorted_complement(bp.dropped_hidden, cfg.hidden_dim(), "hidden unit");
    if (kept_hidden.empty())
      throw std::invalid_argument("masked_copy: plan empties the MLP of kept block " + std::to_string(l));
    nb.hidden = static_cast<int64_t>(kept_hidden.size());

    nb.w_q = detail::take_cols(src.w_q, qk_cols);
    nb.w_k = detail::take_cols(src.w_k, qk_cols);
    nb.w_v = detail::take_cols(src.w_v, v_cols);
    nb.w_proj = detail::take_rows(src.w_proj, v_cols);
    nb.w_mlp1 = detail::take_cols(src.w_mlp1, kept_hidden);
    nb.w_mlp2 = detail::take_rows(src.w_mlp2, kept_hidden);
    nb.ln1_gamma = src.ln1_gamma.clone();
    nb.ln1_beta = src.ln1_beta.clone();
    nb.ln2_gamma = src.ln2_gamma.clone();
    nb.ln2_beta = src.ln2_beta.clone();
    out.blocks.push_back(std::move(nb));
  }
  if (out.blocks.empty()) throw std::invalid_argument("masked_copy: plan skips every block");
  return out;
}

// plan realized as hard masks + skip flags on the dense model
inline std::pair<std::vector<BlockMask>, std::vector<uint8_t>> masks_from_plan(const ViTConfig& cfg,
                                                                               const CompressionPlan& plan) {
  std::vector<BlockMask> masks;
  std::vector<uint8_t> skip;
  for (const auto& bp : plan.blocks) {
    skip.push_back(bp.skip ? 1 : 0);
    BlockMask m = BlockMask::full_keep(cfg);
    if (!bp.skip) {
      for (int64_t h : bp.dropped_heads) {
        m.head_keep[static_cast<size_t>(h)] = 0;
        std::fill(m.headdim_keep[static_cast<size_t>(h)].begin(), m.headdim_keep[static_cast<size_t>(h)].end(),
                  uint8_t{0});
      }
      for (size_t h = 0; h < bp.dropped_dims.size(); ++h)
        for (int64_t j : bp.dropped_dims[h]) m.headdim_keep[h][static_cast<size_t>(j)] = 0;
      for (int64_t j : bp.dropped_hidden) m.mlp_hidden_keep[static_cast<size_t>(j)] = 0;
    }
    masks.push_back(std::move(m));
  }
  return {masks, skip};
}

}  // namespace vitc
