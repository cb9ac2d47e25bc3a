#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vitc/data.hpp"
#include "vitc/errors.hpp"
#include "vitc/ops.hpp"
#include "vitc/trace.hpp"
#include "vitc/vit.hpp"

namespace vitc {

// mean softmax cross-entropy; the task objective for classification
template <typename Real>
DiffTensor<Real> task_loss(Graph<Real>* g, DiffTensor<Real> logits, const std::vector<int64_t>& labels) {
  return cross_entropy_mean(g, logits, labels);
}

// mean over the batch of the squared l2 distance between student and teacher
// logit vectors
template <typename Real>
DiffTensor<Real> distill_loss(Graph<Real>* g, DiffTensor<Real> student, DiffTensor<Real> teacher) {
  if (student.shape() != teacher.shape())
    throw std::invalid_argument("distill_loss: shape mismatch: " + shape_str(student.shape()) + " vs " +
                                shape_str(teacher.shape()));
  return scale(g, sum_sq(g, sub(g, student, teacher)), static_cast<Real>(1.0 / student.rows()));
}

struct EvalResult {
  double accuracy = 0;
  double mean_loss = 0;
};

// Deterministic pass over the given indices with hard gates/masks applied.
template <typename Real>
EvalResult evaluate(const ViTWeights<Real>& w, const Dataset& data, const std::vector<int64_t>& indices,
                    const std::vector<uint8_t>* skip = nullptr, const std::vector<BlockMask>* masks = nullptr,
                    int64_t batch_size = 64) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty index set");
  ForwardOptions<Real> opt;
  opt.skip = skip;
  opt.masks = masks;
  int64_t correct = 0;
  double loss_sum = 0;
  for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<int64_t> chunk(indices.begin() + static_cast<int64_t>(start),
                               indices.begin() + static_cast<int64_t>(std::min(
                                                     indices.size(), start + static_cast<size_t>(batch_size))));
    Batch<Real> b = make_batch<Real>(w.config, data, chunk);
    DiffTensor<Real> logits = vit_forward<Real>(nullptr, w, b.patches, b.size, opt);
    DiffTensor<Real> l = cross_entropy_mean<Real>(nullptr, logits, b.labels);
    loss_sum += static_cast<double>(l.data()[0]) * static_cast<double>(b.size);
    for (int64_t i = 0; i < b.size; ++i) {
      int64_t arg = 0;
      for (int64_t c = 1; c < logits.cols(); ++c)
        if (logits.at(i, c) > logits.at(i, arg)) arg = c;
      if (arg == b.labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  r.mean_loss = loss_sum / static_cast<double>(indices.size());
  return r;
}

template <typename Real>
class SgdMomentum {
 public:
  explicit SgdMomentum(ViTWeights<Real>& w) {
    for (auto* p : w.parameters()) velocity_.emplace_back(p->shape());
  }

  void step(ViTWeights<Real>& w, double lr, double momentum) {
    auto params = w.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
      DiffTensor<Real>& p = *params[i];
      DiffTensor<Real>& v = velocity_[i];
      const bool has_grad = p.grad_allocated();
      for (int64_t j = 0; j < p.numel(); ++j) {
        Real gj = has_grad ? p.grad()[j] : Real(0);
        v.data()[j] = static_cast<Real>(momentum) * v.data()[j] + gj;
        p.data()[j] -= static_cast<Real>(lr) * v.data()[j];
      }
    }
  }

  std::vector<DiffTensor<Real>>& buffers() { return velocity_; }

 private:
  std::vector<DiffTensor<Real>> velocity_;
};

struct TrainOptions {
  int64_t epochs = 30;
  int64_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  bool cosine_decay = true;
  uint64_t seed = 0;
  double lambda = 0.0;  // distillation weight; needs a teacher when > 0
};

inline double cosine_lr(double base, int64_t iter, int64_t total, bool enabled) {
  if (!enabled || total <= 1) return base;
  double prog = static_cast<double>(iter) / static_cast<double>(total - 1);
  return base * (0.1 + 0.45 * (1.0 + std::cos(3.14159265358979323846 * prog)));
}

// Standard supervised training (optionally distilled against a frozen
// teacher). Keeps the best-validation weights and writes them back into w.
template <typename Real>
EvalResult train_supervised(ViTWeights<Real>& w, const Dataset& data, const TrainOptions& opt,
                            TraceWriter* trace = nullptr, const ViTWeights<Real>* teacher = nullptr) {
  if (opt.lambda > 0 && !teacher) throw std::invalid_argument("train_supervised: lambda > 0 needs a teacher");
  Rng root(opt.seed);
  Rng shuffle_rng = root.stream(7);

  SgdMomentum<Real> sgd(w);
  std::vector<int64_t> order = data.train_idx;
  int64_t iters_per_epoch =
      (static_cast<int64_t>(order.size()) + opt.batch_size - 1) / std::max<int64_t>(1, opt.batch_size);
  int64_t total_iters = std::max<int64_t>(1, opt.epochs * iters_per_epoch);

  // the incoming model seeds the best-validation tracking, so the returned
  // checkpoint never scores below it
  const bool have_val = !data.val_idx.empty();
  ViTWeights<Real> best = w.clone();
  EvalResult best_eval;
  best_eval.accuracy = -1;
  if (have_val) best_eval = evaluate(w, data, data.val_idx);
  int64_t iter = 0;
  for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opt.batch_size)) {
      std::vector<int64_t> chunk(
          order.begin() + static_cast<int64_t>(start),
          order.begin() + static_cast<int64_t>(std::min(order.size(), start + static_cast<size_t>(opt.batch_size))));
      Batch<Real> b = make_batch<Real>(w.config, data, chunk);

      Graph<Real> g;
      DiffTensor<Real> logits = vit_forward(&g, w, b.patches, b.size);
      DiffTensor<Real> loss = task_loss(&g, logits, b.labels);
      double task_v = loss.data()[0];
      double distill_v = 0;
      if (opt.lambda > 0) {
        DiffTensor<Real> tlogits = vit_forward<Real>(nullptr, *teacher, b.patches, b.size);
        DiffTensor<Real> dl = distill_loss(&g, logits, tlogits);
        distill_v = dl.data()[0];
        loss = add(&g, loss, scale(&g, dl, static_cast<Real>(opt.lambda)));
      }
      double total_v = loss.data()[0];
      if (!std::isfinite(total_v))
        throw DivergenceError("train_supervised: non-finite loss at iteration " + std::to_string(iter));

      g.zero_grads();
      g.backward(loss);
      sgd.step(w, cosine_lr(opt.lr, iter, total_iters, opt.cosine_decay), opt.momentum);

      if (trace) {
        TraceRecord rec;
        rec.kind = "iter";
        rec.iteration = iter;
        rec.epoch = epoch;
        rec.task = task_v;
        rec.distill = distill_v;
        rec.objective = total_v;
        trace->write(rec);
      }
      ++iter;
    }
    if (have_val) {
      EvalResult ev = evaluate(w, data, data.val_idx);
      if (trace) {
        TraceRecord rec;
        rec.kind = "epoch";
        rec.iteration = iter;
        rec.epoch = epoch;
        rec.val_accuracy = ev.accuracy;
        rec.val_loss = ev.mean_loss;
        trace->write(rec);
      }
      if (ev.accuracy > best_eval.accuracy) {
        best = w.clone();
        best_eval = ev;
      }
    }
  }
  if (have_val)
    w = best;
  return best_eval;
}

// dense baseline; the returned checkpoint is both the compression starting
// point and the distillation teacher
template <typename Real>
ViTWeights<Real> train_dense(const ViTConfig& cfg, const Dataset& data, const TrainOptions& opt,
                             TraceWriter* trace = nullptr) {
  Rng init_rng = Rng(opt.seed).stream(1);
  ViTWeights<Real> w = ViTWeights<Real>::random_init(cfg, init_rng);
  train_supervised(w, data, opt, trace);
  return w;
}

}  // namespace vitc
