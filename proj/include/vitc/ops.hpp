#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vitc/tensor.hpp"

// Differentiable primitives. Each op computes its forward result eagerly and,
// when a Graph is supplied, records a closure that accumulates exact adjoints
// into the inputs' grad buffers. Passing g == nullptr runs the op
// value-only (used for teacher/eval passes).

namespace vitc {

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major
template <typename Real>
void mm_acc(const Real* a, const Real* b, Real* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      Real av = arow[kk];
      const Real* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += G[m x n] * B^T, where B is [k x n]. B is transposed into a
// scratch buffer so the accumulation runs in the vectorizable broadcast form.
template <typename Real>
void mm_abt_acc(const Real* g, const Real* b, Real* c, int64_t m, int64_t n, int64_t k) {
  std::vector<Real> bt(static_cast<size_t>(n * k));
  for (int64_t kk = 0; kk < k; ++kk)
    for (int64_t j = 0; j < n; ++j) bt[static_cast<size_t>(j * k + kk)] = b[kk * n + j];
  mm_acc(g, bt.data(), c, m, n, k);
}

// C[k x n] += A^T * G, where A is [m x k], G is [m x n]
template <typename Real>
void mm_atb_acc(const Real* a, const Real* g, Real* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* grow = g + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      Real av = arow[kk];
      Real* crow = c + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

template <typename Real>
DiffTensor<Real> matmul(Graph<Real>* g, DiffTensor<Real> a, DiffTensor<Real> b) {
  detail::require(a.rank() == 2 && b.rank() == 2,
                  "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  detail::require(a.cols() == b.rows(),
                  "matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  DiffTensor<Real> out({m, n});
  detail::mm_acc(a.data(), b.data(), out.data(), m, k, n);
  if (g) {
    g->track({a, b, out});
    g->record([a, b, out, m, k, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad();
      detail::mm_abt_acc(go, b.data(), a.grad(), m, n, k);
      detail::mm_atb_acc(a.data(), go, b.grad(), m, k, n);
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> transpose(Graph<Real>* g, DiffTensor<Real> x) {
  detail::require(x.rank() == 2, "transpose: expected rank-2, got " + shape_str(x.shape()));
  int64_t r = x.rows(), c = x.cols();
  DiffTensor<Real> out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  if (g) {
    g->track({x, out});
    g->record([x, out, r, c]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t j = 0; j < c; ++j)
        for (int64_t i = 0; i < r; ++i) gx[i * c + j] += go[j * r + i];
    });
  }
  return out;
}

// Row-wise softmax, stabilized by max subtraction.
template <typename Real>
DiffTensor<Real> softmax_rows(Graph<Real>* g, DiffTensor<Real> x) {
  detail::require(x.rank() >= 2, "softmax_rows: expected rank >= 2, got " + shape_str(x.shape()));
  int64_t r = x.rows(), c = x.cols();
  DiffTensor<Real> out({r, c});
  for (int64_t i = 0; i < r; ++i) {
    const Real* xi = x.data() + i * c;
    Real* yi = out.data() + i * c;
    Real mx = xi[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    Real sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (int64_t j = 0; j < c; ++j) yi[j] /= sum;
  }
  if (g) {
    g->track({x, out});
    g->record([x, out, r, c]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      const Real* y = out.data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < r; ++i) {
        Real dot = 0;
        for (int64_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
        for (int64_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
      }
    });
  }
  return out;
}

// Per-row normalization to zero mean / unit variance followed by the affine
// map gamma * xhat + beta. gamma/beta have the row width.
template <typename Real>
DiffTensor<Real> layernorm(Graph<Real>* g, DiffTensor<Real> x, DiffTensor<Real> gamma,
                           DiffTensor<Real> beta, Real eps) {
  int64_t r = x.rows(), c = x.cols();
  detail::require(gamma.numel() == c && beta.numel() == c,
                  "layernorm: gamma/beta must match last dimension: x=" + shape_str(x.shape()) +
                      " gamma=" + shape_str(gamma.shape()) + " beta=" + shape_str(beta.shape()));
  DiffTensor<Real> out({r, c});
  std::vector<Real> inv_std(static_cast<size_t>(r));
  std::vector<Real> xhat(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i) {
    const Real* xi = x.data() + i * c;
    Real mean = 0;
    for (int64_t j = 0; j < c; ++j) mean += xi[j];
    mean /= Real(c);
    Real var = 0;
    for (int64_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= Real(c);
    Real inv = Real(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int64_t j = 0; j < c; ++j) {
      Real xh = (xi[j] - mean) * inv;
      xhat[static_cast<size_t>(i * c + j)] = xh;
      out.at(i, j) = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  if (g) {
    g->track({x, gamma, beta, out});
    g->record([x, gamma, beta, out, r, c, inv_std = std::move(inv_std), xhat = std::move(xhat)]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      Real* gg = gamma.grad();
      Real* gb = beta.grad();
      for (int64_t i = 0; i < r; ++i) {
        Real hsum = 0, hxsum = 0;
        for (int64_t j = 0; j < c; ++j) {
          Real h = gamma.data()[j] * go[i * c + j];
          Real xh = xhat[static_cast<size_t>(i * c + j)];
          hsum += h;
          hxsum += h * xh;
          gg[j] += go[i * c + j] * xh;
          gb[j] += go[i * c + j];
        }
        Real inv = inv_std[static_cast<size_t>(i)];
        Real hmean = hsum / Real(c), hxmean = hxsum / Real(c);
        for (int64_t j = 0; j < c; ++j) {
          Real h = gamma.data()[j] * go[i * c + j];
          Real xh = xhat[static_cast<size_t>(i * c + j)];
          gx[i * c + j] += inv * (h - hmean - xh * hxmean);
        }
      }
    });
  }
  return out;
}

// tanh-approximation GELU with its exact derivative
template <typename Real>
DiffTensor<Real> gelu(Graph<Real>* g, DiffTensor<Real> x) {
  constexpr double kC0 = 0.79788456080286535588;  // sqrt(2/pi)
  constexpr double kC1 = 0.044715;
  DiffTensor<Real> out(x.shape());
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    double v = static_cast<double>(x.data()[i]);
    double t = std::tanh(kC0 * (v + kC1 * v * v * v));
    out.data()[i] = static_cast<Real>(0.5 * v * (1.0 + t));
  }
  if (g) {
    g->track({x, out});
    g->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) {
        double v = static_cast<double>(x.data()[i]);
        double t = std::tanh(kC0 * (v + kC1 * v * v * v));
        double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC0 * (1.0 + 3.0 * kC1 * v * v);
        gx[i] += go[i] * static_cast<Real>(d);
      }
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> add(Graph<Real>* g, DiffTensor<Real> a, DiffTensor<Real> b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  DiffTensor<Real> out(a.shape());
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (g) {
    g->track({a, b, out});
    g->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* ga = a.grad();
      Real* gb = b.grad();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> sub(Graph<Real>* g, DiffTensor<Real> a, DiffTensor<Real> b) {
  detail::require(a.shape() == b.shape(),
                  "sub: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  DiffTensor<Real> out(a.shape());
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (g) {
    g->track({a, b, out});
    g->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* ga = a.grad();
      Real* gb = b.grad();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += go[i];
        gb[i] -= go[i];
      }
    });
  }
  return out;
}

// elementwise product (same shape)
template <typename Real>
DiffTensor<Real> mul(Graph<Real>* g, DiffTensor<Real> a, DiffTensor<Real> b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  DiffTensor<Real> out(a.shape());
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (g) {
    g->track({a, b, out});
    g->record([a, b, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* ga = a.grad();
      Real* gb = b.grad();
      for (int64_t i = 0; i < n; ++i) {
        ga[i] += go[i] * b.data()[i];
        gb[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> scale(Graph<Real>* g, DiffTensor<Real> x, Real c) {
  DiffTensor<Real> out(x.shape());
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  if (g) {
    g->track({x, out});
    g->record([x, out, c, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * c;
    });
  }
  return out;
}

// out = s[0] * x, differentiable in both x and the scalar tensor s
template <typename Real>
DiffTensor<Real> scale_by(Graph<Real>* g, DiffTensor<Real> x, DiffTensor<Real> s) {
  detail::require(s.numel() == 1, "scale_by: scale must be a scalar tensor, got " + shape_str(s.shape()));
  Real sv = s.data()[0];
  DiffTensor<Real> out(x.shape());
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * sv;
  if (g) {
    g->track({x, s, out});
    g->record([x, s, out, sv, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      Real acc = 0;
      for (int64_t i = 0; i < n; ++i) {
        gx[i] += go[i] * sv;
        acc += go[i] * x.data()[i];
      }
      s.grad()[0] += acc;
    });
  }
  return out;
}

// gathers the given column index set (duplicates allowed)
template <typename Real>
DiffTensor<Real> slice_columns(Graph<Real>* g, DiffTensor<Real> x, std::vector<int64_t> idx) {
  detail::require(x.rank() == 2, "slice_columns: expected rank-2, got " + shape_str(x.shape()));
  int64_t r = x.rows(), c = x.cols();
  for (int64_t j : idx)
    if (j < 0 || j >= c)
      throw std::out_of_range("slice_columns: column index " + std::to_string(j) + " out of range for " +
                              shape_str(x.shape()));
  int64_t nc = static_cast<int64_t>(idx.size());
  DiffTensor<Real> out({r, nc});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < nc; ++j) out.at(i, j) = x.at(i, idx[static_cast<size_t>(j)]);
  if (g) {
    g->track({x, out});
    g->record([x, out, idx = std::move(idx), r, c, nc]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < nc; ++j) gx[i * c + idx[static_cast<size_t>(j)]] += go[i * nc + j];
    });
  }
  return out;
}

// contiguous submatrix [r0, r0+nr) x [c0, c0+nc)
template <typename Real>
DiffTensor<Real> slice_block(Graph<Real>* g, DiffTensor<Real> x, int64_t r0, int64_t nr, int64_t c0,
                             int64_t nc) {
  detail::require(x.rank() == 2, "slice_block: expected rank-2, got " + shape_str(x.shape()));
  int64_t r = x.rows(), c = x.cols();
  if (r0 < 0 || c0 < 0 || nr < 0 || nc < 0 || r0 + nr > r || c0 + nc > c)
    throw std::out_of_range("slice_block: block [" + std::to_string(r0) + "+" + std::to_string(nr) + ", " +
                            std::to_string(c0) + "+" + std::to_string(nc) + ") out of range for " +
                            shape_str(x.shape()));
  DiffTensor<Real> out({nr, nc});
  for (int64_t i = 0; i < nr; ++i)
    for (int64_t j = 0; j < nc; ++j) out.at(i, j) = x.at(r0 + i, c0 + j);
  if (g) {
    g->track({x, out});
    g->record([x, out, r0, nr, c0, nc, c]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < nr; ++i)
        for (int64_t j = 0; j < nc; ++j) gx[(r0 + i) * c + (c0 + j)] += go[i * nc + j];
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> gather_rows(Graph<Real>* g, DiffTensor<Real> x, std::vector<int64_t> idx) {
  detail::require(x.rank() == 2, "gather_rows: expected rank-2, got " + shape_str(x.shape()));
  int64_t r = x.rows(), c = x.cols();
  for (int64_t i : idx)
    if (i < 0 || i >= r)
      throw std::out_of_range("gather_rows: row index " + std::to_string(i) + " out of range for " +
                              shape_str(x.shape()));
  int64_t nr = static_cast<int64_t>(idx.size());
  DiffTensor<Real> out({nr, c});
  for (int64_t i = 0; i < nr; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.at(idx[static_cast<size_t>(i)], j);
  if (g) {
    g->track({x, out});
    g->record([x, out, idx = std::move(idx), nr, c]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < nr; ++i)
        for (int64_t j = 0; j < c; ++j) gx[idx[static_cast<size_t>(i)] * c + j] += go[i * c + j];
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> concat_cols(Graph<Real>* g, std::vector<DiffTensor<Real>> parts) {
  detail::require(!parts.empty(), "concat_cols: no parts");
  int64_t r = parts[0].rows(), total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "concat_cols: row mismatch: " + shape_str(p.shape()));
    total += p.cols();
  }
  DiffTensor<Real> out({r, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  if (g) {
    g->track(parts);
    g->track({out});
    g->record([parts, out, r, total]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      int64_t off = 0;
      for (auto& p : parts) {
        int64_t pc = p.cols();
        Real* gp = p.grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < pc; ++j) gp[i * pc + j] += go[i * total + off + j];
        off += pc;
      }
    });
  }
  return out;
}

template <typename Real>
DiffTensor<Real> concat_rows(Graph<Real>* g, std::vector<DiffTensor<Real>> parts) {
  detail::require(!parts.empty(), "concat_rows: no parts");
  int64_t c = parts[0].cols(), total = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "concat_rows: column mismatch: " + shape_str(p.shape()));
    total += p.rows();
  }
  DiffTensor<Real> out({total, c});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off * c);
    off += p.rows();
  }
  if (g) {
    g->track(parts);
    g->track({out});
    g->record([parts, out, c]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      int64_t off = 0;
      for (auto& p : parts) {
        int64_t n = p.numel();
        Real* gp = p.grad();
        for (int64_t i = 0; i < n; ++i) gp[i] += go[off * c + i];
        off += p.rows();
      }
    });
  }
  return out;
}

// Builds the token matrix for a batch: for each image, one class-token row
// followed by its patch rows, with position embeddings added.
//   emb: (batch*num_patches) x D, cls: D, pos: (num_patches+1) x D
//   out: (batch*(num_patches+1)) x D
template <typename Real>
DiffTensor<Real> assemble_tokens(Graph<Real>* g, DiffTensor<Real> emb, DiffTensor<Real> cls,
                                 DiffTensor<Real> pos, int64_t batch) {
  int64_t d = emb.cols();
  detail::require(batch > 0 && emb.rows() % batch == 0, "assemble_tokens: rows not divisible by batch");
  int64_t p = emb.rows() / batch;
  int64_t n = p + 1;
  detail::require(cls.numel() == d, "assemble_tokens: class token size mismatch: " + shape_str(cls.shape()));
  detail::require(pos.rows() == n && pos.cols() == d,
                  "assemble_tokens: position table mismatch: " + shape_str(pos.shape()));
  DiffTensor<Real> out({batch * n, d});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < d; ++j) out.at(b * n, j) = cls.data()[j] + pos.at(0, j);
    for (int64_t q = 0; q < p; ++q)
      for (int64_t j = 0; j < d; ++j) out.at(b * n + 1 + q, j) = emb.at(b * p + q, j) + pos.at(1 + q, j);
  }
  if (g) {
    g->track({emb, cls, pos, out});
    g->record([emb, cls, pos, out, batch, p, n, d]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* ge = emb.grad();
      Real* gc = cls.grad();
      Real* gp = pos.grad();
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t j = 0; j < d; ++j) {
          gc[j] += go[(b * n) * d + j];
          gp[j] += go[(b * n) * d + j];
        }
        for (int64_t q = 0; q < p; ++q)
          for (int64_t j = 0; j < d; ++j) {
            Real gv = go[(b * n + 1 + q) * d + j];
            ge[(b * p + q) * d + j] += gv;
            gp[(1 + q) * d + j] += gv;
          }
      }
    });
  }
  return out;
}

// scalar sum of squares
template <typename Real>
DiffTensor<Real> sum_sq(Graph<Real>* g, DiffTensor<Real> x) {
  DiffTensor<Real> out({1});
  Real acc = 0;
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += x.data()[i] * x.data()[i];
  out.data()[0] = acc;
  if (g) {
    g->track({x, out});
    g->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      Real go = out.grad_values()[0];
      Real* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += Real(2) * go * x.data()[i];
    });
  }
  return out;
}

// mean softmax cross-entropy over rows; labels are class indices
template <typename Real>
DiffTensor<Real> cross_entropy_mean(Graph<Real>* g, DiffTensor<Real> logits,
                                    const std::vector<int64_t>& labels) {
  detail::require(logits.rank() == 2, "cross_entropy_mean: expected rank-2 logits");
  int64_t b = logits.rows(), c = logits.cols();
  detail::require(static_cast<int64_t>(labels.size()) == b, "cross_entropy_mean: batch/label count mismatch");
  for (int64_t y : labels)
    if (y < 0 || y >= c)
      throw std::out_of_range("cross_entropy_mean: label " + std::to_string(y) + " out of range for " +
                              std::to_string(c) + " classes");
  DiffTensor<Real> probs({b, c});
  double loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    const Real* zi = logits.data() + i * c;
    Real mx = zi[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, zi[j]);
    double sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(static_cast<double>(zi[j] - mx));
      probs.at(i, j) = static_cast<Real>(e);
      sum += e;
    }
    for (int64_t j = 0; j < c; ++j) probs.at(i, j) = static_cast<Real>(probs.at(i, j) / sum);
    loss += std::log(sum) - static_cast<double>(zi[labels[static_cast<size_t>(i)]] - mx);
  }
  DiffTensor<Real> out({1});
  out.data()[0] = static_cast<Real>(loss / static_cast<double>(b));
  if (g) {
    g->track({logits, out});
    g->record([logits, probs, out, labels, b, c]() mutable {
      if (!out.grad_allocated()) return;
      Real go = out.grad_values()[0];
      Real* gz = logits.grad();
      Real inv_b = Real(1) / Real(b);
      for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < c; ++j) {
          Real p = probs.at(i, j);
          if (j == labels[static_cast<size_t>(i)]) p -= Real(1);
          gz[i * c + j] += go * p * inv_b;
        }
      }
    });
  }
  return out;
}

// Elementwise ceiling with a straight-through backward: forward applies
// ceil(x); the adjoint passes through unchanged (d ceil(x)/dx treated as 1).
template <typename Real>
DiffTensor<Real> ste_ceil(Graph<Real>* g, DiffTensor<Real> x) {
  DiffTensor<Real> out(x.shape());
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::ceil(x.data()[i]);
  if (g) {
    g->track({x, out});
    g->record([x, out, n]() mutable {
      if (!out.grad_allocated()) return;
      const Real* go = out.grad_values().data();
      Real* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

}  // namespace vitc
