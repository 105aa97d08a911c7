// Copyright 2026 The ALM Align Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "alm/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace alm::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                          shape_string(b));
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                            shape_string(t.shape()));
  }
}

template <typename T>
Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

// Row-wise softmax in place on an Eigen block.
template <typename Block>
void softmax_rows(Block&& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const auto mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  Tensor<T> y({a.dim(0), b.dim(1)});
  as_matrix(y).noalias() = as_matrix(a) * as_matrix(b);
  return y;
}

template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dy, Tensor<T>* da,
                     Tensor<T>* db) {
  if (dy.rank() != 2 || dy.dim(0) != a.dim(0) || dy.dim(1) != b.dim(1)) {
    shape_error("matmul_backward", dy.shape(), {a.dim(0), b.dim(1)});
  }
  if (da) {
    da->resize(a.shape());
    as_matrix(*da).noalias() = as_matrix(dy) * as_matrix(b).transpose();
  }
  if (db) {
    db->resize(b.shape());
    as_matrix(*db).noalias() = as_matrix(a).transpose() * as_matrix(dy);
  }
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank("linear", w, 2);
  if (x.rank() < 1 || x.cols() != w.dim(0)) shape_error("linear", x.shape(), w.shape());
  if (b.size() != w.dim(1)) shape_error("linear(bias)", b.shape(), w.shape());
  Tensor<T> y(with_last<T>(x.shape(), w.dim(1)));
  auto ym = as_matrix(y);
  ym.noalias() = as_matrix(x) * as_matrix(w);
  ym.rowwise() += as_row(b);
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dw, Tensor<T>& db) {
  if (dy.rows() != x.rows() || dy.cols() != w.dim(1)) shape_error("linear_backward", dy.shape(), x.shape());
  const auto dym = as_matrix(dy);
  as_matrix(dw).noalias() += as_matrix(x).transpose() * dym;
  as_row(db) += dym.colwise().sum();
  if (dx) {
    dx->resize(x.shape());
    as_matrix(*dx).noalias() = dym * as_matrix(w).transpose();
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy) {
  if (y.size() != dy.size()) shape_error("relu_backward", y.shape(), dy.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T{0})) dy[i] = T{0};
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Tensor<T> y = a;
  as_row(y) += as_row(b);
  return y;
}

namespace {

struct ConvGeometry {
  std::size_t batch, height, width, cin, cout, k, stride, pad, ho, wo;

  // Input pixel for output (oy, ox) and tap (ky, kx); false when it falls in the padding.
  bool tap(std::size_t oy, std::size_t ox, std::size_t ky, std::size_t kx, std::size_t& iy, std::size_t& ix) const {
    const auto y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
    const auto x = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(height) || x >= static_cast<std::ptrdiff_t>(width)) {
      return false;
    }
    iy = static_cast<std::size_t>(y);
    ix = static_cast<std::size_t>(x);
    return true;
  }
};

// Patch matrix for one image: [Ho * Wo, k * k * Cin], zeros in the padding.
template <typename T>
void im2col_image(const ConvGeometry& g, const T* x, RowMatrix<T>& cols) {
  const std::size_t patch = g.k * g.k * g.cin;
  cols.resize(static_cast<Eigen::Index>(g.ho * g.wo), static_cast<Eigen::Index>(patch));
  T* col = cols.data();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx, col += g.cin) {
          std::size_t iy, ix;
          if (g.tap(oy, ox, ky, kx, iy, ix)) {
            std::copy_n(x + (iy * g.width + ix) * g.cin, g.cin, col);
          } else {
            std::fill_n(col, g.cin, T{0});
          }
        }
      }
    }
  }
}

// Scatter-adds a patch-matrix gradient back onto one image.
template <typename T>
void col2im_image(const ConvGeometry& g, const RowMatrix<T>& dcols, T* dx) {
  const T* col = dcols.data();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx, col += g.cin) {
          std::size_t iy, ix;
          if (!g.tap(oy, ox, ky, kx, iy, ix)) continue;
          T* p = dx + (iy * g.width + ix) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) p[c] += col[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec,
                 ConvCache<T>* cache) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 2);
  const std::size_t k = spec.kernel;
  const std::size_t height = x.dim(1), width = x.dim(2), cin = x.dim(3);
  if (k == 0 || spec.stride == 0) throw ContractViolation("conv2d: kernel and stride must be positive");
  if (w.dim(0) != k * k * cin) shape_error("conv2d", x.shape(), w.shape());
  if (b.size() != w.dim(1)) shape_error("conv2d(bias)", b.shape(), w.shape());
  if (height + 2 * spec.pad < k || width + 2 * spec.pad < k) shape_error("conv2d", x.shape(), w.shape());
  const ConvGeometry g{x.dim(0), height, width, cin, w.dim(1), k, spec.stride, spec.pad,
                       spec.out_extent(height), spec.out_extent(width)};
  if (cache) cache->input = x;
  Tensor<T> y({g.batch, g.ho, g.wo, g.cout});
  const auto wm = as_matrix(w);
  const auto bias = as_row(b);
  const auto pixels = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto cout = static_cast<Eigen::Index>(g.cout);
  RowMatrix<T> cols;
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col_image(g, x.data() + n * height * width * cin, cols);
    MatrixMap<T> yn(y.data() + n * g.ho * g.wo * g.cout, pixels, cout);
    yn.noalias() = cols * wm;
    yn.rowwise() += bias;
  }
  return y;
}

template <typename T>
void conv2d_backward(const ConvCache<T>& cache, const Tensor<T>& w, const Tensor<T>& dy,
                     const ConvSpec& spec, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db) {
  const Tensor<T>& x = cache.input;
  require_rank("conv2d_backward", x, 4);
  const std::size_t k = spec.kernel;
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(1), k, spec.stride, spec.pad,
                       spec.out_extent(x.dim(1)), spec.out_extent(x.dim(2))};
  if (dy.shape() != Shape{g.batch, g.ho, g.wo, g.cout}) shape_error("conv2d_backward", dy.shape(), x.shape());
  if (dw.shape() != w.shape() || db.size() != g.cout) shape_error("conv2d_backward(grads)", dw.shape(), w.shape());
  if (dx) dx->resize(x.shape());
  const auto wm = as_matrix(w);
  auto dwm = as_matrix(dw);
  auto dbv = as_row(db);
  const auto pixels = static_cast<Eigen::Index>(g.ho * g.wo);
  const auto cout = static_cast<Eigen::Index>(g.cout);
  const std::size_t image = g.height * g.width * g.cin;
  RowMatrix<T> cols, dcols;
  for (std::size_t n = 0; n < g.batch; ++n) {
    ConstMatrixMap<T> dyn(dy.data() + n * g.ho * g.wo * g.cout, pixels, cout);
    im2col_image(g, x.data() + n * image, cols);
    dwm.noalias() += cols.transpose() * dyn;
    dbv += dyn.colwise().sum();
    if (dx) {
      dcols.noalias() = dyn * wm.transpose();
      col2im_image(g, dcols, dx->data() + n * image);
    }
  }
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    LayerNormCache<T>* cache, T eps) {
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) shape_error("layernorm", x.shape(), gamma.shape());
  const std::size_t n = x.rows();
  LayerNormCache<T> local;
  LayerNormCache<T>& c = cache ? *cache : local;
  c.xhat.resize(x.shape());
  c.inv_std.assign(n, T{0});
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    c.inv_std[r] = inv;
    T* hr = c.xhat.data() + r * d;
    T* yr = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * inv;
      yr[j] = gamma[j] * hr[j] + beta[j];
    }
  }
  return y;
}

template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                        Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  if (dy.shape() != cache.xhat.shape()) shape_error("layernorm_backward", dy.shape(), cache.xhat.shape());
  const std::size_t d = dy.cols();
  const std::size_t n = dy.rows();
  dx.resize(dy.shape());
  std::vector<T> g(d);
  for (std::size_t r = 0; r < n; ++r) {
    const T* dyr = dy.data() + r * d;
    const T* hr = cache.xhat.data() + r * d;
    T sum_g = 0;
    T sum_gh = 0;
    for (std::size_t j = 0; j < d; ++j) {
      g[j] = dyr[j] * gamma[j];
      sum_g += g[j];
      sum_gh += g[j] * hr[j];
      dgamma[j] += dyr[j] * hr[j];
      dbeta[j] += dyr[j];
    }
    const T scale = cache.inv_std[r] / static_cast<T>(d);
    T* dxr = dx.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      dxr[j] = scale * (static_cast<T>(d) * g[j] - sum_g - hr[j] * sum_gh);
    }
  }
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  require_rank("mean_pool", x, 2);
  if (x.dim(0) == 0) throw ContractViolation("mean_pool: no rows");
  Tensor<T> y({1, x.dim(1)});
  as_row(y) = as_matrix(x).colwise().sum() / static_cast<T>(x.dim(0));
  return y;
}

template <typename T>
Tensor<T> mean_pool_backward(std::size_t rows, const Tensor<T>& dy) {
  Tensor<T> dx({rows, dy.size()});
  as_matrix(dx).rowwise() = as_row(dy) / static_cast<T>(rows);
  return dx;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> p = logits;
  softmax_rows(as_matrix(p));
  return p;
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> targets, Tensor<T>* dlogits) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  if (targets.size() != n) {
    throw ContractViolation("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(n) + " rows");
  }
  Tensor<T> p = softmax(logits);
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= classes) {
      throw ContractViolation("cross_entropy: target class " + std::to_string(targets[r]) +
                              " out of range for " + std::to_string(classes) + " classes");
    }
    const std::size_t at = r * classes + targets[r];
    // log p_t computed from the shifted logits keeps the loss finite when p_t underflows.
    const T* lr = logits.data() + r * classes;
    T mx = lr[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lr[c]);
    T z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(lr[c] - mx);
    loss += -(lr[targets[r]] - mx - std::log(z));
    if (dlogits) p[at] -= T{1};
  }
  if (dlogits) {
    as_row(p) /= static_cast<T>(n);
    *dlogits = std::move(p);
  }
  return loss / static_cast<T>(n);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& xq, const Tensor<T>& xkv, const AttentionWeights<T>& w,
                               std::size_t heads, AttentionCache<T>* cache) {
  require_rank("multi_head_attention", xq, 2);
  require_rank("multi_head_attention", xkv, 2);
  const std::size_t d = w.wq->dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ContractViolation("multi_head_attention: model dim " + std::to_string(d) +
                            " not divisible by " + std::to_string(heads) + " heads");
  }
  if (w.wk->dim(1) != d || w.wv->dim(1) != d || w.wo->dim(0) != d) {
    shape_error("multi_head_attention", w.wq->shape(), w.wk->shape());
  }
  AttentionCache<T> local;
  AttentionCache<T>& c = cache ? *cache : local;
  c.heads = heads;
  c.xq = xq;
  c.xkv = xkv;
  c.q = linear(xq, *w.wq, *w.bq);
  if (w.bk) {
    c.k = linear(xkv, *w.wk, *w.bk);
  } else {
    c.k = matmul(xkv, *w.wk);
  }
  c.v = linear(xkv, *w.wv, *w.bv);
  const std::size_t lq = xq.dim(0), lk = xkv.dim(0), dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  c.attn.resize({heads, lq, lk});
  c.ctx.resize({lq, d});
  const auto q = as_matrix(c.q);
  const auto k = as_matrix(c.k);
  const auto v = as_matrix(c.v);
  auto ctx = as_matrix(c.ctx);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h * dh);
    const auto dhi = static_cast<Eigen::Index>(dh);
    MatrixMap<T> a(c.attn.data() + h * lq * lk, static_cast<Eigen::Index>(lq), static_cast<Eigen::Index>(lk));
    a.noalias() = scale * (q.middleCols(off, dhi) * k.middleCols(off, dhi).transpose());
    softmax_rows(a);
    ctx.middleCols(off, dhi).noalias() = a * v.middleCols(off, dhi);
  }
  return linear(c.ctx, *w.wo, *w.bo);
}

template <typename T>
void multi_head_attention_backward(const AttentionCache<T>& c, const AttentionWeights<T>& w,
                                   const Tensor<T>& dy, Tensor<T>* dxq, Tensor<T>* dxkv,
                                   const AttentionGrads<T>& g) {
  Tensor<T> dctx;
  linear_backward(c.ctx, *w.wo, dy, &dctx, *g.wo, *g.bo);
  const std::size_t d = c.q.cols(), heads = c.heads, dh = d / heads;
  const std::size_t lq = c.q.rows(), lk = c.k.rows();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> dq(c.q.shape()), dk(c.k.shape()), dv(c.v.shape());
  const auto q = as_matrix(c.q);
  const auto k = as_matrix(c.k);
  const auto v = as_matrix(c.v);
  const auto dctxm = as_matrix(dctx);
  RowMatrix<T> da, ds;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h * dh);
    const auto dhi = static_cast<Eigen::Index>(dh);
    ConstMatrixMap<T> a(c.attn.data() + h * lq * lk, static_cast<Eigen::Index>(lq), static_cast<Eigen::Index>(lk));
    da.noalias() = dctxm.middleCols(off, dhi) * v.middleCols(off, dhi).transpose();
    as_matrix(dv).middleCols(off, dhi).noalias() = a.transpose() * dctxm.middleCols(off, dhi);
    ds = a.cwiseProduct(da);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> row_sum = ds.rowwise().sum();
    ds -= a.cwiseProduct(row_sum.replicate(1, static_cast<Eigen::Index>(lk)));
    ds *= scale;
    as_matrix(dq).middleCols(off, dhi).noalias() = ds * k.middleCols(off, dhi);
    as_matrix(dk).middleCols(off, dhi).noalias() = ds.transpose() * q.middleCols(off, dhi);
  }
  Tensor<T> dx_from_q, dx_from_k, dx_from_v;
  linear_backward(c.xq, *w.wq, dq, dxq ? &dx_from_q : nullptr, *g.wq, *g.bq);
  if (w.bk) {
    linear_backward(c.xkv, *w.wk, dk, dxkv ? &dx_from_k : nullptr, *g.wk, *g.bk);
  } else {
    as_matrix(*g.wk).noalias() += as_matrix(c.xkv).transpose() * as_matrix(dk);
    if (dxkv) {
      dx_from_k.resize(c.xkv.shape());
      as_matrix(dx_from_k).noalias() = as_matrix(dk) * as_matrix(*w.wk).transpose();
    }
  }
  linear_backward(c.xkv, *w.wv, dv, dxkv ? &dx_from_v : nullptr, *g.wv, *g.bv);
  if (dxq) *dxq = std::move(dx_from_q);
  if (dxkv) *dxkv = add(dx_from_k, dx_from_v);
}

template <typename T>
Tensor<T> query_attention(const Tensor<T>& query, const Tensor<T>& tokens, const AttentionWeights<T>& w,
                          std::size_t heads, QueryAttentionCache<T>* cache) {
  require_rank("query_attention", query, 2);
  require_rank("query_attention", tokens, 3);
  const std::size_t batch = query.dim(0), count = tokens.dim(1), dkv = tokens.dim(2);
  const std::size_t d = w.wq->dim(1);
  if (tokens.dim(0) != batch || count == 0) shape_error("query_attention", query.shape(), tokens.shape());
  if (heads == 0 || d % heads != 0) {
    throw ContractViolation("query_attention: model dim " + std::to_string(d) + " not divisible by " +
                            std::to_string(heads) + " heads");
  }
  if (w.wk->dim(0) != dkv || w.wv->dim(0) != dkv || w.wk->dim(1) != d || w.wv->dim(1) != d) {
    shape_error("query_attention", tokens.shape(), w.wk->shape());
  }
  QueryAttentionCache<T> local;
  QueryAttentionCache<T>& c = cache ? *cache : local;
  c.heads = heads;
  c.query = query;
  c.tokens = tokens;
  c.q = linear(query, *w.wq, *w.bq);
  c.qk.resize({batch, heads, dkv});
  c.attn.resize({batch, heads, count});
  c.pooled.resize({batch, heads, dkv});
  c.ctx.resize({batch, d});
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const auto wk = as_matrix(*w.wk);
  const auto wv = as_matrix(*w.wv);
  const auto dhi = static_cast<Eigen::Index>(dh);
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMatrixMap<T> x(tokens.data() + n * count * dkv, static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dkv));
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h * dh);
      ConstVectorMap<T> qh(c.q.data() + n * d + h * dh, dhi);
      VectorMap<T> qk(c.qk.data() + (n * heads + h) * dkv, static_cast<Eigen::Index>(dkv));
      VectorMap<T> a(c.attn.data() + (n * heads + h) * count, static_cast<Eigen::Index>(count));
      VectorMap<T> pooled(c.pooled.data() + (n * heads + h) * dkv, static_cast<Eigen::Index>(dkv));
      VectorMap<T> ctx(c.ctx.data() + n * d + h * dh, dhi);
      qk.noalias() = qh * wk.middleCols(off, dhi).transpose();
      a.noalias() = scale * (qk * x.transpose());
      softmax_rows(a);
      pooled.noalias() = a * x;
      ctx.noalias() = pooled * wv.middleCols(off, dhi);
      ctx += ConstVectorMap<T>(w.bv->data() + h * dh, dhi);
    }
  }
  return linear(c.ctx, *w.wo, *w.bo);
}

template <typename T>
void query_attention_backward(const QueryAttentionCache<T>& c, const AttentionWeights<T>& w,
                              const Tensor<T>& dy, Tensor<T>* dquery, Tensor<T>* dtokens,
                              const AttentionGrads<T>& g) {
  Tensor<T> dctx;
  linear_backward(c.ctx, *w.wo, dy, &dctx, *g.wo, *g.bo);
  const std::size_t batch = c.query.dim(0), count = c.tokens.dim(1), dkv = c.tokens.dim(2);
  const std::size_t d = c.q.cols(), heads = c.heads, dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const auto wk = as_matrix(*w.wk);
  const auto wv = as_matrix(*w.wv);
  auto gwk = as_matrix(*g.wk);
  auto gwv = as_matrix(*g.wv);
  const auto dhi = static_cast<Eigen::Index>(dh);
  const auto dkvi = static_cast<Eigen::Index>(dkv);
  const auto counti = static_cast<Eigen::Index>(count);
  Tensor<T> dq({batch, d});
  if (dtokens) dtokens->resize(c.tokens.shape());
  Eigen::Matrix<T, 1, Eigen::Dynamic> dpooled(dkvi), da(counti), ds(counti), dqk(dkvi);
  for (std::size_t n = 0; n < batch; ++n) {
    ConstMatrixMap<T> x(c.tokens.data() + n * count * dkv, counti, dkvi);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h * dh);
      ConstVectorMap<T> dctx_h(dctx.data() + n * d + h * dh, dhi);
      ConstVectorMap<T> qh(c.q.data() + n * d + h * dh, dhi);
      ConstVectorMap<T> qk(c.qk.data() + (n * heads + h) * dkv, dkvi);
      ConstVectorMap<T> a(c.attn.data() + (n * heads + h) * count, counti);
      ConstVectorMap<T> pooled(c.pooled.data() + (n * heads + h) * dkv, dkvi);

      VectorMap<T>(g.bv->data() + h * dh, dhi) += dctx_h;
      gwv.middleCols(off, dhi).noalias() += pooled.transpose() * dctx_h;
      dpooled.noalias() = dctx_h * wv.middleCols(off, dhi).transpose();
      da.noalias() = dpooled * x.transpose();
      ds = a.cwiseProduct(da);
      ds -= a * ds.sum();
      ds *= scale;
      dqk.noalias() = ds * x;
      gwk.middleCols(off, dhi).noalias() += dqk.transpose() * qh;
      VectorMap<T>(dq.data() + n * d + h * dh, dhi).noalias() = dqk * wk.middleCols(off, dhi);
      if (dtokens) {
        MatrixMap<T> dx(dtokens->data() + n * count * dkv, counti, dkvi);
        dx.noalias() += a.transpose() * dpooled;
        dx.noalias() += ds.transpose() * qk;
      }
    }
  }
  linear_backward(c.query, *w.wq, dq, dquery, *g.wq, *g.bq);
}

#define ALM_INSTANTIATE_OPS(T)                                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
  template void matmul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,    \
                                Tensor<T>*);                                                         \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,    \
                                Tensor<T>&, Tensor<T>&);                                             \
  template Tensor<T> relu(const Tensor<T>&);                                                         \
  template void relu_backward(const Tensor<T>&, Tensor<T>&);                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&,   \
                            ConvCache<T>*);                                                          \
  template void conv2d_backward(const ConvCache<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                const ConvSpec&, Tensor<T>*, Tensor<T>&, Tensor<T>&);                \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                               LayerNormCache<T>*, T);                                               \
  template void layernorm_backward(const LayerNormCache<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   Tensor<T>&, Tensor<T>&, Tensor<T>&);                              \
  template Tensor<T> mean_pool(const Tensor<T>&);                                                    \
  template Tensor<T> mean_pool_backward(std::size_t, const Tensor<T>&);                              \
  template Tensor<T> softmax(const Tensor<T>&);                                                      \
  template T cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>, Tensor<T>*);             \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&,                        \
                                          const AttentionWeights<T>&, std::size_t,                   \
                                          AttentionCache<T>*);                                       \
  template void multi_head_attention_backward(const AttentionCache<T>&, const AttentionWeights<T>&,  \
                                              const Tensor<T>&, Tensor<T>*, Tensor<T>*,              \
                                              const AttentionGrads<T>&);                             \
  template Tensor<T> query_attention(const Tensor<T>&, const Tensor<T>&, const AttentionWeights<T>&, \
                                     std::size_t, QueryAttentionCache<T>*);                          \
  template void query_attention_backward(const QueryAttentionCache<T>&, const AttentionWeights<T>&,  \
                                         const Tensor<T>&, Tensor<T>*, Tensor<T>*,                   \
                                         const AttentionGrads<T>&);

ALM_INSTANTIATE_OPS(float)
ALM_INSTANTIATE_OPS(double)

#undef ALM_INSTANTIATE_OPS

}  // namespace alm::nn
