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

#pragma once

// Layer primitives with hand-derived backward passes. Forward functions
// return fresh tensors; backward functions overwrite input gradients and
// accumulate (+=) into parameter gradients, so a parameter shared by several
// calls collects the sum.

#include <cstdint>
#include <span>

#include "alm/nn/tensor.hpp"

namespace alm::nn {

// [m, k] x [k, n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dy, Tensor<T>* da,
                     Tensor<T>* db);

// y = x w + b over the last dimension of x. w: [in, out], b: [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dw, Tensor<T>& db);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// Masks dy in place by (y > 0), y being the relu output.
template <typename T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
struct ConvCache {
  Tensor<T> input;  // [B, H, W, Cin]
};

// NHWC convolution by im2col + GEMM. x: [B, H, W, Cin], w: [k * k * Cin, Cout]
// with rows ordered (ky, kx, cin), b: [Cout]. Returns [B, Ho, Wo, Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec,
                 ConvCache<T>* cache);
template <typename T>
void conv2d_backward(const ConvCache<T>& cache, const Tensor<T>& w, const Tensor<T>& dy,
                     const ConvSpec& spec, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db);

template <typename T>
struct LayerNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

// Per-row normalisation over the last dimension, then gamma * xhat + beta.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    LayerNormCache<T>* cache, T eps = T(1e-5));
template <typename T>
void layernorm_backward(const LayerNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                        Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

// Mean over rows: [L, d] -> [1, d].
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_pool_backward(std::size_t rows, const Tensor<T>& dy);

// Row-wise max-shifted softmax.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean over rows of -log softmax(logits)[target]. When dlogits is given it
// receives (p - onehot(target)) / rows.
template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> targets, Tensor<T>* dlogits);

// Projection weights of a multi-head attention block. wq: [dq, d],
// wk/wv: [dkv, d], wo: [d, dout].
// The key bias is optional (null): it shifts every score of a query by the
// same amount, so softmax cancels it and its gradient is identically zero.
// query_attention ignores it altogether.
template <typename T>
struct AttentionWeights {
  const Tensor<T>* wq;
  const Tensor<T>* bq;
  const Tensor<T>* wk;
  const Tensor<T>* bk;
  const Tensor<T>* wv;
  const Tensor<T>* bv;
  const Tensor<T>* wo;
  const Tensor<T>* bo;
};

template <typename T>
struct AttentionGrads {
  Tensor<T>* wq;
  Tensor<T>* bq;
  Tensor<T>* wk;
  Tensor<T>* bk;
  Tensor<T>* wv;
  Tensor<T>* bv;
  Tensor<T>* wo;
  Tensor<T>* bo;
};

template <typename T>
struct AttentionCache {
  Tensor<T> xq, xkv;
  Tensor<T> q, k, v;  // projected, [L, d]
  Tensor<T> attn;     // [heads, Lq, Lk]
  Tensor<T> ctx;      // [Lq, d]
  std::size_t heads = 1;
};

// Scaled dot-product attention per head over projected queries/keys/values;
// heads are concatenated and output-projected. xq: [Lq, dq], xkv: [Lk, dkv].
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& xq, const Tensor<T>& xkv, const AttentionWeights<T>& w,
                               std::size_t heads, AttentionCache<T>* cache);
template <typename T>
void multi_head_attention_backward(const AttentionCache<T>& cache, const AttentionWeights<T>& w,
                                   const Tensor<T>& dy, Tensor<T>* dxq, Tensor<T>* dxkv,
                                   const AttentionGrads<T>& g);

template <typename T>
struct QueryAttentionCache {
  Tensor<T> query;   // [B, dq]
  Tensor<T> tokens;  // [B, T, dkv]
  Tensor<T> q;       // [B, d]
  Tensor<T> qk;      // [B, heads, dkv]: key projection folded into the query
  Tensor<T> attn;    // [B, heads, T]
  Tensor<T> pooled;  // [B, heads, dkv]: attention-weighted raw tokens
  Tensor<T> ctx;     // [B, d]
  std::size_t heads = 1;
};

// Batched attention with one query per sample over T key/value tokens, same
// weights and result as multi_head_attention with Lq = 1. Keys and values are
// never materialised: scores use (Wk_h q_h) . x_t and the value path projects
// the attention-weighted token mean. The key bias shifts all scores of a head
// equally and cancels in the softmax, so its gradient is exactly zero.
template <typename T>
Tensor<T> query_attention(const Tensor<T>& query, const Tensor<T>& tokens, const AttentionWeights<T>& w,
                          std::size_t heads, QueryAttentionCache<T>* cache);
template <typename T>
void query_attention_backward(const QueryAttentionCache<T>& cache, const AttentionWeights<T>& w,
                              const Tensor<T>& dy, Tensor<T>* dquery, Tensor<T>* dtokens,
                              const AttentionGrads<T>& g);

}  // namespace alm::nn
