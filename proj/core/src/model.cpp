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

#include "alm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "alm/nn/checkpoint.hpp"
#include "alm/nn/ops.hpp"
#include "alm/parallel.hpp"
#include "alm/rng.hpp"

namespace alm::model {

using nn::ConvSpec;
using nn::Init;
using nn::Shape;
using nn::Tensor;

// ---------------------------------------------------------------------------
// Configuration

namespace {

constexpr ConvSpec kDown{3, 2, 1};
constexpr ConvSpec kSame{3, 1, 1};
constexpr ConvSpec kSkip{1, 2, 0};

}  // namespace

void AlmConfig::validate() const {
  const auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (image_size < 1) fail("image_size", "must be positive");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) fail("channels", "entry " + std::to_string(i) + " must be positive");
  }
  if (token_dim < 1 || ff_dim < 1 || pool_hidden < 1 || sentence_dim < 1 || head_hidden < 1) {
    fail("token_dim/ff_dim/pool_hidden/sentence_dim/head_hidden", "widths must be positive");
  }
  if (sa_heads < 1 || token_dim % sa_heads != 0) {
    fail("sa_heads", "token_dim " + std::to_string(token_dim) + " is not divisible by " + std::to_string(sa_heads));
  }
  if (cma_heads < 1 || sentence_dim % cma_heads != 0) {
    fail("cma_heads",
         "sentence_dim " + std::to_string(sentence_dim) + " is not divisible by " + std::to_string(cma_heads));
  }
  if (max_tokens < static_cast<std::size_t>(lang::kMaxTokens)) {
    fail("max_tokens", "must cover the longest instruction (" + std::to_string(lang::kMaxTokens) + " tokens)");
  }
  if (!std::isfinite(token_init)) fail("token_init", "must be finite");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) fail("eps", "must be positive");
  if (batch_size < 1) fail("batch_size", "must be positive");
  if (eval_every < 1) fail("eval_every", "must be positive");
  if (holdout_episodes < static_cast<std::size_t>(lang::kInstructionCount)) {
    fail("holdout_episodes", "must be at least " + std::to_string(lang::kInstructionCount));
  }
}

AlmConfig AlmConfig::miniature() {
  AlmConfig c;
  c.image_size = 8;
  c.channels = {2, 3, 4, 4};
  c.token_dim = 8;
  c.ff_dim = 6;
  c.sa_heads = 2;
  c.pool_hidden = 6;
  c.sentence_dim = 8;
  c.cma_heads = 2;
  c.head_hidden = 6;
  c.batch_size = 4;
  return c;
}

std::string config_to_json(const AlmConfig& c) {
  nlohmann::json j = {
      {"image_size", c.image_size}, {"channels", c.channels},
      {"token_dim", c.token_dim},   {"ff_dim", c.ff_dim},
      {"sa_heads", c.sa_heads},     {"pool_hidden", c.pool_hidden},
      {"sentence_dim", c.sentence_dim}, {"cma_heads", c.cma_heads},
      {"head_hidden", c.head_hidden}, {"max_tokens", c.max_tokens},
      {"token_init", c.token_init}, {"lr", c.lr},
      {"beta1", c.beta1},           {"beta2", c.beta2},
      {"eps", c.eps},               {"batch_size", c.batch_size},
      {"n_updates", c.n_updates},   {"seed", c.seed},
      {"eval_every", c.eval_every}, {"holdout_episodes", c.holdout_episodes},
  };
  return j.dump();
}

namespace {

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_unsigned_v<V>) {
      if (!it->is_number_unsigned()) throw ConfigError(std::string("config field '") + key + "': expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError(std::string("config field '") + key + "': expected a number");
    }
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

AlmConfig config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("model config is not a JSON object");
  static const std::vector<std::string> known = {
      "image_size", "channels", "token_dim", "ff_dim", "sa_heads", "pool_hidden", "sentence_dim",
      "cma_heads", "head_hidden", "max_tokens", "token_init", "lr", "beta1", "beta2", "eps",
      "batch_size", "n_updates", "seed", "eval_every", "holdout_episodes"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  AlmConfig c;
  read_field(j, "image_size", c.image_size);
  if (const auto it = j.find("channels"); it != j.end()) {
    if (!it->is_array() || it->size() != c.channels.size()) {
      throw ConfigError("config field 'channels': expected an array of 4 channel counts");
    }
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
      if (!(*it)[i].is_number_unsigned()) throw ConfigError("config field 'channels': entries must be integers");
      c.channels[i] = (*it)[i].get<std::size_t>();
    }
  }
  read_field(j, "token_dim", c.token_dim);
  read_field(j, "ff_dim", c.ff_dim);
  read_field(j, "sa_heads", c.sa_heads);
  read_field(j, "pool_hidden", c.pool_hidden);
  read_field(j, "sentence_dim", c.sentence_dim);
  read_field(j, "cma_heads", c.cma_heads);
  read_field(j, "head_hidden", c.head_hidden);
  read_field(j, "max_tokens", c.max_tokens);
  read_field(j, "token_init", c.token_init);
  read_field(j, "lr", c.lr);
  read_field(j, "beta1", c.beta1);
  read_field(j, "beta2", c.beta2);
  read_field(j, "eps", c.eps);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "n_updates", c.n_updates);
  read_field(j, "seed", c.seed);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "holdout_episodes", c.holdout_episodes);
  c.validate();
  return c;
}

namespace {

struct Extents {
  std::size_t s1, s2, s3, s4;
};

Extents extents(const AlmConfig& c) {
  Extents e{};
  e.s1 = kDown.out_extent(c.image_size);
  e.s2 = kDown.out_extent(e.s1);
  e.s3 = kDown.out_extent(e.s2);
  e.s4 = kDown.out_extent(e.s3);
  return e;
}

}  // namespace

std::size_t visual_token_count(const AlmConfig& config) {
  const auto e = extents(config);
  return e.s3 * e.s3 + e.s4 * e.s4;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace layout {

using Id = std::size_t;

struct DenseIds {
  Id w, b;
};
struct NormIds {
  Id gamma, beta;
};
struct AttnIds {
  Id wq, bq, wk, wv, bv, wo, bo;
};

template <typename T>
DenseIds add_dense(nn::ParamSet<T>& p, const std::string& name, std::size_t in, std::size_t out,
                   std::size_t fan_in = 0, std::size_t fan_out = 0) {
  const Id w = p.add(name + ".w", {in, out}, Init::Xavier, fan_in ? fan_in : in, fan_out ? fan_out : out);
  const Id b = p.add(name + ".b", {out}, Init::Zeros);
  return {w, b};
}

template <typename T>
DenseIds add_conv(nn::ParamSet<T>& p, const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
  return add_dense(p, name, k * k * cin, cout, k * k * cin, k * k * cout);
}

template <typename T>
NormIds add_norm(nn::ParamSet<T>& p, const std::string& name, std::size_t d) {
  return {p.add(name + ".gamma", {d}, Init::Ones), p.add(name + ".beta", {d}, Init::Zeros)};
}

template <typename T>
AttnIds add_attention(nn::ParamSet<T>& p, const std::string& name, std::size_t dq, std::size_t dkv,
                      std::size_t d) {
  const auto q = add_dense(p, name + ".q", dq, d);
  // No key bias: softmax cancels it.
  const Id k = p.add(name + ".k.w", {dkv, d}, Init::Xavier, dkv, d);
  const auto v = add_dense(p, name + ".v", dkv, d);
  const auto o = add_dense(p, name + ".o", d, d);
  return {q.w, q.b, k, v.w, v.b, o.w, o.b};
}

}  // namespace layout

using namespace layout;

template <typename T>
struct AlmNet<T>::Ids {
  Id tok, pos;
  AttnIds sa;
  NormIds ln1, ln2;
  DenseIds ff1, ff2, pool1, pool2;
  DenseIds b1_conv1, b1_conv2, b1_skip, b2_conv1, b2_conv2, b2_skip, conv3, conv4, proj3, proj4;
  AttnIds cma;
  DenseIds fc1, fc2, out;
  std::vector<lang::TokenSeq> sentences;
};

template <typename T>
AlmNet<T>::AlmNet(AlmConfig config) : config_(config) {
  config_.validate();
  auto ids = std::make_shared<Ids>();
  auto& p = params_;
  const auto& c = config_;
  const std::size_t dt = c.token_dim, ds = c.sentence_dim;
  ids->tok = p.add("lang.token", {static_cast<std::size_t>(lang::kVocabularySize), dt}, Init::Constant, 0, 0,
                   static_cast<T>(c.token_init));
  ids->pos = p.add("lang.position", {c.max_tokens, dt}, Init::Xavier, c.max_tokens, dt);
  ids->sa = add_attention(p, "lang.attn", dt, dt, dt);
  ids->ln1 = add_norm(p, "lang.norm1", dt);
  ids->ff1 = add_dense(p, "lang.ff1", dt, c.ff_dim);
  ids->ff2 = add_dense(p, "lang.ff2", c.ff_dim, dt);
  ids->ln2 = add_norm(p, "lang.norm2", dt);
  ids->pool1 = add_dense(p, "lang.pool1", dt, c.pool_hidden);
  ids->pool2 = add_dense(p, "lang.pool2", c.pool_hidden, ds);

  const auto& ch = c.channels;
  const std::size_t rgb = env::kImageChannels;
  ids->b1_conv1 = add_conv(p, "vis.block1.conv1", 3, rgb, ch[0]);
  ids->b1_conv2 = add_conv(p, "vis.block1.conv2", 3, ch[0], ch[0]);
  ids->b1_skip = add_conv(p, "vis.block1.skip", 1, rgb, ch[0]);
  ids->b2_conv1 = add_conv(p, "vis.block2.conv1", 3, ch[0], ch[1]);
  ids->b2_conv2 = add_conv(p, "vis.block2.conv2", 3, ch[1], ch[1]);
  ids->b2_skip = add_conv(p, "vis.block2.skip", 1, ch[0], ch[1]);
  ids->conv3 = add_conv(p, "vis.conv3", 3, ch[1], ch[2]);
  ids->conv4 = add_conv(p, "vis.conv4", 3, ch[2], ch[3]);
  ids->proj3 = add_dense(p, "vis.proj3", ch[2], ds);
  ids->proj4 = add_dense(p, "vis.proj4", ch[3], ds);

  ids->cma = add_attention(p, "fuse.attn", ds, ds, ds);
  ids->fc1 = add_dense(p, "head.fc1", ds, c.head_hidden);
  ids->fc2 = add_dense(p, "head.fc2", c.head_hidden, ds);
  ids->out = add_dense(p, "head.out", ds, static_cast<std::size_t>(env::kActionCount));

  for (const auto& ins : lang::instructions()) ids->sentences.push_back(lang::tokenize(ins.text));
  ids_ = std::move(ids);
}

template <typename T>
void AlmNet<T>::initialize(std::uint64_t seed) {
  params_.initialize(seed);
}

// ---------------------------------------------------------------------------
// Forward and backward passes

namespace {

template <typename T>
nn::AttentionWeights<T> weights_of(const nn::ParamSet<T>& p, const AttnIds& a) {
  return {&p.value(a.wq), &p.value(a.bq), &p.value(a.wk), nullptr,
          &p.value(a.wv), &p.value(a.bv), &p.value(a.wo), &p.value(a.bo)};
}

template <typename T>
nn::AttentionGrads<T> grads_of(nn::ParamSet<T>& p, const AttnIds& a) {
  return {&p.grad(a.wq), &p.grad(a.bq), &p.grad(a.wk), nullptr,
          &p.grad(a.wv), &p.grad(a.bv), &p.grad(a.wo), &p.grad(a.bo)};
}

template <typename T>
Tensor<T> dense(const nn::ParamSet<T>& p, const DenseIds& d, const Tensor<T>& x) {
  return nn::linear(x, p.value(d.w), p.value(d.b));
}

template <typename T>
void dense_backward(nn::ParamSet<T>& p, const DenseIds& d, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
  nn::linear_backward(x, p.value(d.w), dy, dx, p.grad(d.w), p.grad(d.b));
}

template <typename T>
Tensor<T> conv(const nn::ParamSet<T>& p, const DenseIds& d, const Tensor<T>& x, const ConvSpec& spec,
               nn::ConvCache<T>* cache) {
  return nn::conv2d(x, p.value(d.w), p.value(d.b), spec, cache);
}

template <typename T>
void conv_backward(nn::ParamSet<T>& p, const DenseIds& d, const nn::ConvCache<T>& cache, const Tensor<T>& dy,
                   const ConvSpec& spec, Tensor<T>* dx) {
  nn::conv2d_backward(cache, p.value(d.w), dy, spec, dx, p.grad(d.w), p.grad(d.b));
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  nn::as_row(acc) += nn::as_row(x);
}

}  // namespace

namespace trace {

template <typename T>
struct LangTrace {
  const lang::TokenSeq* tokens = nullptr;
  Tensor<T> x0;
  nn::AttentionCache<T> attn;
  nn::LayerNormCache<T> ln1, ln2;
  Tensor<T> y1, f1, y2, pooled, hidden, out;
};

template <typename T>
struct VisTrace {
  nn::ConvCache<T> b1c1, b1c2, b1s, b2c1, b2c2, b2s, c3, c4;
  Tensor<T> r1, h1, r2, h2, h3, h4;
  Tensor<T> flat3, flat4;
  Tensor<T> tokens;
};

template <typename T>
struct HeadTrace {
  Tensor<T> z, m1, zp;
};

}  // namespace trace

using namespace trace;

template <typename T>
struct NetImpl {
  using Ids = typename AlmNet<T>::Ids;

  static void lang_forward(const AlmConfig& c, const nn::ParamSet<T>& p, const Ids& ids,
                           const lang::TokenSeq& tokens, LangTrace<T>& tr) {
    const std::size_t len = tokens.size(), dt = c.token_dim;
    if (len == 0) throw ContractViolation("f_lang: empty token sequence");
    if (len > c.max_tokens) {
      throw ContractViolation("f_lang: sequence of " + std::to_string(len) + " tokens exceeds max_tokens " +
                              std::to_string(c.max_tokens));
    }
    tr.tokens = &tokens;
    tr.x0.resize({len, dt});
    const auto& tok = p.value(ids.tok);
    const auto& pos = p.value(ids.pos);
    for (std::size_t i = 0; i < len; ++i) {
      if (tokens[i] >= lang::kVocabularySize) {
        throw ContractViolation("f_lang: token id " + std::to_string(tokens[i]) + " outside the vocabulary");
      }
      for (std::size_t j = 0; j < dt; ++j) tr.x0[i * dt + j] = tok[tokens[i] * dt + j] + pos[i * dt + j];
    }
    Tensor<T> a = nn::multi_head_attention(tr.x0, tr.x0, weights_of(p, ids.sa), c.sa_heads, &tr.attn);
    add_into(a, tr.x0);
    tr.y1 = nn::layernorm(a, p.value(ids.ln1.gamma), p.value(ids.ln1.beta), &tr.ln1);
    tr.f1 = nn::relu(dense(p, ids.ff1, tr.y1));
    Tensor<T> f2 = dense(p, ids.ff2, tr.f1);
    add_into(f2, tr.y1);
    tr.y2 = nn::layernorm(f2, p.value(ids.ln2.gamma), p.value(ids.ln2.beta), &tr.ln2);
    tr.pooled = nn::mean_pool(tr.y2);
    tr.hidden = nn::relu(dense(p, ids.pool1, tr.pooled));
    tr.out = dense(p, ids.pool2, tr.hidden);
  }

  static void lang_backward(const AlmConfig& c, nn::ParamSet<T>& p, const Ids& ids, const LangTrace<T>& tr,
                            const Tensor<T>& dout) {
    Tensor<T> dhidden, dpooled, dff1, dy1, dx_ff, da, dxq, dxkv;
    dense_backward(p, ids.pool2, tr.hidden, dout, &dhidden);
    nn::relu_backward(tr.hidden, dhidden);
    dense_backward(p, ids.pool1, tr.pooled, dhidden, &dpooled);
    const Tensor<T> dy2 = nn::mean_pool_backward(tr.y2.dim(0), dpooled);
    Tensor<T> dsum2;
    nn::layernorm_backward(tr.ln2, p.value(ids.ln2.gamma), dy2, dsum2, p.grad(ids.ln2.gamma), p.grad(ids.ln2.beta));
    dense_backward(p, ids.ff2, tr.f1, dsum2, &dff1);
    nn::relu_backward(tr.f1, dff1);
    dense_backward(p, ids.ff1, tr.y1, dff1, &dx_ff);
    dy1 = dsum2;
    add_into(dy1, dx_ff);
    Tensor<T> dsum1;
    nn::layernorm_backward(tr.ln1, p.value(ids.ln1.gamma), dy1, dsum1, p.grad(ids.ln1.gamma), p.grad(ids.ln1.beta));
    nn::multi_head_attention_backward(tr.attn, weights_of(p, ids.sa), dsum1, &dxq, &dxkv, grads_of(p, ids.sa));
    Tensor<T> dx0 = dsum1;
    add_into(dx0, dxq);
    add_into(dx0, dxkv);
    auto& gtok = p.grad(ids.tok);
    auto& gpos = p.grad(ids.pos);
    const std::size_t dt = c.token_dim;
    const auto& tokens = *tr.tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      for (std::size_t j = 0; j < dt; ++j) {
        gtok[tokens[i] * dt + j] += dx0[i * dt + j];
        gpos[i * dt + j] += dx0[i * dt + j];
      }
    }
  }

  static void check_images(const AlmConfig& c, const Tensor<T>& images) {
    const Shape want{images.rank() > 0 ? images.dim(0) : 0, c.image_size, c.image_size,
                     static_cast<std::size_t>(env::kImageChannels)};
    if (images.rank() != 4 || images.shape() != want || images.dim(0) == 0) {
      throw ContractViolation("f_vis: expected images " + nn::shape_string(want) + ", got " +
                              nn::shape_string(images.shape()));
    }
  }

  static void vis_forward(const AlmConfig& c, const nn::ParamSet<T>& p, const Ids& ids, const Tensor<T>& x,
                          VisTrace<T>& tr) {
    check_images(c, x);
    const std::size_t batch = x.dim(0), ds = c.sentence_dim;
    tr.r1 = nn::relu(conv(p, ids.b1_conv1, x, kDown, &tr.b1c1));
    tr.h1 = conv(p, ids.b1_conv2, tr.r1, kSame, &tr.b1c2);
    add_into(tr.h1, conv(p, ids.b1_skip, x, kSkip, &tr.b1s));
    tr.h1 = nn::relu(tr.h1);
    tr.r2 = nn::relu(conv(p, ids.b2_conv1, tr.h1, kDown, &tr.b2c1));
    tr.h2 = conv(p, ids.b2_conv2, tr.r2, kSame, &tr.b2c2);
    add_into(tr.h2, conv(p, ids.b2_skip, tr.h1, kSkip, &tr.b2s));
    tr.h2 = nn::relu(tr.h2);
    tr.h3 = nn::relu(conv(p, ids.conv3, tr.h2, kDown, &tr.c3));
    tr.h4 = nn::relu(conv(p, ids.conv4, tr.h3, kDown, &tr.c4));

    const std::size_t n3 = tr.h3.dim(1) * tr.h3.dim(2), n4 = tr.h4.dim(1) * tr.h4.dim(2);
    tr.flat3 = tr.h3;
    tr.flat3.reshape({batch * n3, tr.h3.dim(3)});
    tr.flat4 = tr.h4;
    tr.flat4.reshape({batch * n4, tr.h4.dim(3)});
    const Tensor<T> t3 = dense(p, ids.proj3, tr.flat3);
    const Tensor<T> t4 = dense(p, ids.proj4, tr.flat4);
    const std::size_t count = n3 + n4;
    tr.tokens.resize({batch, count, ds});
    for (std::size_t n = 0; n < batch; ++n) {
      T* dst = tr.tokens.data() + n * count * ds;
      std::copy_n(t3.data() + n * n3 * ds, n3 * ds, dst);
      std::copy_n(t4.data() + n * n4 * ds, n4 * ds, dst + n3 * ds);
    }
  }

  static void vis_backward(const AlmConfig& c, nn::ParamSet<T>& p, const Ids& ids, const VisTrace<T>& tr,
                           const Tensor<T>& dtokens) {
    const std::size_t batch = tr.h3.dim(0), ds = c.sentence_dim;
    const std::size_t n3 = tr.h3.dim(1) * tr.h3.dim(2), n4 = tr.h4.dim(1) * tr.h4.dim(2), count = n3 + n4;
    Tensor<T> dt3({batch * n3, ds}), dt4({batch * n4, ds});
    for (std::size_t n = 0; n < batch; ++n) {
      const T* src = dtokens.data() + n * count * ds;
      std::copy_n(src, n3 * ds, dt3.data() + n * n3 * ds);
      std::copy_n(src + n3 * ds, n4 * ds, dt4.data() + n * n4 * ds);
    }
    Tensor<T> dh3, dh4, dh3_conv, dh2, dr2, dh1, dh1_skip, dr1;
    dense_backward(p, ids.proj3, tr.flat3, dt3, &dh3);
    dense_backward(p, ids.proj4, tr.flat4, dt4, &dh4);
    dh3.reshape(tr.h3.shape());
    dh4.reshape(tr.h4.shape());

    nn::relu_backward(tr.h4, dh4);
    conv_backward(p, ids.conv4, tr.c4, dh4, kDown, &dh3_conv);
    add_into(dh3, dh3_conv);
    nn::relu_backward(tr.h3, dh3);
    conv_backward(p, ids.conv3, tr.c3, dh3, kDown, &dh2);

    nn::relu_backward(tr.h2, dh2);
    conv_backward(p, ids.b2_conv2, tr.b2c2, dh2, kSame, &dr2);
    nn::relu_backward(tr.r2, dr2);
    conv_backward(p, ids.b2_conv1, tr.b2c1, dr2, kDown, &dh1);
    conv_backward(p, ids.b2_skip, tr.b2s, dh2, kSkip, &dh1_skip);
    add_into(dh1, dh1_skip);

    nn::relu_backward(tr.h1, dh1);
    conv_backward(p, ids.b1_conv2, tr.b1c2, dh1, kSame, &dr1);
    nn::relu_backward(tr.r1, dr1);
    conv_backward(p, ids.b1_conv1, tr.b1c1, dr1, kDown, static_cast<Tensor<T>*>(nullptr));
    conv_backward(p, ids.b1_skip, tr.b1s, dh1, kSkip, static_cast<Tensor<T>*>(nullptr));
  }

  static Tensor<T> head_forward(const nn::ParamSet<T>& p, const Ids& ids, const Tensor<T>& z, HeadTrace<T>& tr) {
    tr.z = z;
    tr.m1 = nn::relu(dense(p, ids.fc1, z));
    tr.zp = dense(p, ids.fc2, tr.m1);
    add_into(tr.zp, z);
    return dense(p, ids.out, tr.zp);
  }

  static Tensor<T> head_backward(nn::ParamSet<T>& p, const Ids& ids, const HeadTrace<T>& tr,
                                 const Tensor<T>& dlogits, bool fault) {
    Tensor<T> dzp, dm1, dz;
    dense_backward(p, ids.out, tr.zp, dlogits, &dzp);
    Tensor<T> dm2 = dzp;
    if (fault) nn::as_row(dm2) *= T{-1};
    dense_backward(p, ids.fc2, tr.m1, dm2, &dm1);
    nn::relu_backward(tr.m1, dm1);
    dense_backward(p, ids.fc1, tr.z, dm1, &dz);
    add_into(dz, dzp);
    return dz;
  }

  // Unique instructions in first-appearance order, with each row's slot.
  static std::pair<std::vector<std::uint32_t>, std::vector<std::size_t>> group(
      std::span<const std::uint32_t> instructions) {
    std::vector<std::uint32_t> unique;
    std::vector<std::size_t> slot(instructions.size());
    std::vector<int> where(lang::kInstructionCount, -1);
    for (std::size_t i = 0; i < instructions.size(); ++i) {
      const auto ins = instructions[i];
      if (ins >= static_cast<std::uint32_t>(lang::kInstructionCount)) {
        throw ContractViolation("instruction index " + std::to_string(ins) + " out of range");
      }
      if (where[ins] < 0) {
        where[ins] = static_cast<int>(unique.size());
        unique.push_back(ins);
      }
      slot[i] = static_cast<std::size_t>(where[ins]);
    }
    return {unique, slot};
  }
};

template <typename T>
Tensor<T> AlmNet<T>::sentence_embedding(const lang::TokenSeq& tokens) const {
  LangTrace<T> tr;
  NetImpl<T>::lang_forward(config_, params_, *ids_, tokens, tr);
  return tr.out;
}

template <typename T>
Tensor<T> AlmNet<T>::visual_tokens(const Tensor<T>& images) const {
  VisTrace<T> tr;
  NetImpl<T>::vis_forward(config_, params_, *ids_, images, tr);
  return tr.tokens;
}

template <typename T>
Tensor<T> AlmNet<T>::fuse(const Tensor<T>& sentence, const Tensor<T>& tokens) const {
  if (sentence.rank() != 2 || sentence.cols() != config_.sentence_dim || tokens.rank() != 3 ||
      tokens.dim(2) != config_.sentence_dim || tokens.dim(0) != sentence.dim(0)) {
    throw ContractViolation("fuse: sentence " + nn::shape_string(sentence.shape()) + " and tokens " +
                            nn::shape_string(tokens.shape()) + " do not match sentence_dim " +
                            std::to_string(config_.sentence_dim));
  }
  return nn::query_attention(sentence, tokens, weights_of(params_, ids_->cma), config_.cma_heads,
                            static_cast<nn::QueryAttentionCache<T>*>(nullptr));
}

template <typename T>
Tensor<T> AlmNet<T>::head_logits(const Tensor<T>& z) const {
  HeadTrace<T> tr;
  return NetImpl<T>::head_forward(params_, *ids_, z, tr);
}

template <typename T>
Tensor<T> AlmNet<T>::logits(const Tensor<T>& images, std::span<const std::uint32_t> instructions) const {
  NetImpl<T>::check_images(config_, images);
  if (instructions.size() != images.dim(0)) {
    throw ContractViolation("logits: " + std::to_string(instructions.size()) + " instructions for " +
                            std::to_string(images.dim(0)) + " images");
  }
  const auto [unique, slot] = NetImpl<T>::group(instructions);
  std::vector<Tensor<T>> emb;
  emb.reserve(unique.size());
  for (const auto ins : unique) emb.push_back(sentence_embedding(ids_->sentences[ins]));
  const std::size_t ds = config_.sentence_dim;
  Tensor<T> e({instructions.size(), ds});
  for (std::size_t i = 0; i < instructions.size(); ++i) std::copy_n(emb[slot[i]].data(), ds, e.data() + i * ds);
  return head_logits(fuse(e, visual_tokens(images)));
}

template <typename T>
Tensor<T> AlmNet<T>::probabilities(const Tensor<T>& images, std::span<const std::uint32_t> instructions) const {
  return nn::softmax(logits(images, instructions));
}

template <typename T>
double AlmNet<T>::loss(const Tensor<T>& images, std::span<const std::uint32_t> instructions,
                       std::span<const std::uint8_t> actions, bool with_grads, double scale) {
  const auto& ids = *ids_;
  NetImpl<T>::check_images(config_, images);
  const std::size_t batch = images.dim(0), ds = config_.sentence_dim;
  if (instructions.size() != batch || actions.size() != batch) {
    throw ContractViolation("loss: batch of " + std::to_string(batch) + " images with " +
                            std::to_string(instructions.size()) + " instructions and " +
                            std::to_string(actions.size()) + " actions");
  }
  const auto [unique, slot] = NetImpl<T>::group(instructions);
  std::vector<LangTrace<T>> lang_tr(unique.size());
  for (std::size_t u = 0; u < unique.size(); ++u) {
    NetImpl<T>::lang_forward(config_, params_, ids, ids.sentences[unique[u]], lang_tr[u]);
  }
  Tensor<T> e({batch, ds});
  for (std::size_t i = 0; i < batch; ++i) std::copy_n(lang_tr[slot[i]].out.data(), ds, e.data() + i * ds);

  VisTrace<T> vis_tr;
  NetImpl<T>::vis_forward(config_, params_, ids, images, vis_tr);
  nn::QueryAttentionCache<T> cma_tr;
  const Tensor<T> z =
      nn::query_attention(e, vis_tr.tokens, weights_of(params_, ids.cma), config_.cma_heads, &cma_tr);
  HeadTrace<T> head_tr;
  const Tensor<T> logits = NetImpl<T>::head_forward(params_, ids, z, head_tr);
  Tensor<T> dlogits;
  const T loss = nn::cross_entropy(logits, actions, with_grads ? &dlogits : nullptr);
  if (!with_grads) return static_cast<double>(loss);

  nn::as_row(dlogits) *= static_cast<T>(scale);
  const Tensor<T> dz = NetImpl<T>::head_backward(params_, ids, head_tr, dlogits, fault_);
  Tensor<T> de, dtokens;
  nn::query_attention_backward(cma_tr, weights_of(params_, ids.cma), dz, &de, &dtokens, grads_of(params_, ids.cma));
  NetImpl<T>::vis_backward(config_, params_, ids, vis_tr, dtokens);
  for (std::size_t u = 0; u < unique.size(); ++u) {
    Tensor<T> dout({1, ds});
    for (std::size_t i = 0; i < batch; ++i) {
      if (slot[i] != u) continue;
      for (std::size_t j = 0; j < ds; ++j) dout[j] += de[i * ds + j];
    }
    NetImpl<T>::lang_backward(config_, params_, ids, lang_tr[u], dout);
  }
  return static_cast<double>(loss);
}

template class AlmNet<float>;
template class AlmNet<double>;

// ---------------------------------------------------------------------------
// Training

nn::Tensor<float> images_from_batch(const data::Batch& batch, std::size_t begin, std::size_t end) {
  if (begin > end || end > batch.size) throw ContractViolation("images_from_batch: range outside the batch");
  const std::size_t px = env::kObservationBytes;
  Tensor<float> t({end - begin, static_cast<std::size_t>(env::kImageSize), static_cast<std::size_t>(env::kImageSize),
                   static_cast<std::size_t>(env::kImageChannels)});
  std::copy_n(batch.observations.data() + begin * px, (end - begin) * px, t.data());
  return t;
}

std::uint64_t holdout_seed(std::uint64_t seed) { return split_seed(seed, 2); }

double holdout_accuracy(const AlmNet<float>& net, const data::Dataset& holdout, std::size_t batch_size) {
  data::SampleStream stream(holdout, batch_size, 0);
  data::Batch batch;
  std::size_t agree = 0, total = 0;
  while (stream.next(batch)) {
    const auto logits = net.logits(images_from_batch(batch, 0, batch.size), batch.instructions);
    const std::size_t classes = logits.cols();
    for (std::size_t i = 0; i < batch.size; ++i) {
      const float* row = logits.data() + i * classes;
      const auto best = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
      agree += best == batch.actions[i];
    }
    total += batch.size;
  }
  return total ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
}

TrainResult train(const data::Dataset& dataset, const AlmConfig& config, const TrainOptions& options) {
  config.validate();
  if (config.image_size != static_cast<std::size_t>(env::kImageSize)) {
    throw ConfigError("config field 'image_size': training needs " + std::to_string(env::kImageSize) +
                      "-pixel observations, got " + std::to_string(config.image_size));
  }
  if (dataset.episodes.empty() || dataset.sample_count() == 0) throw ContractViolation("train: empty dataset");

  data::Dataset generated_holdout;
  const data::Dataset* holdout = options.holdout;
  if (!holdout) {
    generated_holdout = data::generate_dataset(config.holdout_episodes, holdout_seed(config.seed), options.threads);
    holdout = &generated_holdout;
  }

  const std::size_t threads = options.deterministic ? 1 : std::max<std::size_t>(1, options.threads);
  AlmNet<float> net(config);
  net.initialize(split_seed(config.seed, 0));
  std::vector<AlmNet<float>> replicas;
  for (std::size_t w = 1; w < threads; ++w) replicas.emplace_back(config);
  nn::Adam<float> adam(net.params(), config.adam());

  TrainResult result;
  const auto record = [&](std::size_t update, double loss) {
    const CurvePoint point{update, loss, holdout_accuracy(net, *holdout)};
    result.curve.push_back(point);
    if (options.on_point) options.on_point(point);
  };

  const std::uint64_t shuffle_root = split_seed(config.seed, 1);
  std::uint64_t epoch = 0;
  auto stream = std::make_unique<data::SampleStream>(dataset, config.batch_size, split_seed(shuffle_root, epoch));
  data::Batch batch;
  double window_sum = 0.0;
  std::size_t window_n = 0;
  std::vector<double> shard_loss(threads);

  for (std::size_t update = 0; update < config.n_updates; ++update) {
    while (!stream->next(batch)) {
      ++epoch;
      stream = std::make_unique<data::SampleStream>(dataset, config.batch_size, split_seed(shuffle_root, epoch));
    }
    net.params().zero_grad();
    for (auto& r : replicas) {
      r.load_values(net.params());
      r.params().zero_grad();
    }
    const std::size_t n = batch.size;
    parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
      AlmNet<float>& model = worker == 0 ? net : replicas[worker - 1];
      const double share = static_cast<double>(end - begin) / static_cast<double>(n);
      const std::span<const std::uint32_t> ins(batch.instructions.data() + begin, end - begin);
      const std::span<const std::uint8_t> act(batch.actions.data() + begin, end - begin);
      shard_loss[worker] = share * model.loss(images_from_batch(batch, begin, end), ins, act, true, share);
    });
    double loss = 0.0;
    for (std::size_t w = 0; w < std::min(threads, n); ++w) loss += shard_loss[w];
    for (std::size_t w = 1; w < std::min(threads, n); ++w) net.params().accumulate_grads(replicas[w - 1].params());
    if (!std::isfinite(loss)) {
      throw nn::NumericError("training loss became " + std::to_string(loss) + " at update " + std::to_string(update) +
                             " (epoch " + std::to_string(epoch) + ", batch of " + std::to_string(n) + ")");
    }
    if (update == 0) record(0, loss);
    adam.step(net.params());
    window_sum += loss;
    ++window_n;
    if ((update + 1) % config.eval_every == 0 || update + 1 == config.n_updates) {
      record(update + 1, window_sum / static_cast<double>(window_n));
      window_sum = 0.0;
      window_n = 0;
    }
  }
  if (config.n_updates == 0) {
    stream->next(batch);
    const std::span<const std::uint32_t> ins(batch.instructions.data(), batch.size);
    const std::span<const std::uint8_t> act(batch.actions.data(), batch.size);
    record(0, net.loss(images_from_batch(batch, 0, batch.size), ins, act, false));
  }
  result.params = net.params();
  return result;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "update,loss,holdout_accuracy\n";
  char line[96];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", p.update, p.loss, p.holdout_accuracy);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation and extraction

std::size_t EvalResult::total_episodes() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.episodes;
  return n;
}

EvalResult evaluate(const AlmNet<float>& net, std::size_t n_episodes, std::uint64_t seed, std::size_t threads) {
  if (net.config().image_size != static_cast<std::size_t>(env::kImageSize)) {
    throw ConfigError("evaluate: the policy must take " + std::to_string(env::kImageSize) + "-pixel observations");
  }
  struct Episode {
    env::Task task;
    std::uint32_t instruction;
    env::WorldState state;
    bool done = false;
    bool success = false;
  };
  const std::size_t per_task = n_episodes / env::kTaskCount;
  std::vector<Episode> episodes;
  episodes.reserve(per_task * env::kTaskCount);
  for (int t = 0; t < env::kTaskCount; ++t) {
    const auto task = static_cast<env::Task>(t);
    std::vector<std::uint32_t> pool;
    for (const auto& ins : lang::instructions()) {
      if (ins.task() == task) pool.push_back(static_cast<std::uint32_t>(ins.canonical_index));
    }
    const std::uint64_t task_seed = split_seed(seed, static_cast<std::uint64_t>(t));
    for (std::size_t j = 0; j < per_task; ++j) {
      const auto ins_index = pool[j % pool.size()];
      const auto& ins = lang::instructions()[ins_index];
      episodes.push_back({task, ins_index, env::generate_world(task, ins.target(), split_seed(task_seed, j))});
    }
  }

  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> active;
  for (;;) {
    active.clear();
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      if (!episodes[i].done) active.push_back(i);
    }
    if (active.empty()) break;
    const std::size_t chunks = (active.size() + kChunk - 1) / kChunk;
    parallel_chunks(chunks, threads, [&](std::size_t cb, std::size_t ce, std::size_t) {
      for (std::size_t c = cb; c < ce; ++c) {
        const std::size_t begin = c * kChunk, end = std::min(active.size(), begin + kChunk);
        Tensor<float> images({end - begin, static_cast<std::size_t>(env::kImageSize),
                              static_cast<std::size_t>(env::kImageSize), static_cast<std::size_t>(env::kImageChannels)});
        std::vector<std::uint32_t> ins(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& ep = episodes[active[i]];
          data::decode_observation(env::render(ep.state), images.data() + (i - begin) * env::kObservationBytes);
          ins[i - begin] = ep.instruction;
        }
        const auto logits = net.logits(images, ins);
        const std::size_t classes = logits.cols();
        for (std::size_t i = begin; i < end; ++i) {
          const float* row = logits.data() + (i - begin) * classes;
          const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
          auto& ep = episodes[active[i]];
          auto [next, outcome] = env::step(ep.state, static_cast<env::Action>(best));
          ep.state = next;
          ep.done = outcome.done;
          ep.success = outcome.success;
        }
      }
    });
  }

  EvalResult result;
  for (const auto& ep : episodes) {
    auto& score = result.tasks[static_cast<std::size_t>(ep.task)];
    ++score.episodes;
    score.successes += ep.success;
  }
  return result;
}

nn::GradCheckReport model_grad_check(const ModelGradCheckOptions& options) {
  const AlmConfig config = AlmConfig::miniature();
  AlmNet<double> net(config);
  net.initialize(split_seed(options.seed, 0));
  Rng rng(split_seed(options.seed, 1));
  for (auto& p : net.params()) {
    for (auto& v : p.value.values()) v += options.perturbation * rng.normal();
  }
  Tensor<double> images({options.batch, config.image_size, config.image_size,
                         static_cast<std::size_t>(env::kImageChannels)});
  for (auto& v : images.values()) v = rng.uniform01();
  std::vector<std::uint32_t> instructions(options.batch);
  std::vector<std::uint8_t> actions(options.batch);
  for (std::size_t i = 0; i < options.batch; ++i) {
    instructions[i] = static_cast<std::uint32_t>(rng.uniform_int(lang::kInstructionCount));
    actions[i] = static_cast<std::uint8_t>(rng.uniform_int(env::kActionCount));
  }
  net.set_fault_injection(options.inject_fault);
  nn::GradCheckOptions check = options.check;
  check.seed = split_seed(options.seed, 2);
  return nn::grad_check(
      [&](bool with_grads) { return net.loss(images, instructions, actions, with_grads); }, net.params(), check);
}

embed::EmbeddingSet extract_embeddings(const AlmNet<float>& net, const std::string& model_name) {
  embed::EmbeddingSet set;
  set.model_name = model_name;
  set.sentences = lang::canonical_sentences();
  const std::size_t ds = net.config().sentence_dim;
  set.matrix.resize(static_cast<Eigen::Index>(set.sentences.size()), static_cast<Eigen::Index>(ds));
  for (std::size_t i = 0; i < set.sentences.size(); ++i) {
    const auto e = net.sentence_embedding(lang::tokenize(set.sentences[i]));
    for (std::size_t j = 0; j < ds; ++j) {
      set.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(e[j]);
    }
  }
  return set;
}

void save_model(const std::filesystem::path& path, const AlmNet<float>& net) {
  nn::save_checkpoint(path, net.params(), config_to_json(net.config()));
}

AlmNet<float> load_model(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  AlmConfig config;
  try {
    config = config_from_json(ckpt.config_json);
  } catch (const ConfigError& e) {
    throw nn::CheckpointError("'" + path.string() + "': embedded model config is invalid: " + e.what());
  }
  AlmNet<float> net(config);
  try {
    net.load_values(ckpt.params);
  } catch (const ContractViolation& e) {
    throw nn::CheckpointError("'" + path.string() + "': " + e.what());
  }
  return net;
}

}  // namespace alm::model
