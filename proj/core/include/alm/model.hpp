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

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "alm/data.hpp"
#include "alm/embedio.hpp"
#include "alm/env.hpp"
#include "alm/error.hpp"
#include "alm/lang.hpp"
#include "alm/nn/gradcheck.hpp"
#include "alm/nn/optim.hpp"
#include "alm/nn/params.hpp"
#include "alm/nn/tensor.hpp"

namespace alm::model {

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

struct AlmConfig {
  std::size_t image_size = env::kImageSize;
  // Output channels of residual block 1, residual block 2, and the two plain convs.
  std::array<std::size_t, 4> channels{16, 32, 64, 64};
  std::size_t token_dim = 100;
  std::size_t ff_dim = 200;
  std::size_t sa_heads = 4;
  std::size_t pool_hidden = 256;
  std::size_t sentence_dim = 128;
  std::size_t cma_heads = 4;
  std::size_t head_hidden = 128;
  std::size_t max_tokens = lang::kMaxTokens;
  float token_init = 0.01f;

  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 128;
  std::size_t n_updates = 20000;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;
  std::size_t holdout_episodes = 216;

  // Throws ConfigError naming the offending field.
  void validate() const;
  nn::AdamConfig adam() const { return {lr, beta1, beta2, eps}; }

  // 8x8 observations, two visual tokens, 8-wide embeddings. Used for gradient checks.
  static AlmConfig miniature();

  friend bool operator==(const AlmConfig&, const AlmConfig&) = default;
};

std::string config_to_json(const AlmConfig& config);
// Strict: unknown keys and wrong types are ConfigErrors. Missing keys keep defaults.
AlmConfig config_from_json(const std::string& text);

// Number of visual tokens f_vis produces for this config.
std::size_t visual_token_count(const AlmConfig& config);

template <typename T>
class AlmNet {
 public:
  explicit AlmNet(AlmConfig config);

  const AlmConfig& config() const { return config_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

  // Xavier weights, zero biases, unit layernorm gains, every token row set to token_init.
  void initialize(std::uint64_t seed);
  // Copies parameter values from a set with the same layout (any precision).
  template <typename U>
  void load_values(const nn::ParamSet<U>& source);

  // E_L for one tokenized sentence: [1, sentence_dim].
  nn::Tensor<T> sentence_embedding(const lang::TokenSeq& tokens) const;
  // E_V for a batch of images [B, H, W, 3]: [B, visual_token_count, sentence_dim].
  nn::Tensor<T> visual_tokens(const nn::Tensor<T>& images) const;
  // Cross-modal fusion of one query per row: [B, sentence_dim].
  nn::Tensor<T> fuse(const nn::Tensor<T>& sentence, const nn::Tensor<T>& tokens) const;
  // Residual MLP head to action logits: [B, 6].
  nn::Tensor<T> head_logits(const nn::Tensor<T>& z) const;

  // Full policy: logits for images paired with canonical instruction indices.
  nn::Tensor<T> logits(const nn::Tensor<T>& images, std::span<const std::uint32_t> instructions) const;
  nn::Tensor<T> probabilities(const nn::Tensor<T>& images, std::span<const std::uint32_t> instructions) const;

  // Mean cross-entropy over the batch. When with_grads is set, gradients of
  // (scale * loss) are added to params().grad.
  double loss(const nn::Tensor<T>& images, std::span<const std::uint32_t> instructions,
              std::span<const std::uint8_t> actions, bool with_grads, double scale = 1.0);

  // Flips the sign of the head MLP's backward signal. Only for checking the checker.
  void set_fault_injection(bool on) { fault_ = on; }

 private:
  template <typename U>
  friend struct NetImpl;
  struct Ids;
  AlmConfig config_;
  nn::ParamSet<T> params_;
  std::shared_ptr<const Ids> ids_;
  bool fault_ = false;
};

template <typename T>
template <typename U>
void AlmNet<T>::load_values(const nn::ParamSet<U>& source) {
  if (source.size() != params_.size()) {
    throw ContractViolation("load_values: " + std::to_string(source.size()) + " tensors for a layout of " +
                            std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (source[i].name != params_[i].name || source[i].value.shape() != params_[i].value.shape()) {
      throw ContractViolation("load_values: tensor " + std::to_string(i) + " is '" + source[i].name + "' " +
                              nn::shape_string(source[i].value.shape()) + ", expected '" + params_[i].name + "' " +
                              nn::shape_string(params_[i].value.shape()));
    }
    if constexpr (std::is_same_v<T, U>) {
      params_[i].value = source[i].value;
    } else {
      params_[i].value = source[i].value.template cast<T>();
    }
  }
}

extern template class AlmNet<float>;
extern template class AlmNet<double>;

// Copies observations [n, 12288 bytes] into a float image tensor scaled to [0, 1].
nn::Tensor<float> images_from_batch(const data::Batch& batch, std::size_t begin, std::size_t end);

struct CurvePoint {
  std::size_t update = 0;
  double loss = 0.0;              // mean minibatch loss since the previous point
  double holdout_accuracy = 0.0;  // argmax agreement with the demonstrator
};

struct TrainOptions {
  std::size_t threads = 1;
  bool deterministic = false;  // forces one thread
  // Held-out demonstrations for the accuracy column; generated from config.seed when null.
  const data::Dataset* holdout = nullptr;
  std::function<void(const CurvePoint&)> on_point;
};

struct TrainResult {
  nn::ParamSet<float> params;
  std::vector<CurvePoint> curve;
};

std::uint64_t holdout_seed(std::uint64_t seed);
TrainResult train(const data::Dataset& dataset, const AlmConfig& config, const TrainOptions& options = {});
double holdout_accuracy(const AlmNet<float>& net, const data::Dataset& holdout, std::size_t batch_size = 256);

std::string curve_to_csv(const std::vector<CurvePoint>& curve);

struct TaskScore {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double rate() const { return episodes ? static_cast<double>(successes) / static_cast<double>(episodes) : 0.0; }
};

struct EvalResult {
  std::array<TaskScore, env::kTaskCount> tasks{};
  std::size_t total_episodes() const;
};

// n_episodes / 3 fresh worlds per task, instructions cycled through the task's
// 36 sentences, greedy actions (lowest index wins ties).
EvalResult evaluate(const AlmNet<float>& net, std::size_t n_episodes, std::uint64_t seed,
                    std::size_t threads = 1);

// Finite-difference check of the whole network on the miniature config in f64.
// Parameters are moved off the symmetric initial point (zero biases, identical
// tokens) by a Gaussian perturbation so no ReLU input sits exactly on its kink.
struct ModelGradCheckOptions {
  std::uint64_t seed = 0;
  double perturbation = 0.3;
  std::size_t batch = 8;
  bool inject_fault = false;
  nn::GradCheckOptions check{1e-4, nn::Stencil::FourPoint, 64, 0};
};

nn::GradCheckReport model_grad_check(const ModelGradCheckOptions& options = {});

embed::EmbeddingSet extract_embeddings(const AlmNet<float>& net, const std::string& model_name = "ALM");

void save_model(const std::filesystem::path& path, const AlmNet<float>& net);
AlmNet<float> load_model(const std::filesystem::path& path);

}  // namespace alm::model
