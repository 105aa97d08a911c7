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

#include <benchmark/benchmark.h>

#include "alm/align.hpp"
#include "alm/embedio.hpp"
#include "alm/model.hpp"
#include "alm/nn/ops.hpp"
#include "alm/rng.hpp"

namespace {

using alm::nn::Tensor;

Tensor<float> random_tensor(alm::nn::Shape shape, std::uint64_t seed) {
  alm::Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

// First residual block's 3x3 stride-2 convolution on a batch of observations.
void BM_Conv2dForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({batch, 64, 64, 3}, 1);
  const auto w = random_tensor({27, 16}, 2);
  const Tensor<float> b({16});
  const alm::nn::ConvSpec spec{3, 2, 1};
  for (auto _ : state) {
    auto y = alm::nn::conv2d(x, w, b, spec, static_cast<alm::nn::ConvCache<float>*>(nullptr));
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

// One forward and backward pass of the full model (no optimizer step).
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  alm::model::AlmNet<float> net(alm::model::AlmConfig{});
  net.initialize(0);
  alm::Rng rng(3);
  Tensor<float> images({batch, 64, 64, 3});
  for (auto& v : images.values()) v = static_cast<float>(rng.uniform01());
  std::vector<std::uint32_t> instructions(batch);
  std::vector<std::uint8_t> actions(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    instructions[i] = static_cast<std::uint32_t>(rng.uniform_int(108));
    actions[i] = static_cast<std::uint8_t>(rng.uniform_int(6));
  }
  for (auto _ : state) {
    net.params().zero_grad();
    benchmark::DoNotOptimize(net.loss(images, instructions, actions, true));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_PrecisionAtK(benchmark::State& state) {
  const auto a = alm::embed::random_embeddings(108, 128, 1);
  const auto b = alm::embed::random_embeddings(108, 4096, 2);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(alm::align::precision_at_k(a, b, k));
}
BENCHMARK(BM_PrecisionAtK)->Arg(1)->Arg(15)->Unit(benchmark::kMicrosecond);

void BM_PermutationTest(benchmark::State& state) {
  const auto a = alm::embed::random_embeddings(108, 128, 1);
  const auto b = alm::embed::random_embeddings(108, 128, 2);
  const auto n_perm = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(alm::align::permutation_test(a, b, 15, n_perm, 0, 1).p_value);
}
BENCHMARK(BM_PermutationTest)->Arg(1000)->Unit(benchmark::kMillisecond);

// PCA from 4096 dimensions down to the rank cap, then Procrustes.
void BM_AlignedProcrustes(benchmark::State& state) {
  const auto a = alm::embed::random_embeddings(108, 128, 1);
  const auto b = alm::embed::random_embeddings(108, static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(alm::align::aligned_procrustes(a, b).disparity);
}
BENCHMARK(BM_AlignedProcrustes)->Arg(128)->Arg(4096)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
