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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "alm/nn/tensor.hpp"

namespace alm::nn {

enum class Init { Xavier, Zeros, Ones, Constant };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Init init = Init::Xavier;
  T constant = T{0};
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

// Named parameters with same-shape gradient slots. Ids are insertion indices
// and stay valid for the lifetime of the set.
template <typename T>
class ParamSet {
 public:
  using Id = std::size_t;

  Id add(std::string name, Shape shape, Init init, std::size_t fan_in = 0, std::size_t fan_out = 0,
         T constant = T{0});

  Param<T>& operator[](Id id) { return params_[id]; }
  const Param<T>& operator[](Id id) const { return params_[id]; }
  Tensor<T>& value(Id id) { return params_[id].value; }
  const Tensor<T>& value(Id id) const { return params_[id].value; }
  Tensor<T>& grad(Id id) { return params_[id].grad; }

  std::optional<Id> find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  // Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)); each parameter
  // draws from its own stream split_seed(seed, id).
  void initialize(std::uint64_t seed);
  // Adds other's gradients into ours; the sets must have identical layouts.
  void accumulate_grads(const ParamSet& other);

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      const auto id = out.add(p.name, p.value.shape(), p.init, p.fan_in, p.fan_out, static_cast<U>(p.constant));
      out[id].value = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Param<T>> params_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace alm::nn
