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

#include <cmath>
#include <string>

#include "alm/nn/gradcheck.hpp"
#include "alm/nn/optim.hpp"
#include "alm/nn/params.hpp"
#include "alm/rng.hpp"

namespace alm::nn {

template <typename T>
typename ParamSet<T>::Id ParamSet<T>::add(std::string name, Shape shape, Init init, std::size_t fan_in,
                                          std::size_t fan_out, T constant) {
  if (find(name)) throw ContractViolation("ParamSet: duplicate parameter name '" + name + "'");
  Param<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(shape);
  p.init = init;
  p.constant = constant;
  p.fan_in = fan_in;
  p.fan_out = fan_out;
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
std::optional<typename ParamSet<T>::Id> ParamSet<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
void ParamSet<T>::initialize(std::uint64_t seed) {
  for (std::size_t id = 0; id < params_.size(); ++id) {
    auto& p = params_[id];
    switch (p.init) {
      case Init::Zeros:
        p.value.fill(T{0});
        break;
      case Init::Ones:
        p.value.fill(T{1});
        break;
      case Init::Constant:
        p.value.fill(p.constant);
        break;
      case Init::Xavier: {
        const double fan = static_cast<double>(p.fan_in + p.fan_out);
        if (fan <= 0) throw ContractViolation("ParamSet: Xavier init needs fans for '" + p.name + "'");
        const double bound = std::sqrt(6.0 / fan);
        Rng rng(split_seed(seed, id));
        for (auto& v : p.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
  }
}

template <typename T>
void ParamSet<T>::accumulate_grads(const ParamSet& other) {
  if (other.params_.size() != params_.size()) throw ContractViolation("accumulate_grads: layout mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (other.params_[i].grad.shape() != params_[i].grad.shape()) {
      throw ContractViolation("accumulate_grads: shape mismatch for '" + params_[i].name + "'");
    }
    as_row(params_[i].grad) += as_row(other.params_[i].grad);
  }
}

template class ParamSet<float>;
template class ParamSet<double>;

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

template <typename T>
void Adam<T>::step(ParamSet<T>& params) {
  if (params.size() != m_.size()) throw ContractViolation("Adam: parameter set layout changed");
  for (const auto& p : params) {
    for (const T g : p.grad.values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const T lr = static_cast<T>(config_.lr);
  const T eps = static_cast<T>(config_.eps);
  std::size_t id = 0;
  for (auto& p : params) {
    T* m = m_[id].data();
    T* v = v_[id].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t i = 0, n = p.value.size(); i < n; ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T mhat = m[i] * c1;
      const T vhat = v[i] * c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    ++id;
  }
}

template class Adam<float>;
template class Adam<double>;

GradCheckReport grad_check(const std::function<double(bool)>& loss, ParamSet<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  loss(true);
  GradCheckReport report;
  Rng rng(options.seed);
  for (auto& p : params) {
    const std::size_t n = p.value.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > options.coords_per_param) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.coords_per_param);
    }
    for (const std::size_t i : coords) {
      const double saved = p.value[i];
      const auto at = [&](double offset) {
        p.value[i] = saved + offset;
        return loss(false);
      };
      const double h = options.eps;
      double numeric = 0.0;
      if (options.stencil == Stencil::FourPoint) {
        numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      }
      p.value[i] = saved;
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_param = p.name;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace alm::nn
