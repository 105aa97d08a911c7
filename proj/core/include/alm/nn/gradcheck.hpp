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
#include <functional>
#include <string>

#include "alm/nn/params.hpp"

namespace alm::nn {

// Central difference stencils: (f(h) - f(-h)) / 2h, or the fourth-order
// (8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h, which tolerates a larger h and
// so keeps rounding noise in the numeric derivative far below 1e-8.
enum class Stencil { TwoPoint, FourPoint };

struct GradCheckOptions {
  double eps = 1e-5;
  Stencil stencil = Stencil::TwoPoint;
  std::size_t coords_per_param = 64;  // all coordinates when the tensor is smaller
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// `loss(with_grads)` returns the scalar loss at the current parameter values;
// when with_grads is true it must also accumulate analytic gradients into
// params (which are zeroed beforehand). Each sampled coordinate is compared
// with a central difference of step eps (see Stencil) using
// |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const std::function<double(bool with_grads)>& loss, ParamSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace alm::nn
