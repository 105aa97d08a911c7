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

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "alm/env.hpp"
#include "alm/error.hpp"

namespace alm::oracle {

// Cell sequence from the agent cell (inclusive) to a goal; length() counts moves.
struct Path {
  std::vector<env::Cell> cells;
  std::size_t length() const { return cells.empty() ? 0 : cells.size() - 1; }
};

// Shortest 4-connected path over object-free interior cells to the nearest
// goal. Among equally near goals the smallest (row, col) wins; parents are
// fixed by first discovery with neighbours expanded N, E, S, W.
std::optional<Path> bfs_path(const env::WorldState& state, std::span<const env::Cell> goals);

// Turns (at most two per waypoint, Right on 180-degree ties) and Forward
// moves that walk `path` starting from `start_dir`.
std::vector<env::Action> path_to_actions(const Path& path, env::Direction start_dir);

struct Plan {
  std::vector<env::Action> actions;
  std::size_t expected_len = 0;
};

class PlanningError : public Error {
 public:
  using Error::Error;
};

// Demonstration for a freshly generated world. Searches agent poses
// (cell, heading) breadth-first with unit cost per action, so the plan uses
// the fewest actions; successors are expanded Left, Right, Forward.
Plan plan(const env::WorldState& state);

}  // namespace alm::oracle
