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

#include "alm/oracle.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <string>

namespace alm::oracle {

using env::Action;
using env::Cell;
using env::Direction;

std::optional<Path> bfs_path(const env::WorldState& state, std::span<const Cell> goals) {
  if (goals.empty()) throw ContractViolation("bfs_path: goal set is empty");
  constexpr int kUnseen = -1;
  std::array<int, env::kCellCount> dist;
  std::array<int, env::kCellCount> parent;
  dist.fill(kUnseen);
  parent.fill(kUnseen);
  std::array<Cell, env::kCellCount> queue{};
  std::size_t head = 0;
  std::size_t tail = 0;
  const Cell start = state.agent.cell;
  dist[env::cell_index(start)] = 0;
  queue[tail++] = start;
  while (head < tail) {
    const Cell c = queue[head++];
    for (int d = 0; d < 4; ++d) {
      const Cell n = env::neighbor(c, static_cast<Direction>(d));
      if (!env::in_room(n) || state.at(n) || dist[env::cell_index(n)] != kUnseen) continue;
      dist[env::cell_index(n)] = dist[env::cell_index(c)] + 1;
      parent[env::cell_index(n)] = env::cell_index(c);
      queue[tail++] = n;
    }
  }

  std::optional<Cell> best;
  for (const Cell g : goals) {
    if (!env::in_room(g)) continue;
    const int dg = dist[env::cell_index(g)];
    if (dg == kUnseen) continue;
    if (!best || dg < dist[env::cell_index(*best)] ||
        (dg == dist[env::cell_index(*best)] && g < *best)) {
      best = g;
    }
  }
  if (!best) return std::nullopt;

  Path path;
  for (int at = env::cell_index(*best); at != kUnseen; at = parent[at]) {
    path.cells.push_back(env::cell_at(at));
  }
  std::reverse(path.cells.begin(), path.cells.end());
  return path;
}

std::vector<Action> path_to_actions(const Path& path, Direction start_dir) {
  std::vector<Action> actions;
  Direction dir = start_dir;
  for (std::size_t i = 1; i < path.cells.size(); ++i) {
    const Cell a = path.cells[i - 1];
    const Cell b = path.cells[i];
    if (env::manhattan(a, b) != 1) {
      throw ContractViolation("path_to_actions: consecutive cells are not 4-adjacent");
    }
    Direction want = Direction::N;
    for (int d = 0; d < 4; ++d) {
      if (env::neighbor(a, static_cast<Direction>(d)) == b) want = static_cast<Direction>(d);
    }
    const int diff = (static_cast<int>(want) - static_cast<int>(dir) + 4) % 4;
    if (diff == 1) {
      actions.push_back(Action::Right);
    } else if (diff == 2) {
      actions.push_back(Action::Right);
      actions.push_back(Action::Right);
    } else if (diff == 3) {
      actions.push_back(Action::Left);
    }
    dir = want;
    actions.push_back(Action::Forward);
  }
  return actions;
}

namespace {

constexpr int kPoseCount = env::kCellCount * 4;

int pose_index(Cell c, Direction d) { return env::cell_index(c) * 4 + static_cast<int>(d); }

bool pose_is_goal(const env::WorldState& s, Cell target, Cell c, Direction d) {
  if (s.task == env::Task::EscapeFrom) return env::manhattan(c, target) >= env::kEscapeThreshold;
  return env::neighbor(c, d) == target;
}

}  // namespace

Plan plan(const env::WorldState& state) {
  if (state.steps_taken != 0) {
    throw ContractViolation("plan: world must be freshly generated");
  }
  const auto target = state.target_cell();
  if (!target) throw PlanningError("plan: target object is not on the grid");

  struct Link {
    int from = -1;
    Action via = Action::Open;
  };
  std::array<Link, kPoseCount> link{};
  std::array<bool, kPoseCount> seen{};
  std::array<env::AgentPose, kPoseCount> queue{};
  std::size_t head = 0;
  std::size_t tail = 0;
  seen[pose_index(state.agent.cell, state.agent.dir)] = true;
  queue[tail++] = state.agent;

  int goal = -1;
  while (head < tail) {
    const env::AgentPose p = queue[head++];
    if (pose_is_goal(state, *target, p.cell, p.dir)) {
      goal = pose_index(p.cell, p.dir);
      break;
    }
    constexpr std::array<Action, 3> kMoves{Action::Left, Action::Right, Action::Forward};
    for (const Action a : kMoves) {
      env::AgentPose q = p;
      if (a == Action::Left) {
        q.dir = env::turn_left(p.dir);
      } else if (a == Action::Right) {
        q.dir = env::turn_right(p.dir);
      } else {
        const Cell f = env::neighbor(p.cell, p.dir);
        if (!env::in_room(f) || state.at(f)) continue;
        q.cell = f;
      }
      const int qi = pose_index(q.cell, q.dir);
      if (seen[qi]) continue;
      seen[qi] = true;
      link[qi] = {pose_index(p.cell, p.dir), a};
      queue[tail++] = q;
    }
  }
  if (goal < 0) {
    throw PlanningError("plan: no reachable goal for task '" +
                        std::string(env::to_string(state.task)) + "'");
  }

  Plan out;
  for (int at = goal; link[at].from >= 0; at = link[at].from) {
    out.actions.push_back(link[at].via);
  }
  std::reverse(out.actions.begin(), out.actions.end());
  if (state.task == env::Task::PickUp) out.actions.push_back(Action::Pickup);
  if (out.actions.size() > state.max_steps) {
    throw PlanningError("plan: demonstration exceeds the episode step cap");
  }
  out.expected_len = out.actions.size();
  return out;
}

}  // namespace alm::oracle
