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

#include "alm/env.hpp"

#include <vector>

#include "alm/error.hpp"
#include "alm/rng.hpp"

namespace alm::env {

std::string_view to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::Ball: return "ball";
    case ObjectKind::Box: return "box";
    case ObjectKind::Key: return "key";
  }
  return "?";
}

std::string_view to_string(Color color) {
  switch (color) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Yellow: return "yellow";
    case Color::Purple: return "purple";
    case Color::Grey: return "grey";
  }
  return "?";
}

std::string_view to_string(Action action) {
  switch (action) {
    case Action::Left: return "left";
    case Action::Right: return "right";
    case Action::Forward: return "forward";
    case Action::Pickup: return "pickup";
    case Action::Drop: return "drop";
    case Action::Open: return "open";
  }
  return "?";
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::GoTo: return "goto";
    case Task::PickUp: return "pickup";
    case Task::EscapeFrom: return "escape";
  }
  return "?";
}

Rgb palette(Color color) {
  switch (color) {
    case Color::Red: return {255, 0, 0};
    case Color::Green: return {0, 255, 0};
    case Color::Blue: return {0, 0, 255};
    case Color::Yellow: return {255, 255, 0};
    case Color::Purple: return {160, 32, 240};
    case Color::Grey: return {128, 128, 128};
  }
  return kFloorRgb;
}

std::optional<Cell> WorldState::target_cell() const {
  for (int i = 0; i < kCellCount; ++i) {
    if (objects[i] && *objects[i] == target) return cell_at(i);
  }
  return std::nullopt;
}

int WorldState::object_count() const {
  int n = 0;
  for (const auto& o : objects) n += o.has_value() ? 1 : 0;
  return n;
}

namespace {

constexpr int kObjectPairs = kObjectKindCount * kColorCount;

std::uint64_t world_stream(Task task, Object target, std::uint64_t seed) {
  const auto code = static_cast<std::uint64_t>(task) * kObjectPairs +
                    static_cast<std::uint64_t>(target.color) * kObjectKindCount +
                    static_cast<std::uint64_t>(target.kind);
  return split_seed(seed, code);
}

Object object_from_pair(int pair) {
  return {static_cast<ObjectKind>(pair % kObjectKindCount),
          static_cast<Color>(pair / kObjectKindCount)};
}

int pair_of(Object o) {
  return static_cast<int>(o.color) * kObjectKindCount + static_cast<int>(o.kind);
}

template <typename Pred>
std::vector<Cell> empty_cells(const WorldState& s, Pred&& keep) {
  std::vector<Cell> out;
  for (int i = 0; i < kCellCount; ++i) {
    const Cell c = cell_at(i);
    if (!s.objects[i] && keep(c)) out.push_back(c);
  }
  return out;
}

bool solvable(const WorldState& s) {
  const auto reach = reachable_cells(s);
  const auto goals = goal_cells(s);
  for (int i = 0; i < kCellCount; ++i) {
    if (reach[i] && goals[i]) return true;
  }
  return false;
}

}  // namespace

std::array<bool, kCellCount> reachable_cells(const WorldState& state) {
  std::array<bool, kCellCount> seen{};
  std::array<Cell, kCellCount> queue{};
  std::size_t head = 0;
  std::size_t tail = 0;
  seen[cell_index(state.agent.cell)] = true;
  queue[tail++] = state.agent.cell;
  while (head < tail) {
    const Cell c = queue[head++];
    for (int d = 0; d < 4; ++d) {
      const Cell n = neighbor(c, static_cast<Direction>(d));
      if (!in_room(n) || seen[cell_index(n)] || state.at(n)) continue;
      seen[cell_index(n)] = true;
      queue[tail++] = n;
    }
  }
  return seen;
}

std::array<bool, kCellCount> goal_cells(const WorldState& state) {
  std::array<bool, kCellCount> goals{};
  const auto target = state.target_cell();
  if (!target) return goals;
  for (int i = 0; i < kCellCount; ++i) {
    const Cell c = cell_at(i);
    if (state.objects[i]) continue;
    if (state.task == Task::EscapeFrom) {
      goals[i] = manhattan(c, *target) >= kEscapeThreshold;
    } else {
      goals[i] = manhattan(c, *target) == 1;
    }
  }
  return goals;
}

WorldState generate_world(Task task, Object target, std::uint64_t seed,
                          const GenerateOptions& options) {
  if (options.distractors < 0 || options.distractors > kCellCount - 2) {
    throw ContractViolation("generate_world: distractor count out of range");
  }
  Rng rng(world_stream(task, target, seed));
  const int target_pair = pair_of(target);
  for (;;) {
    WorldState s;
    s.task = task;
    s.target = target;
    s.seed = seed;
    s.max_steps = options.max_steps;

    const Cell target_at = cell_at(static_cast<int>(rng.uniform_int(kCellCount)));
    s.at(target_at) = target;
    for (int k = 0; k < options.distractors; ++k) {
      int pair = static_cast<int>(rng.uniform_int(kObjectPairs - 1));
      if (pair >= target_pair) ++pair;
      const auto free = empty_cells(s, [](Cell) { return true; });
      s.at(free[rng.uniform_int(free.size())]) = object_from_pair(pair);
    }

    const auto starts = empty_cells(s, [&](Cell c) {
      return task != Task::EscapeFrom || manhattan(c, target_at) <= kEscapeStartRadius;
    });
    if (starts.empty()) continue;
    s.agent.cell = starts[rng.uniform_int(starts.size())];
    s.agent.dir = static_cast<Direction>(rng.uniform_int(4));

    if (task_success(s) || !solvable(s)) continue;
    return s;
  }
}

bool task_success(const WorldState& state) {
  switch (state.task) {
    case Task::GoTo: {
      const Cell f = state.facing_cell();
      return in_room(f) && state.at(f) && *state.at(f) == state.target;
    }
    case Task::PickUp:
      return state.carried && *state.carried == state.target;
    case Task::EscapeFrom: {
      const auto t = state.target_cell();
      return t && manhattan(state.agent.cell, *t) >= kEscapeThreshold;
    }
  }
  return false;
}

bool is_done(const WorldState& state) {
  return state.steps_taken >= state.max_steps || task_success(state);
}

std::pair<WorldState, Outcome> step(const WorldState& state, Action action) {
  if (is_done(state)) {
    throw UsageError("step: episode already finished");
  }
  WorldState next = state;
  const Cell front = next.facing_cell();
  switch (action) {
    case Action::Left:
      next.agent.dir = turn_left(next.agent.dir);
      break;
    case Action::Right:
      next.agent.dir = turn_right(next.agent.dir);
      break;
    case Action::Forward:
      if (in_room(front) && !next.at(front)) next.agent.cell = front;
      break;
    case Action::Pickup:
      if (in_room(front) && next.at(front) && !next.carried) {
        next.carried = next.at(front);
        next.at(front).reset();
      }
      break;
    case Action::Drop:
      if (in_room(front) && !next.at(front) && next.carried) {
        next.at(front) = next.carried;
        next.carried.reset();
      }
      break;
    case Action::Open:
      break;
  }
  ++next.steps_taken;
  Outcome out;
  out.success = task_success(next);
  out.done = out.success || next.steps_taken >= next.max_steps;
  return {std::move(next), out};
}

namespace {

using Glyph = std::array<std::array<bool, kTilePixels>, kTilePixels>;

constexpr Glyph make_glyph(ObjectKind kind) {
  Glyph g{};
  for (int y = 0; y < kTilePixels; ++y) {
    for (int x = 0; x < kTilePixels; ++x) {
      switch (kind) {
        case ObjectKind::Ball:
          g[y][x] = (y - 4) * (y - 4) + (x - 4) * (x - 4) <= 9;
          break;
        case ObjectKind::Box:
          g[y][x] = y >= 1 && y <= 7 && x >= 1 && x <= 7;
          break;
        case ObjectKind::Key:
          g[y][x] = (x >= 2 && x <= 4 && y >= 1 && y <= 7) ||
                    (x >= 5 && x <= 7 && y >= 1 && y <= 3);
          break;
      }
    }
  }
  return g;
}

constexpr std::array<Glyph, kObjectKindCount> kGlyphs{
    make_glyph(ObjectKind::Ball), make_glyph(ObjectKind::Box), make_glyph(ObjectKind::Key)};

void paint(Observation& img, int py, int px, Rgb c) {
  const std::size_t at = (static_cast<std::size_t>(py) * kImageSize + px) * kImageChannels;
  img[at] = c.r;
  img[at + 1] = c.g;
  img[at + 2] = c.b;
}

}  // namespace

Observation render(const WorldState& state) {
  Observation img{};
  for (int py = 0; py < kImageSize; ++py) {
    for (int px = 0; px < kImageSize; ++px) paint(img, py, px, kWallRgb);
  }
  const Cell fwd = offset(state.agent.dir);
  const Cell right = offset(turn_right(state.agent.dir));
  constexpr int kAgentViewRow = kViewCells - 1;
  constexpr int kAgentViewCol = kViewCells / 2;
  for (int vr = 0; vr < kViewCells; ++vr) {
    const int ahead = kAgentViewRow - vr;
    for (int vc = 0; vc < kViewCells; ++vc) {
      const int lateral = vc - kAgentViewCol;
      const Cell w{state.agent.cell.row + ahead * fwd.row + lateral * right.row,
                   state.agent.cell.col + ahead * fwd.col + lateral * right.col};
      if (!in_room(w)) continue;
      const auto& obj = state.at(w);
      const Glyph* glyph = obj ? &kGlyphs[static_cast<int>(obj->kind)] : nullptr;
      const Rgb ink = obj ? palette(obj->color) : kFloorRgb;
      for (int y = 0; y < kTilePixels; ++y) {
        for (int x = 0; x < kTilePixels; ++x) {
          const bool on = glyph && (*glyph)[y][x];
          paint(img, vr * kTilePixels + y, vc * kTilePixels + x, on ? ink : kFloorRgb);
        }
      }
    }
  }
  return img;
}

}  // namespace alm::env
