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
#include <optional>
#include <string_view>
#include <utility>

namespace alm::env {

inline constexpr int kRoomSize = 6;
inline constexpr int kCellCount = kRoomSize * kRoomSize;
inline constexpr int kViewCells = 7;
inline constexpr int kTilePixels = 9;
inline constexpr int kImageSize = 64;
inline constexpr int kImageChannels = 3;
inline constexpr std::size_t kObservationBytes =
    std::size_t{kImageSize} * kImageSize * kImageChannels;
inline constexpr int kDefaultDistractors = 3;
inline constexpr std::uint32_t kDefaultMaxSteps = 64;
inline constexpr int kEscapeThreshold = 5;
inline constexpr int kEscapeStartRadius = 3;

enum class ObjectKind : std::uint8_t { Ball = 0, Box = 1, Key = 2 };
enum class Color : std::uint8_t { Red = 0, Green = 1, Blue = 2, Yellow = 3, Purple = 4, Grey = 5 };
enum class Action : std::uint8_t { Left = 0, Right = 1, Forward = 2, Pickup = 3, Drop = 4, Open = 5 };
enum class Direction : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };
enum class Task : std::uint8_t { GoTo = 0, PickUp = 1, EscapeFrom = 2 };

inline constexpr int kObjectKindCount = 3;
inline constexpr int kColorCount = 6;
inline constexpr int kActionCount = 6;
inline constexpr int kTaskCount = 3;

std::string_view to_string(ObjectKind kind);
std::string_view to_string(Color color);
std::string_view to_string(Action action);
std::string_view to_string(Task task);

struct Rgb {
  std::uint8_t r, g, b;
  friend constexpr bool operator==(const Rgb&, const Rgb&) = default;
};

inline constexpr Rgb kFloorRgb{0, 0, 0};
inline constexpr Rgb kWallRgb{96, 96, 96};
Rgb palette(Color color);

struct Cell {
  int row = 0;
  int col = 0;
  friend constexpr bool operator==(const Cell&, const Cell&) = default;
  friend constexpr auto operator<=>(const Cell&, const Cell&) = default;
};

struct Object {
  ObjectKind kind = ObjectKind::Ball;
  Color color = Color::Red;
  friend constexpr bool operator==(const Object&, const Object&) = default;
};

struct AgentPose {
  Cell cell;
  Direction dir = Direction::N;
  friend constexpr bool operator==(const AgentPose&, const AgentPose&) = default;
};

constexpr bool in_room(Cell c) {
  return c.row >= 0 && c.row < kRoomSize && c.col >= 0 && c.col < kRoomSize;
}

constexpr int cell_index(Cell c) { return c.row * kRoomSize + c.col; }
constexpr Cell cell_at(int index) { return {index / kRoomSize, index % kRoomSize}; }

// Unit offset of one step in direction d (rows grow southwards).
constexpr Cell offset(Direction d) {
  switch (d) {
    case Direction::N: return {-1, 0};
    case Direction::E: return {0, 1};
    case Direction::S: return {1, 0};
    case Direction::W: return {0, -1};
  }
  return {0, 0};
}

constexpr Cell neighbor(Cell c, Direction d) {
  const Cell o = offset(d);
  return {c.row + o.row, c.col + o.col};
}

constexpr Direction turn_left(Direction d) {
  return static_cast<Direction>((static_cast<int>(d) + 3) % 4);
}
constexpr Direction turn_right(Direction d) {
  return static_cast<Direction>((static_cast<int>(d) + 1) % 4);
}

constexpr int manhattan(Cell a, Cell b) {
  const int dr = a.row - b.row;
  const int dc = a.col - b.col;
  return (dr < 0 ? -dr : dr) + (dc < 0 ? -dc : dc);
}

struct WorldState {
  std::array<std::optional<Object>, kCellCount> objects{};
  AgentPose agent;
  std::optional<Object> carried;
  Task task = Task::GoTo;
  Object target;
  std::uint32_t steps_taken = 0;
  std::uint32_t max_steps = kDefaultMaxSteps;
  std::uint64_t seed = 0;

  const std::optional<Object>& at(Cell c) const { return objects[cell_index(c)]; }
  std::optional<Object>& at(Cell c) { return objects[cell_index(c)]; }
  Cell facing_cell() const { return neighbor(agent.cell, agent.dir); }
  // Cell holding the unique object equal to `target`, if it is on the grid.
  std::optional<Cell> target_cell() const;
  int object_count() const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct Outcome {
  bool done = false;
  bool success = false;
};

using Observation = std::array<std::uint8_t, kObservationBytes>;

struct GenerateOptions {
  int distractors = kDefaultDistractors;
  std::uint32_t max_steps = kDefaultMaxSteps;
};

// Builds a random solvable world for (task, target). Identical arguments give
// an identical state. Layouts whose goal is unreachable, or whose task is
// already satisfied before the first step, are redrawn from the same stream.
WorldState generate_world(Task task, Object target, std::uint64_t seed,
                          const GenerateOptions& options = {});

bool task_success(const WorldState& state);
bool is_done(const WorldState& state);

// Applies one action. Throws UsageError when the episode already finished.
std::pair<WorldState, Outcome> step(const WorldState& state, Action action);

// Egocentric 7x7-cell view, agent at the bottom-centre facing up.
Observation render(const WorldState& state);

// Cells reachable from the agent over object-free floor (agent cell included),
// as a 36-entry mask indexed by cell_index.
std::array<bool, kCellCount> reachable_cells(const WorldState& state);

// Interior cells that satisfy the task once the agent stands there (GoTo and
// PickUp: object-free cells 4-adjacent to the target; EscapeFrom: object-free
// cells at Manhattan distance >= threshold).
std::array<bool, kCellCount> goal_cells(const WorldState& state);

}  // namespace alm::env
