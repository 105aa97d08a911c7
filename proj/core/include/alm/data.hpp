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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alm/env.hpp"
#include "alm/error.hpp"
#include "alm/lang.hpp"

namespace alm::data {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DemoEpisode {
  std::uint32_t instruction_index = 0;
  std::uint64_t world_seed = 0;
  std::vector<env::Observation> observations;
  std::vector<env::Action> actions;

  std::size_t size() const { return actions.size(); }
  friend bool operator==(const DemoEpisode&, const DemoEpisode&) = default;
};

struct DatasetManifest {
  std::uint32_t version = kDatasetVersion;
  std::uint64_t master_seed = 0;
  std::uint64_t episode_count = 0;
  std::vector<std::uint32_t> per_instruction_counts;
  std::uint64_t total_step_samples = 0;
  std::string render_config_hash;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DemoEpisode> episodes;

  std::size_t sample_count() const { return manifest.total_step_samples; }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class DatasetError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Checksum, Manifest, Planner };
  DatasetError(Kind kind, std::string what, std::optional<std::uint64_t> episode = std::nullopt);
  Kind kind() const { return kind_; }
  std::optional<std::uint64_t> episode() const { return episode_; }

 private:
  Kind kind_;
  std::optional<std::uint64_t> episode_;
};

// Hex CRC32 of the palette and glyph bitmaps; changes whenever rendering does.
std::string render_config_hash();

// Instruction assigned to episode e under balanced round-robin allocation.
constexpr std::uint32_t instruction_for_episode(std::uint64_t e) {
  return static_cast<std::uint32_t>(e % lang::kInstructionCount);
}

// world_seed of episode e = split_seed(master_seed, e).
std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t episode);

// Rolls out the demonstrator once. Throws DatasetError(Planner) naming the
// instruction and seed when planning fails.
DemoEpisode record_episode(std::uint32_t instruction_index, std::uint64_t world_seed);

// Episode order and contents are independent of `threads`.
Dataset generate_dataset(std::uint64_t n_episodes, std::uint64_t master_seed,
                         std::size_t threads = 1);

// Replays the stored actions from the regenerated world and checks every
// stored observation and the final success.
bool verify_episode(const DemoEpisode& episode);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct SampleRef {
  std::uint32_t episode = 0;
  std::uint32_t step = 0;
};

struct Batch {
  std::size_t size = 0;
  std::vector<float> observations;  // size x 64 x 64 x 3, HWC, scaled to [0, 1]
  std::vector<std::uint32_t> instructions;
  std::vector<std::uint8_t> actions;
};

// One shuffled pass over every step-level triplet of the dataset.
class SampleStream {
 public:
  SampleStream(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed);

  // Fills `batch` with the next samples; false once the pass is exhausted.
  bool next(Batch& batch);
  const std::vector<SampleRef>& order() const { return order_; }

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::vector<SampleRef> order_;
  std::size_t cursor_ = 0;
};

SampleStream iter_samples(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed);

// Copies one observation into `dst` (12288 floats in [0, 1]).
void decode_observation(const env::Observation& obs, float* dst);

}  // namespace alm::data
