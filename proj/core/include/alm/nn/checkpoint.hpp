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
#include <string>

#include "alm/error.hpp"
#include "alm/nn/params.hpp"

namespace alm::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct Checkpoint {
  ParamSet<float> params;
  std::string config_json;
  std::string config_hash;
};

// Hex CRC32 of the serialized configuration.
std::string config_hash(const std::string& config_json);

// "ALMW" | u32 version | u32 header length | JSON header (names, shapes,
// precision, config_hash, config) | f32 payloads in header order | u32 CRC32
// of every preceding byte. Little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params,
                     const std::string& config_json);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace alm::nn
