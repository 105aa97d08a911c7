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

#include "alm/nn/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "detail/binio.hpp"

namespace alm::nn {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'M', 'W'};

}  // namespace

std::string config_hash(const std::string& config_json) {
  const auto crc = detail::crc32_of(
      {reinterpret_cast<const std::uint8_t*>(config_json.data()), config_json.size()});
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params,
                     const std::string& config_json) {
  nlohmann::json header;
  header["names"] = nlohmann::json::array();
  header["shapes"] = nlohmann::json::array();
  for (const auto& p : params) {
    header["names"].push_back(p.name);
    header["shapes"].push_back(p.value.shape());
  }
  const auto config = nlohmann::json::parse(config_json);
  header["precision"] = "f32";
  header["config_hash"] = config_hash(config.dump());
  header["config"] = config;
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_string(text);
  for (const auto& p : params) {
    for (const float v : p.value.values()) w.put(v);
  }
  w.put(detail::crc32_of(w.bytes()));
  detail::write_atomically(path, [&](std::ostream& out) { detail::write_all(out, w.bytes()); });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw CheckpointError("checkpoint truncated");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin(), [](char a, std::uint8_t b) { return a == static_cast<char>(b); })) {
    throw CheckpointError("not an ALMW checkpoint: bad magic");
  }
  const auto read_u32 = [&](std::size_t at) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + at, 4);
    return v;
  };
  const std::size_t body = bytes.size() - 4;
  if (read_u32(body) != detail::crc32_of({bytes.data(), body})) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  if (read_u32(4) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(read_u32(4)));
  }
  const std::uint32_t header_len = read_u32(8);
  if (12 + static_cast<std::size_t>(header_len) > body) throw CheckpointError("checkpoint truncated in header");
  const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len, nullptr, false);
  if (header.is_discarded()) throw CheckpointError("checkpoint header is not valid JSON");

  Checkpoint ck;
  try {
    if (header.at("precision").get<std::string>() != "f32") throw CheckpointError("checkpoint precision must be f32");
    const auto names = header.at("names").get<std::vector<std::string>>();
    const auto shapes = header.at("shapes").get<std::vector<Shape>>();
    if (names.size() != shapes.size()) throw CheckpointError("checkpoint header: names/shapes length mismatch");
    std::size_t at = 12 + header_len;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto id = ck.params.add(names[i], shapes[i], Init::Zeros);
      auto& v = ck.params.value(id);
      const std::size_t n = v.size() * sizeof(float);
      if (at + n > body) throw CheckpointError("checkpoint truncated in tensor '" + names[i] + "'");
      std::memcpy(v.data(), bytes.data() + at, n);
      at += n;
    }
    if (at != body) throw CheckpointError("checkpoint has trailing bytes");
    ck.config_json = header.at("config").dump();
    ck.config_hash = header.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (ck.config_hash != config_hash(ck.config_json)) {
    throw CheckpointError("checkpoint config hash does not match its configuration");
  }
  return ck;
}

}  // namespace alm::nn
