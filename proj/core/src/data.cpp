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

#include "alm/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "alm/oracle.hpp"
#include "alm/parallel.hpp"
#include "alm/rng.hpp"
#include "detail/binio.hpp"

namespace alm::data {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'M', 'D'};

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::string describe(std::uint32_t instruction, std::uint64_t seed) {
  return "instruction " + std::to_string(instruction) + " ('" +
         lang::instructions().at(instruction).text + "'), seed " + std::to_string(seed);
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"version", m.version},
          {"master_seed", m.master_seed},
          {"episode_count", m.episode_count},
          {"per_instruction_counts", m.per_instruction_counts},
          {"total_step_samples", m.total_step_samples},
          {"render_config_hash", m.render_config_hash}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<std::uint32_t>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.episode_count = j.at("episode_count").get<std::uint64_t>();
    m.per_instruction_counts = j.at("per_instruction_counts").get<std::vector<std::uint32_t>>();
    m.total_step_samples = j.at("total_step_samples").get<std::uint64_t>();
    m.render_config_hash = j.at("render_config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(DatasetError::Kind::Manifest, std::string("manifest: ") + e.what());
  }
  return m;
}

DatasetManifest build_manifest(const std::vector<DemoEpisode>& episodes, std::uint64_t master_seed) {
  DatasetManifest m;
  m.master_seed = master_seed;
  m.episode_count = episodes.size();
  m.per_instruction_counts.assign(lang::kInstructionCount, 0);
  for (const auto& ep : episodes) {
    ++m.per_instruction_counts.at(ep.instruction_index);
    m.total_step_samples += ep.size();
  }
  m.render_config_hash = render_config_hash();
  return m;
}

}  // namespace

DatasetError::DatasetError(Kind kind, std::string what, std::optional<std::uint64_t> episode)
    : Error(std::move(what)), kind_(kind), episode_(episode) {}

std::string render_config_hash() {
  detail::ByteWriter w;
  w.put_string("tile=9;view=7;image=64;");
  for (const auto c : {env::kFloorRgb, env::kWallRgb}) {
    w.put(c.r), w.put(c.g), w.put(c.b);
  }
  for (int c = 0; c < env::kColorCount; ++c) {
    const auto rgb = env::palette(static_cast<env::Color>(c));
    w.put(rgb.r), w.put(rgb.g), w.put(rgb.b);
  }
  // One object of each kind in a row in front of a north-facing agent.
  env::WorldState probe;
  probe.agent = {{5, 2}, env::Direction::N};
  probe.at({4, 1}) = env::Object{env::ObjectKind::Ball, env::Color::Red};
  probe.at({4, 2}) = env::Object{env::ObjectKind::Box, env::Color::Green};
  probe.at({4, 3}) = env::Object{env::ObjectKind::Key, env::Color::Purple};
  const auto img = env::render(probe);
  w.put_bytes(img);
  return hex32(detail::crc32_of(w.bytes()));
}

std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t episode) {
  return split_seed(master_seed, episode);
}

DemoEpisode record_episode(std::uint32_t instruction_index, std::uint64_t world_seed) {
  const auto& ins = lang::instructions().at(instruction_index);
  env::WorldState state = env::generate_world(ins.task(), ins.target(), world_seed);
  oracle::Plan plan;
  try {
    plan = oracle::plan(state);
  } catch (const oracle::PlanningError& e) {
    throw DatasetError(DatasetError::Kind::Planner,
                       std::string(e.what()) + " for " + describe(instruction_index, world_seed));
  }
  DemoEpisode ep;
  ep.instruction_index = instruction_index;
  ep.world_seed = world_seed;
  ep.observations.reserve(plan.actions.size());
  ep.actions.reserve(plan.actions.size());
  env::Outcome outcome;
  for (const auto a : plan.actions) {
    if (outcome.done) break;
    ep.observations.push_back(env::render(state));
    ep.actions.push_back(a);
    std::tie(state, outcome) = env::step(state, a);
  }
  if (!outcome.success || ep.actions.size() != plan.actions.size()) {
    throw DatasetError(DatasetError::Kind::Planner,
                       "demonstration did not succeed for " + describe(instruction_index, world_seed));
  }
  return ep;
}

Dataset generate_dataset(std::uint64_t n_episodes, std::uint64_t master_seed, std::size_t threads) {
  if (n_episodes < static_cast<std::uint64_t>(lang::kInstructionCount)) {
    throw ContractViolation("generate_dataset: need at least 108 episodes");
  }
  Dataset ds;
  ds.episodes.resize(n_episodes);
  parallel_chunks(n_episodes, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t e = begin; e < end; ++e) {
      ds.episodes[e] = record_episode(instruction_for_episode(e), episode_seed(master_seed, e));
    }
  });
  ds.manifest = build_manifest(ds.episodes, master_seed);
  return ds;
}

bool verify_episode(const DemoEpisode& episode) {
  if (episode.actions.empty() || episode.observations.size() != episode.actions.size() ||
      episode.instruction_index >= static_cast<std::uint32_t>(lang::kInstructionCount)) {
    return false;
  }
  const auto& ins = lang::instructions()[episode.instruction_index];
  env::WorldState state = env::generate_world(ins.task(), ins.target(), episode.world_seed);
  env::Outcome outcome;
  for (std::size_t i = 0; i < episode.size(); ++i) {
    if (outcome.done || env::render(state) != episode.observations[i]) return false;
    std::tie(state, outcome) = env::step(state, episode.actions[i]);
  }
  return outcome.success;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  detail::write_atomically(path, [&](std::ostream& out) {
    detail::ByteWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
    w.put(kDatasetVersion);
    const std::string manifest = manifest_to_json(dataset.manifest).dump();
    w.put(static_cast<std::uint32_t>(manifest.size()));
    w.put_string(manifest);
    detail::write_all(out, w.bytes());
    for (const auto& ep : dataset.episodes) {
      w.clear();
      w.put(ep.instruction_index);
      w.put(ep.world_seed);
      w.put(static_cast<std::uint32_t>(ep.size()));
      for (std::size_t i = 0; i < ep.size(); ++i) {
        w.put_bytes(ep.observations[i]);
        w.put(static_cast<std::uint8_t>(ep.actions[i]));
      }
      w.put(detail::crc32_of(w.bytes()));
      detail::write_all(out, w.bytes());
    }
  });
}

Dataset load_dataset(const std::filesystem::path& path) {
  using Kind = DatasetError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(Kind::Io, "cannot open dataset '" + path.string() + "'");
  detail::StreamReader r(in);

  char magic[4];
  if (!r.read_bytes(reinterpret_cast<std::uint8_t*>(magic), 4)) {
    throw DatasetError(Kind::Truncated, "dataset truncated in header");
  }
  if (!std::equal(magic, magic + 4, kMagic)) {
    throw DatasetError(Kind::BadMagic, "not an ALMD dataset: bad magic");
  }
  std::uint32_t version = 0;
  std::uint32_t manifest_len = 0;
  if (!r.read(version)) throw DatasetError(Kind::Truncated, "dataset truncated in header");
  if (version != kDatasetVersion) {
    throw DatasetError(Kind::VersionMismatch, "unsupported dataset version " + std::to_string(version) +
                                                  " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  if (!r.read(manifest_len)) throw DatasetError(Kind::Truncated, "dataset truncated in header");
  std::string manifest_text(manifest_len, '\0');
  if (!r.read_bytes(reinterpret_cast<std::uint8_t*>(manifest_text.data()), manifest_len)) {
    throw DatasetError(Kind::Truncated, "dataset truncated in manifest");
  }
  nlohmann::json mj = nlohmann::json::parse(manifest_text, nullptr, false);
  if (mj.is_discarded()) throw DatasetError(Kind::Manifest, "manifest is not valid JSON");

  Dataset ds;
  ds.manifest = manifest_from_json(mj);
  if (ds.manifest.per_instruction_counts.size() != static_cast<std::size_t>(lang::kInstructionCount)) {
    throw DatasetError(Kind::Manifest, "manifest: per_instruction_counts must have 108 entries");
  }

  ds.episodes.resize(ds.manifest.episode_count);
  detail::ByteWriter record;
  for (std::uint64_t e = 0; e < ds.manifest.episode_count; ++e) {
    auto& ep = ds.episodes[e];
    std::uint32_t n_steps = 0;
    const auto truncated = [&] {
      return DatasetError(Kind::Truncated, "dataset truncated in episode " + std::to_string(e), e);
    };
    if (!r.read(ep.instruction_index) || !r.read(ep.world_seed) || !r.read(n_steps)) throw truncated();
    if (ep.instruction_index >= static_cast<std::uint32_t>(lang::kInstructionCount)) {
      throw DatasetError(Kind::Manifest, "episode " + std::to_string(e) + ": instruction index out of range", e);
    }
    record.clear();
    record.put(ep.instruction_index);
    record.put(ep.world_seed);
    record.put(n_steps);
    ep.observations.resize(n_steps);
    ep.actions.resize(n_steps);
    for (std::uint32_t s = 0; s < n_steps; ++s) {
      std::uint8_t action = 0;
      if (!r.read_bytes(ep.observations[s].data(), env::kObservationBytes) || !r.read(action)) {
        throw truncated();
      }
      record.put_bytes(ep.observations[s]);
      record.put(action);
      ep.actions[s] = static_cast<env::Action>(action);
    }
    std::uint32_t stored_crc = 0;
    if (!r.read(stored_crc)) throw truncated();
    if (stored_crc != detail::crc32_of(record.bytes())) {
      throw DatasetError(Kind::Checksum, "checksum mismatch in episode " + std::to_string(e), e);
    }
    for (const auto a : ep.actions) {
      if (static_cast<int>(a) >= env::kActionCount) {
        throw DatasetError(Kind::Manifest, "episode " + std::to_string(e) + ": action code out of range", e);
      }
    }
  }
  if (!r.at_eof()) throw DatasetError(Kind::Manifest, "trailing bytes after the last episode");

  const DatasetManifest recount = build_manifest(ds.episodes, ds.manifest.master_seed);
  if (recount.per_instruction_counts != ds.manifest.per_instruction_counts) {
    throw DatasetError(Kind::Manifest, "manifest per-instruction counts disagree with the episodes");
  }
  if (recount.total_step_samples != ds.manifest.total_step_samples) {
    throw DatasetError(Kind::Manifest, "manifest total_step_samples disagrees with the episodes");
  }
  return ds;
}

void decode_observation(const env::Observation& obs, float* dst) {
  constexpr float kScale = 1.0f / 255.0f;
  for (std::size_t i = 0; i < obs.size(); ++i) dst[i] = static_cast<float>(obs[i]) * kScale;
}

SampleStream::SampleStream(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed)
    : dataset_(&dataset), batch_size_(batch_size) {
  if (batch_size == 0) throw ContractViolation("iter_samples: batch_size must be >= 1");
  order_.reserve(dataset.sample_count());
  for (std::size_t e = 0; e < dataset.episodes.size(); ++e) {
    for (std::size_t s = 0; s < dataset.episodes[e].size(); ++s) {
      order_.push_back({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(s)});
    }
  }
  Rng rng(epoch_seed);
  rng.shuffle(std::span<SampleRef>(order_));
}

bool SampleStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  batch.size = n;
  batch.observations.resize(n * env::kObservationBytes);
  batch.instructions.resize(n);
  batch.actions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SampleRef ref = order_[cursor_ + i];
    const auto& ep = dataset_->episodes[ref.episode];
    decode_observation(ep.observations[ref.step], batch.observations.data() + i * env::kObservationBytes);
    batch.instructions[i] = ep.instruction_index;
    batch.actions[i] = static_cast<std::uint8_t>(ep.actions[ref.step]);
  }
  cursor_ += n;
  return true;
}

SampleStream iter_samples(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed) {
  return SampleStream(dataset, batch_size, epoch_seed);
}

}  // namespace alm::data
