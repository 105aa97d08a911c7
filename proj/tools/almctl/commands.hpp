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

#include "alm/align.hpp"
#include "alm/error.hpp"
#include "alm/model.hpp"

namespace alm::cli {

// Process exit codes. Each stage owns one so scripts can tell failures apart.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kGen = 10,
  kTrain = 11,
  kEval = 12,
  kExtract = 13,
  kBaseline = 14,
  kAlign = 15,
  kReport = 16,
  kGradcheck = 17,
};

// A failure inside one stage. `code` is the stage's exit code.
class StageError : public Error {
 public:
  StageError(ExitCode code, const std::string& what) : Error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;
  std::filesystem::path out = "runs/default";

  std::size_t dataset_episodes = 10000;
  model::AlmConfig model;  // model.seed is replaced per replication
  std::size_t replications = 1;
  std::size_t eval_episodes = 999;

  std::size_t random_sets = 1;
  std::size_t random_dim = 128;
  std::vector<std::filesystem::path> embeddings;  // extra embjson files for align
  align::ReportOptions report;

  std::size_t effective_threads() const { return deterministic ? 1 : threads; }
};

// Strict parse: unknown keys anywhere are rejected with their JSON path.
// Relative embedding paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

// Seeds for every stage derive from the master seed.
namespace seeds {
std::uint64_t dataset(std::uint64_t master);
std::uint64_t replica(std::uint64_t master, std::size_t replica);
std::uint64_t evaluation(std::uint64_t master);
std::uint64_t random_set(std::uint64_t master, std::size_t index);
std::uint64_t permutation(std::uint64_t master);
}  // namespace seeds

// Output layout under RunConfig::out.
namespace paths {
std::filesystem::path dataset(const RunConfig& c);
std::filesystem::path replica_dir(const RunConfig& c, std::size_t r);
std::filesystem::path checkpoint(const RunConfig& c, std::size_t r);
std::filesystem::path curve(const RunConfig& c, std::size_t r);
std::filesystem::path eval(const RunConfig& c, std::size_t r);
std::filesystem::path embeddings(const RunConfig& c, std::size_t r);
std::filesystem::path random_set(const RunConfig& c, std::size_t index);
std::filesystem::path eval_summary(const RunConfig& c);
std::filesystem::path report_json(const RunConfig& c);
std::filesystem::path report_dir(const RunConfig& c);
std::filesystem::path gradcheck(const RunConfig& c);
}  // namespace paths

void cmd_gen(const RunConfig& config);
std::vector<std::vector<model::CurvePoint>> cmd_train(const RunConfig& config);
std::vector<model::EvalResult> cmd_eval(const RunConfig& config);
void cmd_extract(const RunConfig& config);
void cmd_baseline(const RunConfig& config);
align::AlignmentReport cmd_align(const RunConfig& config);
std::vector<std::filesystem::path> cmd_report(const RunConfig& config);
nn::GradCheckReport cmd_gradcheck(const RunConfig& config);

std::string eval_to_json(const model::EvalResult& result, std::size_t replica);

}  // namespace alm::cli
