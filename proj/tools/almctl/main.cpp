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

// almctl: command-line driver for the ALM alignment pipeline.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "commands.hpp"

namespace {

using alm::cli::RunConfig;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool deterministic = false;
  std::optional<std::string> out;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> updates;
  std::optional<std::size_t> replications;
  std::optional<std::size_t> k;
  std::optional<std::size_t> n_perm;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--deterministic", o.deterministic, "single-threaded, bitwise reproducible");
  sub->add_option("--out", o.out, "output directory");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : alm::cli::load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.deterministic) c.deterministic = true;
  if (o.out) c.out = *o.out;
  if (o.replications) c.replications = *o.replications;
  if (o.updates) c.model.n_updates = *o.updates;
  if (o.k) {
    c.report.heatmap_k = *o.k;
    c.report.permutation_k = *o.k;
  }
  if (o.n_perm) c.report.n_perm = *o.n_perm;
  c.model.validate();
  return c;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("almctl");
  logger->set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("ALIGN_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honour it when asked for.
    if (parsed != spdlog::level::off || std::string_view(level) == "off") spdlog::set_level(parsed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"almctl: train an action-language model and compare its sentence embeddings"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen", "generate the demonstration dataset");
  auto* train = app.add_subcommand("train", "train the model on the generated dataset");
  auto* eval = app.add_subcommand("eval", "roll out trained checkpoints in fresh environments");
  auto* extract = app.add_subcommand("extract", "write sentence embeddings of trained checkpoints");
  auto* baseline = app.add_subcommand("baseline", "write RANDOM baseline embeddings");
  auto* align = app.add_subcommand("align", "compare embedding sets and save the report");
  auto* report = app.add_subcommand("report", "render the saved report as CSV tables");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the model gradients");
  auto* show = app.add_subcommand("config", "print the resolved run configuration");

  for (auto* sub : {gen, train, eval, extract, baseline, align, report, gradcheck, show}) add_common(sub, o);
  gen->add_option("--episodes", o.episodes, "number of demonstration episodes");
  for (auto* sub : {train, eval, extract, align, report, show}) {
    sub->add_option("--replications", o.replications, "independent training replications")
        ->check(CLI::PositiveNumber);
  }
  train->add_option("--updates", o.updates, "gradient updates per replication")->check(CLI::PositiveNumber);
  eval->add_option("--episodes", o.episodes, "evaluation episodes per replication");
  align->add_option("--k", o.k, "neighbourhood size for the heatmap and permutation test")
      ->check(CLI::PositiveNumber);
  align->add_option("--n-perm", o.n_perm, "permutations per test")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : alm::cli::kUsage;
  }

  try {
    RunConfig c = resolve(o);
    if (o.episodes) (gen->parsed() ? c.dataset_episodes : c.eval_episodes) = *o.episodes;

    if (gen->parsed()) alm::cli::cmd_gen(c);
    if (train->parsed()) alm::cli::cmd_train(c);
    if (eval->parsed()) alm::cli::cmd_eval(c);
    if (extract->parsed()) alm::cli::cmd_extract(c);
    if (baseline->parsed()) alm::cli::cmd_baseline(c);
    if (align->parsed()) alm::cli::cmd_align(c);
    if (report->parsed()) alm::cli::cmd_report(c);
    if (gradcheck->parsed()) alm::cli::cmd_gradcheck(c);
    if (show->parsed()) std::cout << alm::cli::run_config_to_json(c);
    return alm::cli::kOk;
  } catch (const alm::cli::StageError& e) {
    spdlog::error("{}", e.what());
    return e.code();
  } catch (const alm::UsageError& e) {
    spdlog::error("usage: {}", e.what());
    return alm::cli::kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return alm::cli::kFailure;
  }
}
