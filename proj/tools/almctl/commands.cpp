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

#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "alm/data.hpp"
#include "alm/embedio.hpp"
#include "alm/nn/checkpoint.hpp"
#include "alm/rng.hpp"

namespace alm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kFaultFloor = 0.1;

[[noreturn]] void bad(const std::string& where, const std::string& why) {
  throw UsageError("config field '" + where + "': " + why);
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) bad(where.empty() ? "<root>" : where, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) bad(where.empty() ? key : where + "." + key, "unknown key");
  }
}

template <typename V>
void take(const json& j, const char* key, const std::string& where, V& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string path = where.empty() ? key : where + "." + key;
  if constexpr (std::is_same_v<V, bool>) {
    if (!it->is_boolean()) bad(path, "expected true or false");
  } else if constexpr (std::is_unsigned_v<V>) {
    if (!it->is_number_unsigned()) bad(path, "expected a non-negative integer");
  } else if constexpr (std::is_same_v<V, std::string>) {
    if (!it->is_string()) bad(path, "expected a string");
  }
  out = it->template get<V>();
}

void take_ks(const json& j, const std::string& path, std::vector<std::size_t>& out) {
  if (!j.is_array() || j.empty()) bad(path, "expected a non-empty array of integers");
  out.clear();
  for (const auto& v : j) {
    if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) bad(path, "entries must be positive integers");
    out.push_back(v.get<std::size_t>());
  }
}

// Writes text to path via a temporary sibling and a rename.
void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

const char* task_key(env::Task t) {
  switch (t) {
    case env::Task::GoTo: return "go_to";
    case env::Task::PickUp: return "pick_up";
    case env::Task::EscapeFrom: return "escape_from";
  }
  return "unknown";
}

model::AlmConfig replica_config(const RunConfig& c, std::size_t r) {
  model::AlmConfig m = c.model;
  m.seed = seeds::replica(c.seed, r);
  return m;
}

// Runs body and rewraps any library failure as a StageError carrying `code`.
template <typename Body>
auto stage(ExitCode code, const char* name, Body&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(code, std::string(name) + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  const json j = json::parse(text, nullptr, false, true);
  if (j.is_discarded()) throw UsageError("run config is not valid JSON");
  reject_unknown(j, "", {"seed", "threads", "deterministic", "out", "dataset", "model", "train", "eval", "baseline",
                         "align"});
  RunConfig c;
  take(j, "seed", "", c.seed);
  take(j, "threads", "", c.threads);
  if (c.threads == 0) bad("threads", "must be at least 1");
  take(j, "deterministic", "", c.deterministic);
  if (const auto it = j.find("out"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>().empty()) bad("out", "expected a directory path");
    c.out = it->get<std::string>();
  }
  if (const auto it = j.find("dataset"); it != j.end()) {
    reject_unknown(*it, "dataset", {"episodes"});
    take(*it, "episodes", "dataset", c.dataset_episodes);
  }
  if (const auto it = j.find("model"); it != j.end()) {
    if (!it->is_object()) bad("model", "expected an object");
    if (it->contains("seed")) bad("model.seed", "model seeds are derived from the master seed; set 'seed' instead");
    try {
      c.model = model::config_from_json(it->dump());
    } catch (const model::ConfigError& e) {
      throw UsageError(std::string("in 'model': ") + e.what());
    }
  }
  if (const auto it = j.find("train"); it != j.end()) {
    reject_unknown(*it, "train", {"replications"});
    take(*it, "replications", "train", c.replications);
    if (c.replications == 0) bad("train.replications", "must be at least 1");
  }
  if (const auto it = j.find("eval"); it != j.end()) {
    reject_unknown(*it, "eval", {"episodes"});
    take(*it, "episodes", "eval", c.eval_episodes);
  }
  if (const auto it = j.find("baseline"); it != j.end()) {
    reject_unknown(*it, "baseline", {"random_sets", "dim"});
    take(*it, "random_sets", "baseline", c.random_sets);
    take(*it, "dim", "baseline", c.random_dim);
    if (c.random_dim == 0) bad("baseline.dim", "must be positive");
  }
  if (const auto it = j.find("align"); it != j.end()) {
    reject_unknown(*it, "align", {"embeddings", "ks", "heatmap_k", "permutation_k", "n_perm"});
    if (const auto e = it->find("embeddings"); e != it->end()) {
      if (!e->is_array()) bad("align.embeddings", "expected an array of file paths");
      for (const auto& p : *e) {
        if (!p.is_string()) bad("align.embeddings", "entries must be strings");
        fs::path path = p.get<std::string>();
        c.embeddings.push_back(path.is_relative() && !base_dir.empty() ? base_dir / path : path);
      }
    }
    if (const auto k = it->find("ks"); k != it->end()) take_ks(*k, "align.ks", c.report.ks);
    take(*it, "heatmap_k", "align", c.report.heatmap_k);
    take(*it, "permutation_k", "align", c.report.permutation_k);
    take(*it, "n_perm", "align", c.report.n_perm);
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  try {
    return parse_run_config(text, path.parent_path());
  } catch (const UsageError& e) {
    throw UsageError("'" + path.string() + "': " + e.what());
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json model = json::parse(model::config_to_json(c.model));
  model.erase("seed");
  std::vector<std::string> emb;
  for (const auto& p : c.embeddings) emb.push_back(p.string());
  const json j = {
      {"seed", c.seed},
      {"threads", c.threads},
      {"deterministic", c.deterministic},
      {"out", c.out.string()},
      {"dataset", {{"episodes", c.dataset_episodes}}},
      {"model", model},
      {"train", {{"replications", c.replications}}},
      {"eval", {{"episodes", c.eval_episodes}}},
      {"baseline", {{"random_sets", c.random_sets}, {"dim", c.random_dim}}},
      {"align",
       {{"embeddings", emb},
        {"ks", c.report.ks},
        {"heatmap_k", c.report.heatmap_k},
        {"permutation_k", c.report.permutation_k},
        {"n_perm", c.report.n_perm}}},
  };
  return j.dump(2) + "\n";
}

namespace seeds {
std::uint64_t dataset(std::uint64_t master) { return split_seed(master, 1); }
std::uint64_t replica(std::uint64_t master, std::size_t r) { return split_seed(split_seed(master, 2), r); }
std::uint64_t evaluation(std::uint64_t master) { return split_seed(master, 3); }
std::uint64_t random_set(std::uint64_t master, std::size_t i) { return split_seed(split_seed(master, 4), i); }
std::uint64_t permutation(std::uint64_t master) { return split_seed(master, 5); }
}  // namespace seeds

namespace paths {
fs::path dataset(const RunConfig& c) { return c.out / "dataset.almd"; }
fs::path replica_dir(const RunConfig& c, std::size_t r) { return c.out / ("replica_" + std::to_string(r)); }
fs::path checkpoint(const RunConfig& c, std::size_t r) { return replica_dir(c, r) / "model.almw"; }
fs::path curve(const RunConfig& c, std::size_t r) { return replica_dir(c, r) / "curve.csv"; }
fs::path eval(const RunConfig& c, std::size_t r) { return replica_dir(c, r) / "eval.json"; }
fs::path embeddings(const RunConfig& c, std::size_t r) { return replica_dir(c, r) / "alm.embjson"; }
fs::path random_set(const RunConfig& c, std::size_t i) {
  return c.out / "baseline" / ("random_" + std::to_string(i) + ".embjson");
}
fs::path eval_summary(const RunConfig& c) { return c.out / "eval.json"; }
fs::path report_json(const RunConfig& c) { return c.out / "align" / "report.json"; }
fs::path report_dir(const RunConfig& c) { return c.out / "report"; }
fs::path gradcheck(const RunConfig& c) { return c.out / "gradcheck.json"; }
}  // namespace paths

// ---------------------------------------------------------------------------

void cmd_gen(const RunConfig& c) {
  stage(kGen, "gen", [&] {
    const auto start = std::chrono::steady_clock::now();
    spdlog::info("gen: {} episodes, dataset seed {:#x}, {} thread(s)", c.dataset_episodes, seeds::dataset(c.seed),
                 c.effective_threads());
    const auto ds = data::generate_dataset(c.dataset_episodes, seeds::dataset(c.seed), c.effective_threads());
    const auto path = paths::dataset(c);
    ensure_parent(path);
    data::save_dataset(ds, path);
    spdlog::info("gen: wrote {} ({} step samples) in {:.1f}s", path.string(), ds.sample_count(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  });
}

std::vector<std::vector<model::CurvePoint>> cmd_train(const RunConfig& c) {
  return stage(kTrain, "train", [&] {
    const auto ds_path = paths::dataset(c);
    if (!fs::exists(ds_path)) {
      throw StageError(kTrain, "train: dataset '" + ds_path.string() + "' not found; run 'almctl gen' first");
    }
    const auto ds = data::load_dataset(ds_path);
    spdlog::info("train: {} episodes / {} samples from {}", ds.episodes.size(), ds.sample_count(), ds_path.string());
    std::vector<std::vector<model::CurvePoint>> curves;
    for (std::size_t r = 0; r < c.replications; ++r) {
      const auto cfg = replica_config(c, r);
      const auto start = std::chrono::steady_clock::now();
      model::TrainOptions opts;
      opts.threads = c.effective_threads();
      opts.deterministic = c.deterministic;
      opts.on_point = [&](const model::CurvePoint& p) {
        spdlog::info("train[{}]: update {:>6}/{} loss {:.4f} holdout acc {:.4f} ({:.0f}s)", r, p.update,
                     cfg.n_updates, p.loss, p.holdout_accuracy,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      };
      auto result = model::train(ds, cfg, opts);
      model::AlmNet<float> net(cfg);
      net.load_values(result.params);
      const auto ckpt = paths::checkpoint(c, r);
      ensure_parent(ckpt);
      model::save_model(ckpt, net);
      write_text(paths::curve(c, r), model::curve_to_csv(result.curve));
      spdlog::info("train[{}]: wrote {}", r, ckpt.string());
      curves.push_back(std::move(result.curve));
    }
    return curves;
  });
}

std::string eval_to_json(const model::EvalResult& result, std::size_t replica) {
  json tasks = json::object();
  for (int t = 0; t < env::kTaskCount; ++t) {
    const auto& s = result.tasks[static_cast<std::size_t>(t)];
    tasks[task_key(static_cast<env::Task>(t))] = {
        {"episodes", s.episodes}, {"successes", s.successes}, {"rate", s.rate()}};
  }
  return json{{"replica", replica}, {"episodes", result.total_episodes()}, {"tasks", tasks}}.dump(2) + "\n";
}

std::vector<model::EvalResult> cmd_eval(const RunConfig& c) {
  return stage(kEval, "eval", [&] {
    std::vector<model::EvalResult> results;
    json summary = json::array();
    for (std::size_t r = 0; r < c.replications; ++r) {
      const auto ckpt = paths::checkpoint(c, r);
      if (!fs::exists(ckpt)) {
        throw StageError(kEval, "eval: checkpoint '" + ckpt.string() + "' not found; run 'almctl train' first");
      }
      const auto net = model::load_model(ckpt);
      const auto res = model::evaluate(net, c.eval_episodes, seeds::evaluation(c.seed), c.effective_threads());
      spdlog::info("eval[{}]: go_to {:.3f}  pick_up {:.3f}  escape_from {:.3f}  ({} episodes)", r,
                   res.tasks[0].rate(), res.tasks[1].rate(), res.tasks[2].rate(), res.total_episodes());
      const auto text = eval_to_json(res, r);
      write_text(paths::eval(c, r), text);
      summary.push_back(json::parse(text));
      results.push_back(res);
    }
    write_text(paths::eval_summary(c), summary.dump(2) + "\n");
    return results;
  });
}

void cmd_extract(const RunConfig& c) {
  stage(kExtract, "extract", [&] {
    for (std::size_t r = 0; r < c.replications; ++r) {
      const auto ckpt = paths::checkpoint(c, r);
      if (!fs::exists(ckpt)) {
        throw StageError(kExtract, "extract: checkpoint '" + ckpt.string() + "' not found; run 'almctl train' first");
      }
      const auto set = model::extract_embeddings(model::load_model(ckpt));
      const auto path = paths::embeddings(c, r);
      ensure_parent(path);
      embed::save_embjson(set, path);
      spdlog::info("extract[{}]: wrote {} ({}x{})", r, path.string(), set.count(), set.dim());
    }
  });
}

namespace {

embed::EmbeddingSet make_random_set(const RunConfig& c, std::size_t i) {
  return embed::random_embeddings(lang::kInstructionCount, c.random_dim, seeds::random_set(c.seed, i));
}

}  // namespace

void cmd_baseline(const RunConfig& c) {
  stage(kBaseline, "baseline", [&] {
    for (std::size_t i = 0; i < c.random_sets; ++i) {
      const auto path = paths::random_set(c, i);
      ensure_parent(path);
      embed::save_embjson(make_random_set(c, i), path);
      spdlog::info("baseline: wrote {}", path.string());
    }
  });
}

align::AlignmentReport cmd_align(const RunConfig& c) {
  return stage(kAlign, "align", [&] {
    std::vector<embed::EmbeddingSet> sets;
    for (std::size_t r = 0; r < c.replications; ++r) {
      const auto path = paths::embeddings(c, r);
      if (!fs::exists(path)) {
        throw StageError(kAlign, "align: ALM embeddings '" + path.string() + "' not found; run 'almctl extract' first");
      }
      sets.push_back(embed::load_embjson(path));
    }
    std::size_t random_found = 0;
    for (std::size_t i = 0; i < c.random_sets; ++i) {
      const auto path = paths::random_set(c, i);
      if (!fs::exists(path)) continue;
      sets.push_back(embed::load_embjson(path));
      ++random_found;
    }
    if (random_found == 0) {
      spdlog::info("align: no RANDOM baseline files; generating {} in memory", std::max<std::size_t>(1, c.random_sets));
      for (std::size_t i = 0; i < std::max<std::size_t>(1, c.random_sets); ++i) sets.push_back(make_random_set(c, i));
    }
    for (const auto& path : c.embeddings) {
      sets.push_back(embed::load_embjson(path));
      spdlog::info("align: loaded {} ({}, dim {})", path.string(), sets.back().model_name, sets.back().dim());
    }
    align::ReportOptions opts = c.report;
    opts.seed = seeds::permutation(c.seed);
    opts.threads = c.effective_threads();
    const auto report = align::pairwise_report(sets, opts);
    write_text(paths::report_json(c), align::report_to_json(report));
    spdlog::info("align: {} sets, {} models; wrote {}", sets.size(), report.models.size(),
                 paths::report_json(c).string());
    return report;
  });
}

std::vector<fs::path> cmd_report(const RunConfig& c) {
  return stage(kReport, "report", [&] {
    const auto path = paths::report_json(c);
    if (!fs::exists(path)) {
      throw StageError(kReport, "report: '" + path.string() + "' not found; run 'almctl align' first");
    }
    const auto report = align::report_from_json(read_text(path));
    auto written = align::write_report_csvs(report, paths::report_dir(c));
    for (const auto& p : written) spdlog::info("report: wrote {}", p.string());
    return written;
  });
}

nn::GradCheckReport cmd_gradcheck(const RunConfig& c) {
  return stage(kGradcheck, "gradcheck", [&] {
    model::ModelGradCheckOptions opts;
    opts.seed = c.seed;
    const auto clean = model::model_grad_check(opts);
    opts.inject_fault = true;
    const auto faulty = model::model_grad_check(opts);
    spdlog::info("gradcheck: max relative error {:.3e} at {}[{}] over {} coordinates", clean.max_rel_error,
                 clean.worst_param, clean.worst_index, clean.coords_checked);
    spdlog::info("gradcheck: with an injected backward fault {:.3e}", faulty.max_rel_error);
    const json j = {
        {"max_rel_error", clean.max_rel_error}, {"worst_param", clean.worst_param},
        {"worst_index", clean.worst_index},     {"coords_checked", clean.coords_checked},
        {"fault_max_rel_error", faulty.max_rel_error}, {"tolerance", kGradTolerance},
    };
    write_text(paths::gradcheck(c), j.dump(2) + "\n");
    if (!(clean.max_rel_error < kGradTolerance)) {
      throw StageError(kGradcheck, "gradcheck: max relative error " + std::to_string(clean.max_rel_error) +
                                       " at " + clean.worst_param + " exceeds " + std::to_string(kGradTolerance));
    }
    if (!(faulty.max_rel_error > kFaultFloor)) {
      throw StageError(kGradcheck, "gradcheck: injected fault went unnoticed (max relative error " +
                                       std::to_string(faulty.max_rel_error) + ")");
    }
    return clean;
  });
}

}  // namespace alm::cli
