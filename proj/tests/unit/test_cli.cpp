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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <nlohmann/json.hpp>

#include "alm/embedio.hpp"
#include "alm/nn/checkpoint.hpp"
#include "commands.hpp"
#include "temp_dir.hpp"

namespace alm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kFixtures = ALM_TEST_FIXTURES;

std::string tiny_config(const fs::path& out, bool with_fixtures) {
  json j = {{"seed", 3},
            {"threads", 2},
            {"deterministic", true},
            {"out", out.string()},
            {"dataset", {{"episodes", 108}}},
            {"model", {{"n_updates", 12}, {"eval_every", 6}, {"batch_size", 16}, {"holdout_episodes", 108}}},
            {"train", {{"replications", 2}}},
            {"eval", {{"episodes", 6}}},
            {"baseline", {{"random_sets", 2}}},
            {"align", {{"n_perm", 30}}}};
  if (with_fixtures) {
    j["align"]["embeddings"] = {kFixtures + "/decoder_a.embjson", kFixtures + "/decoder_b.embjson"};
  }
  return j.dump(2);
}

void run_pipeline(const RunConfig& c) {
  cmd_gen(c);
  cmd_train(c);
  cmd_eval(c);
  cmd_extract(c);
  cmd_baseline(c);
  cmd_align(c);
  cmd_report(c);
}

int run_almctl(const std::string& args) {
  const std::string command = std::string(ALMCTL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string header(const fs::path& csv) {
  const auto text = alm_test::slurp(csv);
  return text.substr(0, text.find('\n'));
}

// ---- configuration -------------------------------------------------------------

TEST(RunConfig, DefaultsAndOverrides) {
  const auto c = parse_run_config("{}");
  EXPECT_EQ(c.seed, 0u);
  EXPECT_EQ(c.dataset_episodes, 10000u);
  EXPECT_EQ(c.model.n_updates, 20000u);
  EXPECT_EQ(c.eval_episodes, 999u);
  EXPECT_EQ(c.report.ks, (std::vector<std::size_t>{1, 5, 10, 15}));
  EXPECT_EQ(c.report.n_perm, 1000u);
  const auto t = parse_run_config(tiny_config("x", false));
  EXPECT_EQ(t.model.batch_size, 16u);
  EXPECT_EQ(t.replications, 2u);
  EXPECT_EQ(t.effective_threads(), 1u);  // deterministic wins
  EXPECT_EQ(parse_run_config(run_config_to_json(t)).model, t.model);
}

TEST(RunConfig, ErrorsNameTheField) {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_run_config(text);
    } catch (const UsageError& e) {
      return e.what();
    }
    return "accepted";
  };
  EXPECT_NE(message(R"({"bogus": 1})").find("bogus"), std::string::npos);
  EXPECT_NE(message(R"({"align": {"n_prem": 5}})").find("align.n_prem"), std::string::npos);
  EXPECT_NE(message(R"({"seed": "zero"})").find("seed"), std::string::npos);
  EXPECT_NE(message(R"({"model": {"seed": 4}})").find("model.seed"), std::string::npos);
  EXPECT_NE(message(R"({"model": {"sa_heads": 3}})").find("sa_heads"), std::string::npos);
  EXPECT_NE(message(R"({"threads": 0})").find("threads"), std::string::npos);
  EXPECT_NE(message("{"), "accepted");
}

TEST(RunConfig, RelativeEmbeddingPathsResolveAgainstTheConfig) {
  alm_test::TempDir dir;
  alm_test::spit(dir / "c.json", R"({"align": {"embeddings": ["sub/x.embjson", "/abs/y.embjson"]}})");
  const auto c = load_run_config(dir / "c.json");
  ASSERT_EQ(c.embeddings.size(), 2u);
  EXPECT_EQ(c.embeddings[0], dir.path() / "sub/x.embjson");
  EXPECT_EQ(c.embeddings[1], fs::path("/abs/y.embjson"));
  EXPECT_THROW(load_run_config(dir / "missing.json"), UsageError);
}

TEST(Seeds, StagesDrawIndependentStreams) {
  std::set<std::uint64_t> all{seeds::dataset(0), seeds::evaluation(0), seeds::permutation(0)};
  for (std::size_t r = 0; r < 10; ++r) {
    all.insert(seeds::replica(0, r));
    all.insert(seeds::random_set(0, r));
  }
  EXPECT_EQ(all.size(), 23u);
  EXPECT_NE(seeds::dataset(0), seeds::dataset(1));
  EXPECT_EQ(seeds::replica(5, 2), seeds::replica(5, 2));
}

// ---- the pipeline ----------------------------------------------------------------

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new alm_test::TempDir;
    config_ = new RunConfig(parse_run_config(tiny_config(*dir_ / "run", true)));
    run_pipeline(*config_);
  }
  static void TearDownTestSuite() {
    delete config_;
    delete dir_;
  }
  static alm_test::TempDir* dir_;
  static RunConfig* config_;
};

alm_test::TempDir* Pipeline::dir_ = nullptr;
RunConfig* Pipeline::config_ = nullptr;

TEST_F(Pipeline, EveryArtifactExists) {
  const auto& c = *config_;
  EXPECT_TRUE(fs::exists(paths::dataset(c)));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_TRUE(fs::exists(paths::checkpoint(c, r)));
    EXPECT_TRUE(fs::exists(paths::curve(c, r)));
    EXPECT_TRUE(fs::exists(paths::eval(c, r)));
    EXPECT_TRUE(fs::exists(paths::embeddings(c, r)));
    EXPECT_TRUE(fs::exists(paths::random_set(c, r)));
  }
  EXPECT_TRUE(fs::exists(paths::eval_summary(c)));
  EXPECT_TRUE(fs::exists(paths::report_json(c)));
  for (const char* f : {"heatmap_p15.csv", "table_pk.csv", "procrustes.csv", "pvalues.csv"}) {
    EXPECT_TRUE(fs::exists(paths::report_dir(c) / f)) << f;
  }
}

TEST_F(Pipeline, CurveAndEvalFormats) {
  EXPECT_EQ(header(paths::curve(*config_, 0)), "update,loss,holdout_accuracy");
  const auto eval = json::parse(alm_test::slurp(paths::eval(*config_, 1)));
  EXPECT_EQ(eval.at("replica"), 1);
  EXPECT_EQ(eval.at("episodes"), 6);
  for (const char* task : {"go_to", "pick_up", "escape_from"}) {
    const auto& t = eval.at("tasks").at(task);
    EXPECT_EQ(t.at("episodes"), 2);
    EXPECT_GE(t.at("rate").get<double>(), 0.0);
    EXPECT_LE(t.at("rate").get<double>(), 1.0);
  }
  EXPECT_EQ(json::parse(alm_test::slurp(paths::eval_summary(*config_))).size(), 2u);
}

TEST_F(Pipeline, ExtractedEmbeddingsAreValid) {
  const auto alm = embed::load_embjson(paths::embeddings(*config_, 0));
  EXPECT_EQ(alm.model_name, "ALM");
  EXPECT_EQ(alm.count(), 108u);
  EXPECT_EQ(alm.dim(), 128u);
  const auto random = embed::load_embjson(paths::random_set(*config_, 1));
  EXPECT_EQ(random.model_name, "RANDOM");
  EXPECT_EQ(random.dim(), 128u);
}

TEST_F(Pipeline, ReportCoversAlmRandomAndFixtures) {
  const auto report = align::report_from_json(alm_test::slurp(paths::report_json(*config_)));
  ASSERT_FALSE(report.models.empty());
  EXPECT_EQ(report.models.front(), "ALM");
  for (const char* m : {"RANDOM", "fixture-decoder-a", "fixture-decoder-b"}) {
    EXPECT_NE(std::find(report.models.begin(), report.models.end(), m), report.models.end()) << m;
  }
  for (Eigen::Index i = 0; i < report.heatmap.rows(); ++i) EXPECT_EQ(report.heatmap(i, i), 1.0);
  // Each reference set against each of the two ALM replicas.
  EXPECT_EQ(report.procrustes.size(), 2u * (2 + 1 + 1));
  const auto dir = paths::report_dir(*config_);
  EXPECT_EQ(header(dir / "heatmap_p15.csv").substr(0, 10), "model,ALM,");
  EXPECT_EQ(header(dir / "procrustes.csv"), "model,alm_replica,dim,disparity");
  EXPECT_EQ(header(dir / "pvalues.csv"), "alm_replica,model,model_replica,k,observed,p_value");
  EXPECT_EQ(header(dir / "table_pk.csv").substr(0, 2), "k,");
}

TEST_F(Pipeline, FixtureDecodersAlignWithEachOther) {
  const auto report = align::report_from_json(alm_test::slurp(paths::report_json(*config_)));
  const auto index = [&](const std::string& m) {
    return std::find(report.models.begin(), report.models.end(), m) - report.models.begin();
  };
  const auto a = index("fixture-decoder-a"), b = index("fixture-decoder-b"), r = index("RANDOM");
  EXPECT_GT(report.heatmap(a, b), report.heatmap(a, r) + 0.2);
}

TEST_F(Pipeline, DeterministicRerunIsByteIdentical) {
  alm_test::TempDir other;
  const auto c2 = parse_run_config(tiny_config(other / "run", true));
  run_pipeline(c2);
  const auto& c1 = *config_;
  auto same = [](const fs::path& x, const fs::path& y) { return alm_test::slurp(x) == alm_test::slurp(y); };
  EXPECT_TRUE(same(paths::dataset(c1), paths::dataset(c2)));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_TRUE(same(paths::checkpoint(c1, r), paths::checkpoint(c2, r))) << r;
    EXPECT_TRUE(same(paths::curve(c1, r), paths::curve(c2, r))) << r;
    EXPECT_TRUE(same(paths::embeddings(c1, r), paths::embeddings(c2, r))) << r;
    EXPECT_TRUE(same(paths::eval(c1, r), paths::eval(c2, r))) << r;
  }
  EXPECT_TRUE(same(paths::report_json(c1), paths::report_json(c2)));
  for (const char* f : {"heatmap_p15.csv", "table_pk.csv", "procrustes.csv", "pvalues.csv"}) {
    EXPECT_TRUE(same(paths::report_dir(c1) / f, paths::report_dir(c2) / f)) << f;
  }
  // Replicas use different seeds, so their weights differ.
  EXPECT_FALSE(same(paths::checkpoint(c1, 0), paths::checkpoint(c1, 1)));
}

// ---- stage failures and exit codes -------------------------------------------------

TEST(Stages, MissingInputsRaiseTheStageCode) {
  alm_test::TempDir dir;
  const auto c = parse_run_config(tiny_config(dir / "empty", false));
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const StageError& e) {
      return e.code();
    }
    return kOk;
  };
  EXPECT_EQ(code_of([&] { cmd_train(c); }), kTrain);
  EXPECT_EQ(code_of([&] { cmd_eval(c); }), kEval);
  EXPECT_EQ(code_of([&] { cmd_extract(c); }), kExtract);
  EXPECT_EQ(code_of([&] { cmd_report(c); }), kReport);
  EXPECT_EQ(code_of([&] { cmd_align(c); }), kAlign);
}

TEST(Stages, CorruptEmbeddingFileFailsAlign) {
  alm_test::TempDir dir;
  auto c = parse_run_config(tiny_config(dir / "run", false));
  // Align only needs ALM embeddings; fake one replica from a random set.
  auto fake = embed::random_embeddings(108, 128, 1);
  fake.model_name = "ALM";
  fs::create_directories(paths::replica_dir(c, 0));
  fs::create_directories(paths::replica_dir(c, 1));
  embed::save_embjson(fake, paths::embeddings(c, 0));
  embed::save_embjson(fake, paths::embeddings(c, 1));
  alm_test::spit(dir / "bad.embjson", R"({"format": "embjson/1"})");
  c.embeddings = {dir / "bad.embjson"};
  try {
    cmd_align(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.code(), kAlign);
    EXPECT_NE(std::string(e.what()).find("bad.embjson"), std::string::npos) << e.what();
  }
}

TEST(Almctl, ExitCodes) {
  alm_test::TempDir dir;
  alm_test::spit(dir / "bogus.json", R"({"bogus": 1})");
  alm_test::spit(dir / "tiny.json", tiny_config(dir / "run", false));
  EXPECT_EQ(run_almctl("--help"), 0);
  EXPECT_EQ(run_almctl("frobnicate"), kUsage);
  EXPECT_EQ(run_almctl("gen --config " + (dir / "missing.json").string()), kUsage);
  EXPECT_EQ(run_almctl("gen --config " + (dir / "bogus.json").string()), kUsage);
  EXPECT_EQ(run_almctl("train --config " + (dir / "tiny.json").string()), kTrain);
  EXPECT_EQ(run_almctl("gen --config " + (dir / "tiny.json").string()), kOk);
  EXPECT_TRUE(fs::exists(dir / "run" / "dataset.almd"));
  EXPECT_EQ(run_almctl("config --config " + (dir / "tiny.json").string() + " --seed 9"), kOk);
}

TEST(Almctl, GradcheckWritesItsReport) {
  alm_test::TempDir dir;
  EXPECT_EQ(run_almctl("gradcheck --out " + (dir / "g").string()), kOk);
  const auto j = json::parse(alm_test::slurp(dir / "g" / "gradcheck.json"));
  EXPECT_LT(j.at("max_rel_error").get<double>(), 1e-4);
}

}  // namespace
}  // namespace alm::cli
