/*
 * Copyright 2026 The shapfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "shapfuse/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "shapfuse/io.hpp"
#include "shapfuse/verify.hpp"

namespace shapfuse::pipeline {
namespace {

// A run small enough to finish in seconds.
PipelineConfig TinyConfig(const fs::path& out) {
  PipelineConfig c;
  c.out_dir = out;
  c.folds = 2;
  c.synth.num_patients = 80;
  c.mil_hidden = 64;
  c.mil_attention = 16;
  c.mil_default.max_epochs = 3;
  c.mil_default.learning_rate = 1e-3;
  c.pool.forest.n_trees = 8;
  c.pool.background_size = 10;
  c.fusion_head.max_epochs = 3;
  c.fusion_head.batch_size = 8;
  for (auto& h : c.comparison_heads) {
    h.max_epochs = 3;
    h.logistic_epochs = 20;
    h.forest.n_trees = 8;
  }
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("shapfuse_pipe_" + std::string(::testing::UnitTest::GetInstance()
                                                ->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path root_;
};

TEST(PipelineConfigTest, JsonRoundTripAndPartialOverride) {
  PipelineConfig c;
  c.folds = 3;
  c.pool.background_size = 17;
  const PipelineConfig back = ConfigFromJson(ToJson(c));
  EXPECT_EQ(ToJson(back).dump(), ToJson(c).dump());
  const PipelineConfig partial = ConfigFromJson(nlohmann::json{{"pool", {{"k", 16}}}});
  EXPECT_EQ(partial.pool.k, 16);
  EXPECT_EQ(partial.folds, 5);
  EXPECT_EQ(partial.PoolNames(),
            (std::vector<std::string>{"SHAP", "AVG", "MAX", "RAND1", "RAND2", "RAND3"}));
  EXPECT_THROW(ConfigFromJson(nlohmann::json{{"pool", {{"k", 33}}}}), InvalidArgument);
  EXPECT_THROW(ConfigFromJson(nlohmann::json{{"grid_pools", {"MEDIAN"}}}),
               InvalidArgument);
}

TEST(PipelineConfigTest, StageNames) {
  for (const Stage s : kAllStages) EXPECT_EQ(ParseStage(StageName(s)), s);
  EXPECT_EQ(StageName(Stage::kFitPool), "fit-pool");
  EXPECT_THROW(ParseStage("train"), InvalidArgument);
}

TEST(PipelineConfigTest, SummarizeUsesSampleDeviation) {
  const MeanSd s = Summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(Summarize({0.7}).sd, 0.0);
}

TEST_F(PipelineTest, MissingUpstreamNamesProducer) {
  const PipelineConfig c = TinyConfig(root_);
  auto expect_hint = [&](Stage stage, const std::string& producer) {
    try {
      RunStage(c, stage);
      FAIL() << StageName(stage) << " ran without its inputs";
    } catch (const IoError& e) {
      EXPECT_NE(std::string(e.what()).find("run `shapfuse " + producer + "` first"),
                std::string::npos)
          << e.what();
    }
  };
  expect_hint(Stage::kTrainMil, "synth");
  RunStage(c, Stage::kSynth);
  expect_hint(Stage::kExtract, "train-mil");
  expect_hint(Stage::kFitPool, "extract");
  RunStage(c, Stage::kTrainMil);
  expect_hint(Stage::kFitPool, "extract");
}

TEST_F(PipelineTest, EndToEndIsDeterministicAndResumable) {
  const PipelineConfig a = TinyConfig(root_ / "a");
  const PipelineConfig b = TinyConfig(root_ / "b");
  RunAll(a);
  RunAll(b);
  EXPECT_EQ(io::ReadText(a.out_dir / "run_manifest.json"),
            io::ReadText(b.out_dir / "run_manifest.json"));
  EXPECT_EQ(io::ReadText(a.out_dir / "report.md"), io::ReadText(b.out_dir / "report.md"));

  // A second run skips everything.
  const auto again = RunAll(a);
  for (const auto& [stage, outcome] : again) {
    EXPECT_EQ(outcome.units_run, 0) << StageName(stage);
    EXPECT_GT(outcome.units_skipped, 0) << StageName(stage);
  }

  // Changing the fusion head reruns evaluate and report only.
  PipelineConfig changed = a;
  changed.fusion_head.hidden = 32;
  const auto partial = RunAll(changed);
  EXPECT_EQ(partial.at(Stage::kTrainMil).units_run, 0);
  EXPECT_EQ(partial.at(Stage::kFitPool).units_run, 0);
  EXPECT_EQ(partial.at(Stage::kEvaluate).units_run, 2);
  EXPECT_EQ(partial.at(Stage::kReport).units_run, 1);
}

TEST_F(PipelineTest, ReportHasEveryLayoutAndPool) {
  const PipelineConfig c = TinyConfig(root_);
  RunAll(c);
  const auto summary = LoadSummary(c.out_dir);
  EXPECT_EQ(summary["dims"]["pooled"], 32);
  EXPECT_EQ(summary["dims"]["concat"], 64);
  EXPECT_EQ(summary["dims"]["fused"], 2048);
  EXPECT_EQ(summary["pooling_comparison"]["heads"].size(), 5u);
  std::istringstream csv(io::ReadText(c.out_dir / "table_ablation.csv"));
  std::string line;
  std::set<std::string> layouts, pools;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string layout, pool;
    std::getline(row, layout, ',');
    std::getline(row, pool, ',');
    layouts.insert(layout);
    pools.insert(pool);
  }
  EXPECT_EQ(layouts.size(), 7u);
  EXPECT_GE(pools.size(), 4u);
  EXPECT_TRUE(pools.count("SHAP"));

  const fs::path fused = FoldDir(c.out_dir, 0) / "fused" / "F_TEST.csv";
  io::MatrixManifest mm;
  const Matrix f = io::LoadMatrix(fused, &mm);
  EXPECT_EQ(f.cols(), 2048);

  const verify::VerifyReport artifacts = verify::VerifyArtifacts(c.out_dir);
  EXPECT_TRUE(artifacts.ok()) << verify::FormatReport(artifacts);
}

TEST_F(PipelineTest, CorruptedArtifactIsDetected) {
  const PipelineConfig c = TinyConfig(root_);
  RunAll(c, Stage::kFitPool);
  const fs::path forest = FoldDir(c.out_dir, 1) / "pool" / "HE" / "forest.json";
  auto j = io::ReadJson(forest);
  auto& value = j["trees"][0]["value"];
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = 0.25;
  io::WriteJson(forest, j);
  EXPECT_FALSE(verify::VerifyArtifacts(c.out_dir).ok());
  // The manifest notices the edit and the stage refuses to reuse it.
  EXPECT_THROW(RunStage(c, Stage::kFuse), IoError);
}

}  // namespace
}  // namespace shapfuse::pipeline
