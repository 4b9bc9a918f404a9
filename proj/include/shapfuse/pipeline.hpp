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

// Stage-by-stage experiment driver.
//
//   synth      cohort/ and folds/fold_<i>/splits.json
//   train-mil  folds/fold_<i>/mil/<MOD>.json
//   extract    folds/fold_<i>/embeddings/<MOD>_<PART>.csv
//   fit-pool   folds/fold_<i>/pool/<MOD>/{forest.json, selector_*.json,
//              phi_class<c>.csv, base_values.csv, eval_inputs.csv, ...}
//   fuse       folds/fold_<i>/pooled/<POOL>/<MOD>_<PART>.csv and
//              folds/fold_<i>/fused/F_<PART>.csv
//   evaluate   folds/fold_<i>/metrics.json
//   report     summary.json, report.md, table_*.csv
//
// Every unit of work (a stage for one fold, or for one fold and modality) is
// recorded in run_manifest.json with its seed, the digests of the units it
// consumed, a hash of the config it depends on and the SHA-256 of every file
// it wrote. A unit whose record still matches is skipped. Wall-clock timings
// go to timings.json so the manifest stays byte-identical across runs.

#ifndef SHAPFUSE_PIPELINE_HPP_
#define SHAPFUSE_PIPELINE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shapfuse/data.hpp"
#include "shapfuse/heads.hpp"
#include "shapfuse/mil.hpp"
#include "shapfuse/pool.hpp"

namespace shapfuse::pipeline {

namespace fs = std::filesystem;

enum class Stage { kSynth, kTrainMil, kExtract, kFitPool, kFuse, kEvaluate, kReport };
inline constexpr std::array<Stage, 7> kAllStages = {
    Stage::kSynth, Stage::kTrainMil, Stage::kExtract, Stage::kFitPool,
    Stage::kFuse,  Stage::kEvaluate, Stage::kReport};

// CLI spelling: synth, train-mil, extract, fit-pool, fuse, evaluate, report.
std::string_view StageName(Stage s);
Stage ParseStage(std::string_view name);

// Where the SHAP pool computes attributions: the validation part (default) or
// the test part, which lets test labels influence feature selection.
enum class AttributionSource { kVal, kTest };

struct PipelineConfig {
  fs::path out_dir = "runs/default";
  std::uint64_t master_seed = 7;
  int folds = 5;
  std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  int jobs = 1;

  data::SynthConfig synth;
  int mil_hidden = 512;
  int mil_attention = 128;
  // Per modality; missing entries use `mil_default`.
  mil::TrainConfig mil_default;
  std::map<data::Modality, mil::TrainConfig> mil;

  pool::ShapPoolConfig pool;
  AttributionSource attribute_on = AttributionSource::kVal;
  int rand_pools = 3;

  // Head of the modality ablation grid.
  heads::HeadConfig fusion_head;
  // Pools evaluated in the ablation grid (names as PoolNames()); SHAP, AVG,
  // MAX and RAND1 by default.
  std::vector<std::string> grid_pools;
  // Heads and modality of the pooling comparison.
  std::vector<heads::HeadConfig> comparison_heads;
  data::Modality comparison_modality = data::Modality::kHE;

  PipelineConfig();
  mil::TrainConfig MilConfigFor(data::Modality m) const;
  // "SHAP", "AVG", "MAX", "RAND1".."RAND<rand_pools>".
  std::vector<std::string> PoolNames() const;
  void Validate() const;
};

nlohmann::json ToJson(const PipelineConfig& config);
// Fields absent from `j` keep the values of `base`.
PipelineConfig ConfigFromJson(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig LoadConfig(const fs::path& path, PipelineConfig base = {});

struct StageOutcome {
  int units_run = 0;
  int units_skipped = 0;
};

// Runs one stage over every fold (and modality). Throws IoError naming the
// producing command when an upstream artifact is missing or stale.
StageOutcome RunStage(const PipelineConfig& config, Stage stage);

// Runs stages in order up to and including `last`.
std::map<Stage, StageOutcome> RunAll(const PipelineConfig& config,
                                     Stage last = Stage::kReport);

// Mean and sample standard deviation (0 for a single value).
struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};
MeanSd Summarize(const std::vector<double>& values);

// Reads summary.json written by the report stage.
nlohmann::json LoadSummary(const fs::path& out_dir);

fs::path FoldDir(const fs::path& out_dir, int fold);

}  // namespace shapfuse::pipeline

#endif  // SHAPFUSE_PIPELINE_HPP_
