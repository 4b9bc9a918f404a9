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

// shapfuse command line.
//
// Exit status: 0 success, 1 property failure or runtime error, 2 usage,
// configuration or missing-input error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "shapfuse/common.hpp"
#include "shapfuse/pipeline.hpp"
#include "shapfuse/verify.hpp"

namespace {

using shapfuse::pipeline::PipelineConfig;
using shapfuse::pipeline::Stage;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> folds;
  std::optional<int> jobs;
};

PipelineConfig ResolveConfig(const GlobalFlags& g) {
  PipelineConfig c;
  if (!g.config.empty()) c = shapfuse::pipeline::LoadConfig(g.config);
  if (const char* env = std::getenv("SHAPFUSE_OUT"); env && *env) c.out_dir = env;
  if (!g.out.empty()) c.out_dir = g.out;
  if (g.seed) c.master_seed = *g.seed;
  if (g.folds) c.folds = *g.folds;
  if (g.jobs) c.jobs = *g.jobs;
  c.Validate();
  return c;
}

void PrintOutcome(Stage s, const shapfuse::pipeline::StageOutcome& o) {
  std::cout << shapfuse::pipeline::StageName(s) << ": " << o.units_run << " run, "
            << o.units_skipped << " up to date\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley-pooled multimodal fusion pipeline on synthetic MIL cohorts"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory (env SHAPFUSE_OUT)");
  app.add_option("--folds", g.folds, "number of Monte Carlo folds")->check(CLI::PositiveNumber);
  app.add_option("--jobs", g.jobs, "parallel jobs")->check(CLI::PositiveNumber);

  for (const Stage s : shapfuse::pipeline::kAllStages) {
    app.add_subcommand(std::string(shapfuse::pipeline::StageName(s)),
                       "run the " + std::string(shapfuse::pipeline::StageName(s)) + " stage");
  }
  std::string last_stage = "report";
  auto* all = app.add_subcommand("all", "run every stage in order");
  all->add_option("--stage", last_stage, "stop after this stage");

  std::string artifacts;
  bool check_artifacts = false;
  shapfuse::verify::SuiteOptions suite;
  auto* verify = app.add_subcommand("verify", "run the property suite");
  verify->add_flag("--artifacts", check_artifacts,
                   "also check saved forests and attribution dumps under --out");
  verify->add_option("--forests", suite.random_forests, "random forests in the oracle check");

  auto* show = app.add_subcommand("config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (verify->parsed()) {
      if (g.seed) suite.seed = *g.seed;
      auto report = shapfuse::verify::RunPropertySuite(suite);
      if (check_artifacts) {
        const PipelineConfig c = ResolveConfig(g);
        const auto art = shapfuse::verify::VerifyArtifacts(c.out_dir);
        report.results.insert(report.results.end(), art.results.begin(), art.results.end());
      }
      std::cout << shapfuse::verify::FormatReport(report);
      return report.ok() ? 0 : 1;
    }
    const PipelineConfig c = ResolveConfig(g);
    if (show->parsed()) {
      std::cout << shapfuse::pipeline::ToJson(c).dump(2) << '\n';
      return 0;
    }
    if (all->parsed()) {
      const auto outcomes =
          shapfuse::pipeline::RunAll(c, shapfuse::pipeline::ParseStage(last_stage));
      for (const auto& [s, o] : outcomes) PrintOutcome(s, o);
      return 0;
    }
    for (const Stage s : shapfuse::pipeline::kAllStages) {
      if (app.got_subcommand(std::string(shapfuse::pipeline::StageName(s)))) {
        PrintOutcome(s, shapfuse::pipeline::RunStage(c, s));
        return 0;
      }
    }
  } catch (const shapfuse::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const shapfuse::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
