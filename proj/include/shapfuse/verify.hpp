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

// Self-checks runnable from the command line: attribution axioms and
// estimator agreement, gradient checks, dimension contracts, and consistency
// of the artifacts a pipeline run left on disk.

#ifndef SHAPFUSE_VERIFY_HPP_
#define SHAPFUSE_VERIFY_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "shapfuse/forest.hpp"

namespace shapfuse::verify {

struct PropertyResult {
  std::string name;
  bool passed = true;
  long checks = 0;
  long failures = 0;
  double worst = 0.0;  // largest observed error, where meaningful
  std::string detail;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<PropertyResult> results;
  int passed() const;
  int failed() const;
  bool ok() const { return failed() == 0; }
};

struct SuiteOptions {
  std::uint64_t seed = 20240601;
  int random_forests = 100;
  int queries_per_forest = 3;
  int gradient_samples = 200;
};

VerifyReport RunPropertySuite(const SuiteOptions& options = {});

// Reloads every saved forest and attribution dump under `out_dir` and checks
// local accuracy, base values, selector/score agreement and feature widths.
VerifyReport VerifyArtifacts(const std::filesystem::path& out_dir);

// Random ensemble with valid covers: up to `max_trees` trees of depth at most
// `max_depth` over `num_features` features. Thresholds are drawn from a small
// grid so that ties with inputs on the same grid occur. When `normalized`,
// leaves hold probability vectors.
forest::TreeEnsemble RandomEnsemble(std::mt19937_64& rng, int num_trees,
                                    int max_depth, int num_features,
                                    int num_classes, bool normalized = true);

std::string FormatReport(const VerifyReport& report);

}  // namespace shapfuse::verify

#endif  // SHAPFUSE_VERIFY_HPP_
