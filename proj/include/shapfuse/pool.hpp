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

// Dimension reduction of bag embeddings.
//
// SHAP keeps the k dimensions with the largest mean |phi| of a forest trained
// on the embeddings. AVG and MAX pool non-overlapping windows of width
// input_dim / k. RAND keeps k seeded random dimensions.

#ifndef SHAPFUSE_POOL_HPP_
#define SHAPFUSE_POOL_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shapfuse/attribution.hpp"
#include "shapfuse/common.hpp"
#include "shapfuse/forest.hpp"

namespace shapfuse::pool {

enum class PoolMethod { kShap, kAvg, kMax, kRand };

std::string_view PoolMethodName(PoolMethod m);
PoolMethod ParsePoolMethod(std::string_view name);

struct DimensionSelector {
  PoolMethod method = PoolMethod::kShap;
  int k = 32;
  int input_dim = 512;
  // Selected dimensions in output order (SHAP: by decreasing score; RAND:
  // draw order). Empty for window methods.
  std::vector<int> indices;
  // Per-dimension importance (SHAP only, length input_dim).
  Vector scores;
  std::uint64_t fit_seed = 0;

  int window() const { return input_dim / k; }
  void Validate() const;
};

// The k largest scores, ties broken by the lower index.
std::vector<int> TopK(const Vector& scores, int k);

struct ShapPoolConfig {
  forest::ForestConfig forest;
  int k = 32;
  // Background rows sampled from the forest's training portion.
  int background_size = 100;
  // Held-out fraction when FitShapPool splits its input itself.
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  int num_threads = 1;

  void Validate() const;
};

struct ShapPoolFit {
  DimensionSelector selector;
  forest::TreeEnsemble model;
  Matrix background;
  Matrix eval_inputs;
  attribution::AttributionReport attribution;
};

// Trains the forest on `z_train`, attributes the rows of `z_attr` against a
// background drawn from `z_train`, and keeps the top-k dimensions.
ShapPoolFit FitShapPool(const Matrix& z_train, const std::vector<int>& y_train,
                        const Matrix& z_attr, int num_classes,
                        const ShapPoolConfig& config);

// Same, splitting `z_fit` into a class-stratified training and held-out part.
// Requires at least 20 rows.
ShapPoolFit FitShapPool(const Matrix& z_fit, const std::vector<int>& y,
                        int num_classes, const ShapPoolConfig& config);

// RAND draws k distinct dimensions from `seed`; AVG/MAX require k | input_dim.
DimensionSelector MakeBaselinePool(PoolMethod method, int k, std::uint64_t seed,
                                   int input_dim = 512);

Vector ApplyPool(const DimensionSelector& selector, std::span<const double> z);
Matrix ApplyPool(const DimensionSelector& selector, const Matrix& z);

nlohmann::json ToJson(const DimensionSelector& selector);
DimensionSelector SelectorFromJson(const nlohmann::json& j);

}  // namespace shapfuse::pool

#endif  // SHAPFUSE_POOL_HPP_
