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

// Random forest of axis-aligned CART trees with class-probability leaves.
//
// Leaves store the class distribution of the (bootstrap) samples that reach
// them, and the ensemble prediction is the mean of the reached leaves. This
// makes the prediction linear in the trees and in the leaf values, which the
// attribution code relies on.

#ifndef SHAPFUSE_FOREST_HPP_
#define SHAPFUSE_FOREST_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "shapfuse/common.hpp"

namespace shapfuse::forest {

// Flat node arrays; node 0 is the root. Samples with x[feature] <= threshold
// go left.
struct Tree {
  int num_classes = 0;
  std::vector<int> feature;  // -1 for leaves
  std::vector<double> threshold;
  std::vector<int> left;   // -1 for leaves
  std::vector<int> right;  // -1 for leaves
  std::vector<double> cover;  // (bootstrap) training samples reaching the node
  std::vector<double> value;  // num_nodes * num_classes, row per node

  int num_nodes() const { return static_cast<int>(feature.size()); }
  bool is_leaf(int node) const { return left[node] < 0; }
  std::span<const double> node_value(int node) const {
    return {value.data() + static_cast<std::size_t>(node) * num_classes,
            static_cast<std::size_t>(num_classes)};
  }
  std::span<double> node_value(int node) {
    return {value.data() + static_cast<std::size_t>(node) * num_classes,
            static_cast<std::size_t>(num_classes)};
  }
  int LeafFor(std::span<const double> x) const;
  // Maximum number of internal nodes on a root-to-leaf path.
  int Depth() const;
  // A tree with a single leaf.
  static Tree Leaf(std::span<const double> value, double cover = 1.0);
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  int num_features = 0;
  int num_classes = 0;
  std::vector<double> class_prior;

  // Indices, shapes, covers. Does not look at leaf normalization.
  void ValidateStructure() const;
  // ValidateStructure() plus: every leaf value sums to 1 within 1e-9.
  void Validate() const;
};

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 8;
  int min_samples_leaf = 2;
  // Candidate features per split; 0 means ceil(sqrt(M)).
  int max_features = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  // Trees are independent (per-tree seeds), so the result does not depend on
  // the thread count.
  int num_threads = 1;

  void Validate() const;
};

// Greedy Gini CART on a bootstrap sample per tree. `y` holds labels in
// [0, num_classes).
TreeEnsemble FitForest(const Matrix& x, const std::vector<int>& y,
                       int num_classes, const ForestConfig& config);

Vector PredictProba(const TreeEnsemble& ensemble, std::span<const double> x);
Matrix PredictProba(const TreeEnsemble& ensemble, const Matrix& x);

// predict_proba(x)[c]: the scalar model output handed to attribution.
double ClassMargin(const TreeEnsemble& ensemble, std::span<const double> x,
                   int target_class);

nlohmann::json ToJson(const TreeEnsemble& ensemble);
TreeEnsemble EnsembleFromJson(const nlohmann::json& j);

inline std::span<const double> Row(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace shapfuse::forest

#endif  // SHAPFUSE_FOREST_HPP_
