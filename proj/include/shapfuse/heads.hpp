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

// Final classifiers on pooled or fused features.

#ifndef SHAPFUSE_HEADS_HPP_
#define SHAPFUSE_HEADS_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shapfuse/common.hpp"
#include "shapfuse/forest.hpp"

namespace shapfuse::heads {

enum class HeadKind { kMlp, kForest, kLogistic, kKnn, kTree };
inline constexpr std::array<HeadKind, 5> kAllHeads = {
    HeadKind::kMlp, HeadKind::kForest, HeadKind::kLogistic, HeadKind::kKnn,
    HeadKind::kTree};

std::string_view HeadName(HeadKind kind);
HeadKind ParseHead(std::string_view name);

struct HeadConfig {
  HeadKind kind = HeadKind::kMlp;
  // MLP: one relu hidden layer + softmax, Adam.
  int hidden = 128;
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int max_epochs = 200;
  int patience = 20;
  int batch_size = 16;
  // Logistic regression: full-batch Adam.
  double logistic_learning_rate = 1e-2;
  double logistic_weight_decay = 1e-4;
  int logistic_epochs = 300;
  // Forest and single tree (the tree ignores n_trees/bootstrap/max_features).
  forest::ForestConfig forest;
  int knn_k = 5;
  // Z-score features with training-set statistics before fitting.
  bool standardize = false;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Dense layers of the MLP head. w1 is hidden x input, w2 classes x hidden.
struct MlpParams {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  static MlpParams Init(int input_dim, int hidden, int num_classes,
                        std::uint64_t seed);
  static MlpParams ZerosLike(const MlpParams& p);
  std::array<std::span<double>, 4> groups();
  std::array<std::span<const double>, 4> groups() const;
};

Matrix MlpLogits(const Matrix& x, const MlpParams& p);

// Mean cross-entropy over the rows of x; fills `grad` when non-null.
double MlpLossAndGradient(const Matrix& x, const std::vector<int>& y,
                          const MlpParams& p, MlpParams* grad);

struct Head {
  HeadConfig config;
  int num_classes = 0;
  int input_dim = 0;
  Vector mean;   // standardization, empty when off
  Vector scale;
  MlpParams mlp;        // MLP and logistic (logistic keeps w2/b2 only)
  forest::TreeEnsemble forest;  // forest and single tree
  Matrix knn_x;
  std::vector<int> knn_y;
  int epochs_run = 0;
};

// `x_val`/`y_val` drive early stopping of the gradient-trained heads; the
// other heads ignore them.
Head TrainHead(const Matrix& x_train, const std::vector<int>& y_train,
               const Matrix& x_val, const std::vector<int>& y_val,
               int num_classes, const HeadConfig& config);

// N x C class probabilities.
Matrix PredictProba(const Head& head, const Matrix& x);

nlohmann::json ToJson(const HeadConfig& config);
HeadConfig HeadConfigFromJson(const nlohmann::json& j, HeadConfig base = {});

}  // namespace shapfuse::heads

#endif  // SHAPFUSE_HEADS_HPP_
