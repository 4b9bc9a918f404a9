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

#include "shapfuse/forest.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace shapfuse::forest {
namespace {

TEST(ForestTest, OneDimensionalSeparableData) {
  Matrix x(40, 1);
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i;
    y.push_back(i < 20 ? 0 : 1);
  }
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 3;
  const TreeEnsemble f = FitForest(x, y, 2, cfg);
  EXPECT_NO_THROW(f.Validate());
  for (int i = 0; i < 40; ++i) {
    const Vector p = PredictProba(f, Row(x, i));
    EXPECT_EQ(p[1] > 0.5, y[i] == 1) << i;
  }
}

TEST(ForestTest, LearnsXor) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix x(400, 2);
  std::vector<int> y;
  for (int i = 0; i < 400; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
    y.push_back((x(i, 0) > 0) != (x(i, 1) > 0));
  }
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.max_features = 2;
  cfg.seed = 1;
  const TreeEnsemble f = FitForest(x, y, 2, cfg);
  int correct = 0;
  for (int i = 0; i < 400; ++i) correct += (ClassMargin(f, Row(x, i), 1) > 0.5) == (y[i] == 1);
  EXPECT_GE(correct, 380);
  for (const double a : {-0.5, 0.5})
    for (const double b : {-0.5, 0.5}) {
      const std::vector<double> q = {a, b};
      EXPECT_EQ(ClassMargin(f, q, 1) > 0.5, (a > 0) != (b > 0));
    }
}

TEST(ForestTest, RespectsStructuralLimits) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Matrix x(200, 9);
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 9; ++j) x(i, j) = n(rng);
    y.push_back(i % 3);
  }
  ForestConfig cfg;
  cfg.n_trees = 8;
  cfg.max_depth = 3;
  cfg.min_samples_leaf = 5;
  const TreeEnsemble f = FitForest(x, y, 3, cfg);
  ASSERT_EQ(f.trees.size(), 8u);
  for (const Tree& t : f.trees) {
    EXPECT_LE(t.Depth(), 3);
    for (int node = 0; node < t.num_nodes(); ++node) {
      if (t.is_leaf(node)) {
        EXPECT_GE(t.cover[node], 5.0);
        double s = 0.0;
        for (const double v : t.node_value(node)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
      } else {
        EXPECT_DOUBLE_EQ(t.cover[node], t.cover[t.left[node]] + t.cover[t.right[node]]);
      }
    }
  }
  const Matrix p = PredictProba(f, x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}

TEST(ForestTest, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Matrix x(120, 6);
  std::vector<int> y;
  for (int i = 0; i < 120; ++i) {
    for (int j = 0; j < 6; ++j) x(i, j) = n(rng);
    y.push_back(x(i, 0) + x(i, 3) > 0);
  }
  ForestConfig cfg;
  cfg.n_trees = 12;
  cfg.seed = 8;
  const auto a = ToJson(FitForest(x, y, 2, cfg)).dump();
  cfg.num_threads = 4;
  EXPECT_EQ(ToJson(FitForest(x, y, 2, cfg)).dump(), a);
}

TEST(ForestTest, TiesGoLeft) {
  Tree t;
  t.num_classes = 2;
  t.feature = {0, -1, -1};
  t.threshold = {0.5, 0.0, 0.0};
  t.left = {1, -1, -1};
  t.right = {2, -1, -1};
  t.cover = {2, 1, 1};
  t.value = {0.5, 0.5, 1.0, 0.0, 0.0, 1.0};
  const std::vector<double> at = {0.5};
  const std::vector<double> above = {std::nextafter(0.5, 1.0)};
  EXPECT_EQ(t.LeafFor(at), 1);
  EXPECT_EQ(t.LeafFor(above), 2);
}

TEST(ForestTest, JsonRoundTripAndCorruption) {
  Matrix x(30, 2);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = i % 7;
    x(i, 1) = i % 5;
    y.push_back(i % 2);
  }
  ForestConfig cfg;
  cfg.n_trees = 3;
  const TreeEnsemble f = FitForest(x, y, 2, cfg);
  auto j = ToJson(f);
  const TreeEnsemble back = EnsembleFromJson(j);
  for (int i = 0; i < 30; ++i)
    EXPECT_EQ(PredictProba(back, Row(x, i)), PredictProba(f, Row(x, i)));
  j["trees"][0]["left"][0] = 999;
  EXPECT_ANY_THROW(EnsembleFromJson(j));
}

TEST(ForestTest, RejectsBadInput) {
  Matrix x = Matrix::Zero(4, 2);
  EXPECT_THROW(FitForest(x, {0, 1, 0}, 2, {}), InvalidArgument);
  EXPECT_THROW(FitForest(x, {0, 1, 0, 2}, 2, {}), InvalidArgument);
  ForestConfig cfg;
  cfg.n_trees = 0;
  EXPECT_THROW(cfg.Validate(), InvalidArgument);
}

}  // namespace
}  // namespace shapfuse::forest
