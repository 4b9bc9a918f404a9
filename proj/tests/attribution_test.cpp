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

#include "shapfuse/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>
#include <random>
#include <set>

#include <gtest/gtest.h>

namespace shapfuse::attribution {
namespace {

using forest::Tree;
using forest::TreeEnsemble;

// Test-local tree evaluation, independent of Tree::LeafFor.
double Evaluate(const Tree& t, const std::vector<double>& x, int c) {
  int node = 0;
  while (t.feature[node] >= 0)
    node = x[t.feature[node]] <= t.threshold[node] ? t.left[node] : t.right[node];
  return t.value[node * t.num_classes + c];
}

double EvaluateEnsemble(const TreeEnsemble& e, const std::vector<double>& x, int c) {
  double s = 0.0;
  for (const Tree& t : e.trees) s += Evaluate(t, x, c);
  return s / static_cast<double>(e.trees.size());
}

// Shapley values as the mean marginal contribution over all M! orderings.
std::vector<double> PermutationShapley(const TreeEnsemble& e,
                                       const std::vector<double>& fg,
                                       const std::vector<double>& bg, int c) {
  const int m = static_cast<int>(fg.size());
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(m, 0.0);
  double count = 0.0;
  do {
    std::vector<double> x = bg;
    double prev = EvaluateEnsemble(e, x, c);
    for (const int i : order) {
      x[i] = fg[i];
      const double cur = EvaluateEnsemble(e, x, c);
      phi[i] += cur - prev;
      prev = cur;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& v : phi) v /= count;
  return phi;
}

// Random tree over thresholds {-1, 0, 1}; inputs from the same grid make ties
// (x == threshold) common.
Tree RandomTree(std::mt19937_64& rng, int depth, int m, int c) {
  Tree t;
  t.num_classes = c;
  std::uniform_int_distribution<int> feat(0, m - 1), thr(-1, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::function<int(int)> build = [&](int d) -> int {
    const int id = t.num_nodes();
    t.feature.push_back(-1);
    t.threshold.push_back(0.0);
    t.left.push_back(-1);
    t.right.push_back(-1);
    t.cover.push_back(0.0);
    for (int k = 0; k < c; ++k) t.value.push_back(0.0);
    if (d == depth || u(rng) < 0.2) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += (t.value[id * c + k] = u(rng) + 1e-3);
      for (int k = 0; k < c; ++k) t.value[id * c + k] /= s;
      t.cover[id] = 1.0 + std::floor(u(rng) * 10);
      return id;
    }
    t.feature[id] = feat(rng);
    t.threshold[id] = thr(rng);
    const int l = build(d + 1);
    const int r = build(d + 1);
    t.left[id] = l;
    t.right[id] = r;
    t.cover[id] = t.cover[l] + t.cover[r];
    return id;
  };
  build(0);
  return t;
}

TreeEnsemble RandomEnsemble(std::mt19937_64& rng, int trees, int m, int c) {
  TreeEnsemble e;
  e.num_features = m;
  e.num_classes = c;
  e.class_prior.assign(c, 1.0 / c);
  for (int i = 0; i < trees; ++i) e.trees.push_back(RandomTree(rng, 4, m, c));
  e.Validate();
  return e;
}

std::vector<double> GridPoint(std::mt19937_64& rng, int m) {
  std::uniform_int_distribution<int> g(-2, 2);
  std::vector<double> x(m);
  for (double& v : x) v = 0.5 * g(rng);
  return x;
}

// Hand-enumerated game on three features:
//   v(S) = 0.2 + 0.4 [0 in S] + 0.4 [0,1 in S]
// so phi = (0.6, 0.2, 0.0).
TEST(AttributionTest, HandEnumeratedThreeFeatureGame) {
  Tree t;
  t.num_classes = 2;
  t.feature = {0, -1, 1, -1, -1};
  t.threshold = {0.5, 0.0, 0.5, 0.0, 0.0};
  t.left = {1, -1, 3, -1, -1};
  t.right = {2, -1, 4, -1, -1};
  t.cover = {4, 2, 2, 1, 1};
  t.value = {0.5, 0.5, 0.2, 0.8, 0.5, 0.5, 0.6, 0.4, 1.0, 0.0};
  TreeEnsemble e;
  e.trees = {t};
  e.num_features = 3;
  e.num_classes = 2;
  e.class_prior = {0.5, 0.5};
  const std::vector<double> fg = {1, 1, 1}, bg = {0, 0, 0};
  for (const auto& a : {ExactShapley(e, fg, bg, 0), TreeShapley(e, fg, bg, 0)}) {
    EXPECT_NEAR(a.phi[0], 0.6, 1e-12);
    EXPECT_NEAR(a.phi[1], 0.2, 1e-12);
    EXPECT_NEAR(a.phi[2], 0.0, 1e-12);
    EXPECT_NEAR(a.phi0, 0.2, 1e-12);
  }
  const auto other = TreeShapley(e, fg, bg, 1);
  EXPECT_NEAR(other.phi[0], -0.6, 1e-12);
  EXPECT_NEAR(other.phi[1], -0.2, 1e-12);
}

TEST(AttributionTest, BothEstimatorsMatchPermutationOracle) {
  std::mt19937_64 rng(123);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 2 + trial % 5;
    const TreeEnsemble e = RandomEnsemble(rng, 1 + trial % 4, m, 3);
    const auto fg = GridPoint(rng, m), bg = GridPoint(rng, m);
    for (int c = 0; c < 3; ++c) {
      const auto oracle = PermutationShapley(e, fg, bg, c);
      const auto exact = ExactShapley(e, fg, bg, c);
      const auto walk = TreeShapley(e, fg, bg, c);
      EXPECT_NEAR(exact.phi0, EvaluateEnsemble(e, bg, c), 1e-12);
      EXPECT_NEAR(walk.phi0, EvaluateEnsemble(e, bg, c), 1e-12);
      for (int i = 0; i < m; ++i) {
        worst = std::max({worst, std::abs(exact.phi[i] - oracle[i]),
                          std::abs(walk.phi[i] - oracle[i])});
      }
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(AttributionTest, AllClassesMatchesPerClassCalls) {
  std::mt19937_64 rng(9);
  const TreeEnsemble e = RandomEnsemble(rng, 5, 6, 4);
  const auto fg = GridPoint(rng, 6), bg = GridPoint(rng, 6);
  const MultiClassAttribution all = TreeShapleyAllClasses(e, fg, bg);
  ASSERT_EQ(all.phi.rows(), 6);
  ASSERT_EQ(all.phi.cols(), 4);
  for (int c = 0; c < 4; ++c) {
    const auto one = TreeShapley(e, fg, bg, c);
    EXPECT_NEAR(all.phi0[c], one.phi0, 1e-15);
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(all.phi(i, c), one.phi[i], 1e-15);
  }
  // Probabilities sum to one, so attributions sum to zero across classes.
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(all.phi.row(i).sum(), 0.0, 1e-12);
}

TEST(AttributionTest, BackgroundAveraging) {
  std::mt19937_64 rng(10);
  const TreeEnsemble e = RandomEnsemble(rng, 3, 5, 2);
  const auto fg = GridPoint(rng, 5);
  Matrix bg(7, 5);
  for (int r = 0; r < 7; ++r) {
    const auto row = GridPoint(rng, 5);
    for (int j = 0; j < 5; ++j) bg(r, j) = row[j];
  }
  const auto avg = ShapleyOverBackground(e, fg, bg, 1);
  std::vector<double> expect(5, 0.0);
  double phi0 = 0.0;
  for (int r = 0; r < 7; ++r) {
    const std::vector<double> row(bg.row(r).data(), bg.row(r).data() + 5);
    const auto o = PermutationShapley(e, fg, row, 1);
    for (int j = 0; j < 5; ++j) expect[j] += o[j] / 7.0;
    phi0 += EvaluateEnsemble(e, row, 1) / 7.0;
  }
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(avg.phi[j], expect[j], 1e-12);
  EXPECT_NEAR(avg.phi0, phi0, 1e-12);
  EXPECT_NEAR(avg.phi.sum() + avg.phi0, EvaluateEnsemble(e, fg, 1), 1e-12);
}

TEST(AttributionTest, ReportAggregatesMeanAbsolute) {
  std::mt19937_64 rng(11);
  const TreeEnsemble e = RandomEnsemble(rng, 4, 5, 3);
  Matrix eval(6, 5), bg(4, 5);
  for (int r = 0; r < 6; ++r) {
    const auto row = GridPoint(rng, 5);
    for (int j = 0; j < 5; ++j) eval(r, j) = row[j];
  }
  for (int r = 0; r < 4; ++r) {
    const auto row = GridPoint(rng, 5);
    for (int j = 0; j < 5; ++j) bg(r, j) = row[j];
  }
  const AttributionReport one = AttributionMatrix(e, eval, bg, 1);
  const AttributionReport many = AttributionMatrix(e, eval, bg, 3);
  ASSERT_EQ(one.phi.size(), 3u);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE((one.phi[c].array() == many.phi[c].array()).all());
  EXPECT_TRUE((one.scores.array() == many.scores.array()).all());
  for (int j = 0; j < 5; ++j) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 6; ++r) s += std::abs(one.phi[c](r, j));
    EXPECT_NEAR(one.scores[j], s / 18.0, 1e-12);
  }
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(one.phi[c].row(r).sum() + one.base_values(r, c),
                  forest::ClassMargin(e, forest::Row(eval, r), c), 1e-12);
}

TEST(AttributionTest, ExactRefusesTooManyFeatures) {
  std::mt19937_64 rng(12);
  const TreeEnsemble e = RandomEnsemble(rng, 1, 21, 2);
  const auto fg = GridPoint(rng, 21), bg = GridPoint(rng, 21);
  EXPECT_THROW(ExactShapley(e, fg, bg, 0), CapacityError);
  EXPECT_NO_THROW(TreeShapley(e, fg, bg, 0));
  const std::vector<double> wrong(3, 0.0);
  EXPECT_THROW(TreeShapley(e, wrong, bg, 0), ShapeError);
}

TEST(AttributionTest, SampleBackgroundDrawsDistinctRows) {
  Matrix pool(50, 2);
  for (int i = 0; i < 50; ++i) pool.row(i) << i, -i;
  const Matrix b = SampleBackground(pool, 20, 4);
  ASSERT_EQ(b.rows(), 20);
  std::set<double> seen;
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(b(i, 1), -b(i, 0));
    seen.insert(b(i, 0));
  }
  EXPECT_EQ(seen.size(), 20u);
  EXPECT_EQ(SampleBackground(pool, 100, 4).rows(), 50);
  EXPECT_TRUE((SampleBackground(pool, 20, 4).array() == b.array()).all());
}

}  // namespace
}  // namespace shapfuse::attribution
