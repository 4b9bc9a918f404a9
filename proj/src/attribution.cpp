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
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

namespace shapfuse::attribution {

namespace {

// coef(a, b) = a! b! / (a + b + 1)!: the Shapley weight of a coalition of
// size a among a + b + 1 players.
Matrix CoefficientTable(int n) {
  Matrix t(n + 1, n + 1);
  for (int a = 0; a <= n; ++a) {
    for (int b = 0; b <= n; ++b) {
      // 1 / ((a + b + 1) * binom(a + b, a))
      double binom = 1.0;
      const int k = std::min(a, b);
      for (int i = 1; i <= k; ++i)
        binom = binom * static_cast<double>(a + b - k + i) / i;
      t(a, b) = 1.0 / (static_cast<double>(a + b + 1) * binom);
    }
  }
  return t;
}

void CheckQuery(const forest::TreeEnsemble& model,
                std::span<const double> foreground,
                std::span<const double> background) {
  const auto m = static_cast<std::size_t>(model.num_features);
  CheckShape(foreground.size() == m && background.size() == m,
             "attribution: foreground/background length must equal the "
             "model's " + std::to_string(m) + " features");
  for (std::size_t i = 0; i < m; ++i) {
    Require(std::isfinite(foreground[i]) && std::isfinite(background[i]),
            "attribution: inputs must be finite");
  }
}

// Accumulates one tree's attributions (all classes) into `phi`.
class TreeWalker {
 public:
  TreeWalker(const forest::Tree& tree, std::span<const double> fg,
             std::span<const double> bg, const Matrix& coef,
             std::vector<char>& in_fg, std::vector<char>& in_bg, Matrix& phi)
      : tree_(tree),
        fg_(fg),
        bg_(bg),
        coef_(coef),
        in_fg_(in_fg),
        in_bg_(in_bg),
        phi_(phi) {}

  void Walk(int node) {
    if (tree_.is_leaf(node)) {
      Leaf(node);
      return;
    }
    const int f = tree_.feature[node];
    const double thr = tree_.threshold[node];
    const int fg_child = fg_[f] <= thr ? tree_.left[node] : tree_.right[node];
    const int bg_child = bg_[f] <= thr ? tree_.left[node] : tree_.right[node];
    if (fg_child == bg_child) {
      Walk(fg_child);
    } else if (in_fg_[f]) {
      Walk(fg_child);
    } else if (in_bg_[f]) {
      Walk(bg_child);
    } else {
      in_fg_[f] = 1;
      from_fg_.push_back(f);
      Walk(fg_child);
      from_fg_.pop_back();
      in_fg_[f] = 0;

      in_bg_[f] = 1;
      from_bg_.push_back(f);
      Walk(bg_child);
      from_bg_.pop_back();
      in_bg_[f] = 0;
    }
  }

 private:
  // The leaf is reached by hybrid(S) iff from_fg ⊆ S and from_bg ∩ S = ∅.
  void Leaf(int node) {
    const int a = static_cast<int>(from_fg_.size());
    const int b = static_cast<int>(from_bg_.size());
    if (a + b == 0) return;
    const auto value = tree_.node_value(node);
    const int classes = tree_.num_classes;
    if (a > 0) {
      const double w = coef_(a - 1, b);
      for (const int f : from_fg_)
        for (int c = 0; c < classes; ++c) phi_(f, c) += w * value[c];
    }
    if (b > 0) {
      const double w = coef_(a, b - 1);
      for (const int f : from_bg_)
        for (int c = 0; c < classes; ++c) phi_(f, c) -= w * value[c];
    }
  }

  const forest::Tree& tree_;
  std::span<const double> fg_;
  std::span<const double> bg_;
  const Matrix& coef_;
  std::vector<char>& in_fg_;
  std::vector<char>& in_bg_;
  Matrix& phi_;
  std::vector<int> from_fg_;
  std::vector<int> from_bg_;
};

int MaxDepth(const forest::TreeEnsemble& model) {
  int depth = 0;
  for (const auto& t : model.trees) depth = std::max(depth, t.Depth());
  return depth;
}

// Sum over trees (not yet divided by T) into `phi` (M x C) and `phi0` (C).
void AccumulateTrees(const forest::TreeEnsemble& model,
                     std::span<const double> fg, std::span<const double> bg,
                     const Matrix& coef, std::vector<char>& in_fg,
                     std::vector<char>& in_bg, Matrix& phi, Vector& phi0) {
  for (const forest::Tree& tree : model.trees) {
    TreeWalker walker(tree, fg, bg, coef, in_fg, in_bg, phi);
    walker.Walk(0);
    const auto v = tree.node_value(tree.LeafFor(bg));
    for (int c = 0; c < model.num_classes; ++c) phi0(c) += v[c];
  }
}

}  // namespace

double CharacteristicValue(const forest::TreeEnsemble& model,
                           const std::vector<bool>& coalition,
                           std::span<const double> foreground,
                           std::span<const double> background,
                           int target_class) {
  CheckQuery(model, foreground, background);
  CheckShape(coalition.size() == foreground.size(),
             "coalition mask length must equal the feature count");
  std::vector<double> hybrid(background.begin(), background.end());
  for (std::size_t i = 0; i < coalition.size(); ++i)
    if (coalition[i]) hybrid[i] = foreground[i];
  return forest::ClassMargin(model, hybrid, target_class);
}

AttributionVector ExactShapley(const forest::TreeEnsemble& model,
                               std::span<const double> foreground,
                               std::span<const double> background,
                               int target_class) {
  CheckQuery(model, foreground, background);
  const int m = model.num_features;
  if (m > kMaxExactFeatures) {
    throw CapacityError("exact Shapley enumeration supports at most " +
                        std::to_string(kMaxExactFeatures) + " features, got " +
                        std::to_string(m));
  }
  Require(target_class >= 0 && target_class < model.num_classes,
          "class index out of range");
  const std::uint32_t subsets = 1u << m;
  std::vector<double> value(subsets);
  std::vector<double> hybrid(static_cast<std::size_t>(m));
  for (std::uint32_t mask = 0; mask < subsets; ++mask) {
    for (int i = 0; i < m; ++i)
      hybrid[i] = (mask >> i) & 1u ? foreground[i] : background[i];
    value[mask] = forest::ClassMargin(model, hybrid, target_class);
  }
  const Matrix coef = CoefficientTable(m);
  AttributionVector out;
  out.phi = Vector::Zero(m);
  out.phi0 = value[0];
  for (int i = 0; i < m; ++i) {
    const std::uint32_t bit = 1u << i;
    double sum = 0.0;
    for (std::uint32_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit) continue;
      const int s = std::popcount(mask);
      sum += coef(s, m - s - 1) * (value[mask | bit] - value[mask]);
    }
    out.phi(i) = sum;
  }
  return out;
}

MultiClassAttribution TreeShapleyAllClasses(const forest::TreeEnsemble& model,
                                            std::span<const double> foreground,
                                            std::span<const double> background) {
  CheckQuery(model, foreground, background);
  const int m = model.num_features;
  const Matrix coef = CoefficientTable(MaxDepth(model) + 1);
  std::vector<char> in_fg(static_cast<std::size_t>(m), 0);
  std::vector<char> in_bg(static_cast<std::size_t>(m), 0);
  MultiClassAttribution out;
  out.phi = Matrix::Zero(m, model.num_classes);
  out.phi0 = Vector::Zero(model.num_classes);
  AccumulateTrees(model, foreground, background, coef, in_fg, in_bg, out.phi,
                  out.phi0);
  const double t = static_cast<double>(model.trees.size());
  out.phi /= t;
  out.phi0 /= t;
  return out;
}

AttributionVector TreeShapley(const forest::TreeEnsemble& model,
                              std::span<const double> foreground,
                              std::span<const double> background,
                              int target_class) {
  Require(target_class >= 0 && target_class < model.num_classes,
          "class index out of range");
  const MultiClassAttribution all =
      TreeShapleyAllClasses(model, foreground, background);
  return {all.phi.col(target_class), all.phi0(target_class)};
}

MultiClassAttribution ShapleyOverBackgroundAllClasses(
    const forest::TreeEnsemble& model, std::span<const double> foreground,
    const Matrix& background) {
  Require(background.rows() >= 1, "attribution: background set is empty");
  CheckShape(background.cols() == model.num_features,
             "attribution: background width does not match the model");
  const int m = model.num_features;
  const Matrix coef = CoefficientTable(MaxDepth(model) + 1);
  std::vector<char> in_fg(static_cast<std::size_t>(m), 0);
  std::vector<char> in_bg(static_cast<std::size_t>(m), 0);
  const double t = static_cast<double>(model.trees.size());

  MultiClassAttribution out;
  out.phi = Matrix::Zero(m, model.num_classes);
  out.phi0 = Vector::Zero(model.num_classes);
  Matrix phi(m, model.num_classes);
  Vector phi0(model.num_classes);
  for (Eigen::Index r = 0; r < background.rows(); ++r) {
    const auto bg = forest::Row(background, r);
    CheckQuery(model, foreground, bg);
    phi.setZero();
    phi0.setZero();
    AccumulateTrees(model, foreground, bg, coef, in_fg, in_bg, phi, phi0);
    out.phi += phi / t;
    out.phi0 += phi0 / t;
  }
  const double d = static_cast<double>(background.rows());
  out.phi /= d;
  out.phi0 /= d;
  return out;
}

AttributionVector ShapleyOverBackground(const forest::TreeEnsemble& model,
                                        std::span<const double> foreground,
                                        const Matrix& background,
                                        int target_class) {
  Require(target_class >= 0 && target_class < model.num_classes,
          "class index out of range");
  const MultiClassAttribution all =
      ShapleyOverBackgroundAllClasses(model, foreground, background);
  return {all.phi.col(target_class), all.phi0(target_class)};
}

AttributionReport AttributionMatrix(const forest::TreeEnsemble& model,
                                    const Matrix& eval,
                                    const Matrix& background,
                                    int num_threads) {
  Require(eval.rows() >= 1, "attribution: no samples to evaluate");
  CheckShape(eval.cols() == model.num_features,
             "attribution: evaluation width does not match the model");
  const int n = static_cast<int>(eval.rows());
  const int m = model.num_features;
  const int classes = model.num_classes;

  std::vector<MultiClassAttribution> per_sample(static_cast<std::size_t>(n));
  ParallelFor(static_cast<std::size_t>(n), num_threads, [&](std::size_t i) {
    per_sample[i] = ShapleyOverBackgroundAllClasses(
        model, forest::Row(eval, static_cast<Eigen::Index>(i)), background);
  });

  AttributionReport report;
  report.phi.assign(static_cast<std::size_t>(classes), Matrix(n, m));
  report.base_values.resize(n, classes);
  report.per_class_scores = Matrix::Zero(classes, m);
  for (int i = 0; i < n; ++i) {
    const MultiClassAttribution& a = per_sample[static_cast<std::size_t>(i)];
    for (int c = 0; c < classes; ++c) {
      report.phi[c].row(i) = a.phi.col(c).transpose();
      report.per_class_scores.row(c) += a.phi.col(c).cwiseAbs().transpose();
    }
    report.base_values.row(i) = a.phi0.transpose();
  }
  report.per_class_scores /= static_cast<double>(n);
  report.scores = report.per_class_scores.colwise().mean().transpose();
  return report;
}

Matrix SampleBackground(const Matrix& pool, int max_rows, std::uint64_t seed) {
  Require(pool.rows() >= 1, "background pool is empty");
  Require(max_rows >= 1, "background size must be >= 1");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto take = std::min<std::size_t>(idx.size(),
                                          static_cast<std::size_t>(max_rows));
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  Matrix out(static_cast<Eigen::Index>(take), pool.cols());
  for (std::size_t i = 0; i < take; ++i)
    out.row(static_cast<Eigen::Index>(i)) = pool.row(idx[i]);
  return out;
}

}  // namespace shapfuse::attribution
