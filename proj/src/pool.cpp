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

#include "shapfuse/pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

namespace shapfuse::pool {

std::string_view PoolMethodName(PoolMethod m) {
  switch (m) {
    case PoolMethod::kShap: return "SHAP";
    case PoolMethod::kAvg: return "AVG";
    case PoolMethod::kMax: return "MAX";
    case PoolMethod::kRand: return "RAND";
  }
  return "?";
}

PoolMethod ParsePoolMethod(std::string_view name) {
  if (name == "SHAP") return PoolMethod::kShap;
  if (name == "AVG") return PoolMethod::kAvg;
  if (name == "MAX") return PoolMethod::kMax;
  if (name == "RAND") return PoolMethod::kRand;
  throw InvalidArgument("unknown pool method '" + std::string(name) + "'");
}

void DimensionSelector::Validate() const {
  Require(k >= 1 && input_dim >= 1 && k <= input_dim,
          "pool needs 1 <= k <= input_dim");
  if (method == PoolMethod::kAvg || method == PoolMethod::kMax) {
    Require(input_dim % k == 0, "window pooling needs k to divide input_dim (k=" +
                                    std::to_string(k) + ", input_dim=" +
                                    std::to_string(input_dim) + ")");
    return;
  }
  Require(indices.size() == static_cast<std::size_t>(k),
          "selector must hold exactly k indices");
  std::set<int> seen;
  for (const int i : indices) {
    Require(i >= 0 && i < input_dim, "selected index out of range");
    Require(seen.insert(i).second, "selected indices must be distinct");
  }
  if (method == PoolMethod::kShap) {
    Require(scores.size() == input_dim, "SHAP selector needs one score per dimension");
  }
}

std::vector<int> TopK(const Vector& scores, int k) {
  const int m = static_cast<int>(scores.size());
  Require(k >= 1 && k <= m, "top-k needs 1 <= k <= number of scores");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] > scores[b];
  });
  order.resize(k);
  return order;
}

void ShapPoolConfig::Validate() const {
  forest.Validate();
  Require(k >= 1, "pool k must be positive");
  Require(background_size >= 1, "background size must be positive");
  Require(holdout_fraction > 0.0 && holdout_fraction < 1.0,
          "holdout fraction must lie in (0, 1)");
}

namespace {

void CheckLabels(const std::vector<int>& y, int num_classes, std::size_t rows) {
  CheckShape(y.size() == rows, "label count does not match embedding rows");
  Require(num_classes >= 2, "need at least two classes");
  std::set<int> present;
  for (const int c : y) {
    Require(c >= 0 && c < num_classes, "label out of range");
    present.insert(c);
  }
  Require(present.size() >= 2, "degenerate labels: only one class present");
}

}  // namespace

ShapPoolFit FitShapPool(const Matrix& z_train, const std::vector<int>& y_train,
                        const Matrix& z_attr, int num_classes,
                        const ShapPoolConfig& config) {
  config.Validate();
  CheckShape(z_train.cols() == z_attr.cols(),
             "training and attribution embeddings differ in width");
  CheckShape(z_attr.rows() >= 1, "no rows to attribute");
  Require(config.k <= z_train.cols(), "k exceeds the embedding width");
  CheckLabels(y_train, num_classes, static_cast<std::size_t>(z_train.rows()));

  ShapPoolFit fit;
  forest::ForestConfig fc = config.forest;
  fc.seed = DeriveSeed(config.seed, "pool-forest");
  fc.num_threads = config.num_threads;
  fit.model = forest::FitForest(z_train, y_train, num_classes, fc);
  fit.background = attribution::SampleBackground(
      z_train, config.background_size, DeriveSeed(config.seed, "pool-background"));
  fit.eval_inputs = z_attr;
  fit.attribution = attribution::AttributionMatrix(fit.model, z_attr, fit.background,
                                                   config.num_threads);

  DimensionSelector& s = fit.selector;
  s.method = PoolMethod::kShap;
  s.k = config.k;
  s.input_dim = static_cast<int>(z_train.cols());
  s.scores = fit.attribution.scores;
  s.indices = TopK(s.scores, config.k);
  s.fit_seed = config.seed;
  s.Validate();
  return fit;
}

ShapPoolFit FitShapPool(const Matrix& z_fit, const std::vector<int>& y,
                        int num_classes, const ShapPoolConfig& config) {
  config.Validate();
  Require(z_fit.rows() >= 20, "SHAP pool fitting needs at least 20 rows");
  CheckLabels(y, num_classes, static_cast<std::size_t>(z_fit.rows()));

  // Class-stratified holdout: round(fraction * n_c) rows of each class, kept
  // so that both sides stay nonempty.
  std::mt19937_64 rng(DeriveSeed(config.seed, "pool-split"));
  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < static_cast<int>(y.size()); ++i) by_class[y[i]].push_back(i);
  std::vector<int> train_rows, attr_rows;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    int n_hold = static_cast<int>(std::lround(config.holdout_fraction *
                                              static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_hold = std::clamp(n_hold, 1, static_cast<int>(rows.size()) - 1);
    else n_hold = 0;
    attr_rows.insert(attr_rows.end(), rows.begin(), rows.begin() + n_hold);
    train_rows.insert(train_rows.end(), rows.begin() + n_hold, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(attr_rows.begin(), attr_rows.end());

  Matrix z_train(static_cast<Eigen::Index>(train_rows.size()), z_fit.cols());
  std::vector<int> y_train;
  for (std::size_t r = 0; r < train_rows.size(); ++r) {
    z_train.row(static_cast<Eigen::Index>(r)) = z_fit.row(train_rows[r]);
    y_train.push_back(y[train_rows[r]]);
  }
  Matrix z_attr(static_cast<Eigen::Index>(attr_rows.size()), z_fit.cols());
  for (std::size_t r = 0; r < attr_rows.size(); ++r)
    z_attr.row(static_cast<Eigen::Index>(r)) = z_fit.row(attr_rows[r]);
  return FitShapPool(z_train, y_train, z_attr, num_classes, config);
}

DimensionSelector MakeBaselinePool(PoolMethod method, int k, std::uint64_t seed,
                                   int input_dim) {
  Require(method != PoolMethod::kShap, "SHAP selectors come from FitShapPool");
  DimensionSelector s;
  s.method = method;
  s.k = k;
  s.input_dim = input_dim;
  s.fit_seed = seed;
  if (method == PoolMethod::kRand) {
    Require(k >= 1 && k <= input_dim, "pool needs 1 <= k <= input_dim");
    std::vector<int> all(input_dim);
    std::iota(all.begin(), all.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, input_dim - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    s.indices.assign(all.begin(), all.begin() + k);
  }
  s.Validate();
  return s;
}

Vector ApplyPool(const DimensionSelector& selector, std::span<const double> z) {
  CheckShape(z.size() == static_cast<std::size_t>(selector.input_dim),
             "pool input has length " + std::to_string(z.size()) + ", expected " +
                 std::to_string(selector.input_dim));
  Vector f(selector.k);
  switch (selector.method) {
    case PoolMethod::kShap:
    case PoolMethod::kRand:
      for (int j = 0; j < selector.k; ++j) f[j] = z[selector.indices[j]];
      break;
    case PoolMethod::kAvg: {
      const int w = selector.window();
      for (int j = 0; j < selector.k; ++j) {
        double s = 0.0;
        for (int t = 0; t < w; ++t) s += z[j * w + t];
        f[j] = s / w;
      }
      break;
    }
    case PoolMethod::kMax: {
      const int w = selector.window();
      for (int j = 0; j < selector.k; ++j) {
        double m = z[j * w];
        for (int t = 1; t < w; ++t) m = std::max(m, z[j * w + t]);
        f[j] = m;
      }
      break;
    }
  }
  CheckShape(f.size() == selector.k, "pooled vector has the wrong length");
  return f;
}

Matrix ApplyPool(const DimensionSelector& selector, const Matrix& z) {
  Matrix out(z.rows(), selector.k);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    out.row(i) = ApplyPool(selector, forest::Row(z, i)).transpose();
  return out;
}

nlohmann::json ToJson(const DimensionSelector& selector) {
  nlohmann::json j = {{"method", PoolMethodName(selector.method)},
                      {"k", selector.k},
                      {"input_dim", selector.input_dim},
                      {"indices", selector.indices},
                      {"fit_seed", selector.fit_seed}};
  if (selector.method == PoolMethod::kAvg || selector.method == PoolMethod::kMax)
    j["window"] = selector.window();
  j["scores"] = std::vector<double>(selector.scores.data(),
                                    selector.scores.data() + selector.scores.size());
  return j;
}

DimensionSelector SelectorFromJson(const nlohmann::json& j) {
  DimensionSelector s;
  try {
    s.method = ParsePoolMethod(j.at("method").get<std::string>());
    s.k = j.at("k").get<int>();
    s.input_dim = j.at("input_dim").get<int>();
    s.indices = j.at("indices").get<std::vector<int>>();
    s.fit_seed = j.at("fit_seed").get<std::uint64_t>();
    const auto scores = j.at("scores").get<std::vector<double>>();
    s.scores = Eigen::Map<const Vector>(scores.data(),
                                        static_cast<Eigen::Index>(scores.size()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed selector: ") + e.what());
  }
  s.Validate();
  return s;
}

}  // namespace shapfuse::pool
