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

#include "shapfuse/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace shapfuse::metrics {

int Argmax(std::span<const double> v) {
  Require(!v.empty(), "argmax of an empty vector");
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

std::optional<double> BinaryAuc(std::span<const double> scores,
                                const std::vector<bool>& positive) {
  CheckShape(scores.size() == positive.size(), "AUC: score/label length mismatch");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  // Sweep thresholds from high to low; a run of tied scores is one ROC step.
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double dtp = 0.0, dfp = 0.0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? dtp : dfp) += 1.0;
      ++j;
    }
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (n_pos * n_neg);
}

std::optional<double> MacroAucOvr(const Matrix& scores, const std::vector<int>& y) {
  CheckShape(static_cast<std::size_t>(scores.rows()) == y.size(),
             "AUC: score rows do not match labels");
  double total = 0.0;
  std::vector<double> col(y.size());
  std::vector<bool> pos(y.size());
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      col[i] = scores(static_cast<Eigen::Index>(i), c);
      pos[i] = y[i] == c;
    }
    const auto auc = BinaryAuc(col, pos);
    if (!auc) return std::nullopt;
    total += *auc;
  }
  return total / static_cast<double>(scores.cols());
}

Metrics Evaluate(const Matrix& proba, const std::vector<int>& y) {
  CheckShape(static_cast<std::size_t>(proba.rows()) == y.size(),
             "prediction rows do not match labels");
  Require(!y.empty(), "cannot evaluate on an empty set");
  const int c = static_cast<int>(proba.cols());
  Metrics m;
  m.confusion = Eigen::MatrixXi::Zero(c, c);
  for (std::size_t i = 0; i < y.size(); ++i) {
    Require(y[i] >= 0 && y[i] < c, "label out of range");
    const int pred = Argmax({proba.data() + i * proba.cols(),
                             static_cast<std::size_t>(proba.cols())});
    ++m.confusion(y[i], pred);
  }
  m.accuracy = static_cast<double>(m.confusion.trace()) / static_cast<double>(y.size());
  m.auc = MacroAucOvr(proba, y);
  return m;
}

nlohmann::json ToJson(const Metrics& m) {
  nlohmann::json confusion = nlohmann::json::array();
  for (int i = 0; i < m.confusion.rows(); ++i) {
    std::vector<int> row(m.confusion.cols());
    for (int j = 0; j < m.confusion.cols(); ++j) row[j] = m.confusion(i, j);
    confusion.push_back(row);
  }
  nlohmann::json j = {{"accuracy", m.accuracy}, {"confusion", confusion}};
  j["auc"] = m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr);
  return j;
}

}  // namespace shapfuse::metrics
