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

#ifndef SHAPFUSE_METRICS_HPP_
#define SHAPFUSE_METRICS_HPP_

#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "shapfuse/common.hpp"

namespace shapfuse::metrics {

struct Metrics {
  double accuracy = 0.0;
  // Macro one-vs-rest ROC AUC. Absent when some class has no positive or no
  // negative test sample.
  std::optional<double> auc;
  // confusion(true, predicted)
  Eigen::MatrixXi confusion;
};

// Index of the largest entry; ties go to the lower index.
int Argmax(std::span<const double> v);

// Area under the ROC curve by the trapezoid rule over distinct score
// thresholds (tied scores move together). Absent without both classes.
std::optional<double> BinaryAuc(std::span<const double> scores,
                                const std::vector<bool>& positive);

// Mean over classes of BinaryAuc(scores[:, c], y == c). Absent if any class
// is degenerate.
std::optional<double> MacroAucOvr(const Matrix& scores, const std::vector<int>& y);

// `proba` is N x C; predictions are row argmaxes.
Metrics Evaluate(const Matrix& proba, const std::vector<int>& y);

nlohmann::json ToJson(const Metrics& m);

}  // namespace shapfuse::metrics

#endif  // SHAPFUSE_METRICS_HPP_
