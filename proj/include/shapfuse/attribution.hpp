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

// Shapley attribution of tree-ensemble outputs to input dimensions.
//
// The game is the interventional (baseline) one: a coalition S takes its
// values from the foreground x^p and every other feature from a background
// x^a, and v(S) is the class probability of that hybrid input. Attributions
// against a background set are the mean of the single-background ones.
//
// Two estimators are provided and must agree to rounding:
//   ExactShapley  enumerates every coalition (M <= 20),
//   TreeShapley   walks each tree once per (x^p, x^a) pair, splitting the
//                 path whenever the two inputs disagree at a node.

#ifndef SHAPFUSE_ATTRIBUTION_HPP_
#define SHAPFUSE_ATTRIBUTION_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "shapfuse/common.hpp"
#include "shapfuse/forest.hpp"

namespace shapfuse::attribution {

inline constexpr int kMaxExactFeatures = 20;

struct AttributionVector {
  Vector phi;         // one entry per input dimension
  double phi0 = 0.0;  // f(x^a), or its mean over the background set
};

// All classes at once: phi is M x C, phi0 has length C.
struct MultiClassAttribution {
  Matrix phi;
  Vector phi0;
};

// v(S) for a single background. `coalition[i]` selects x^p for feature i.
double CharacteristicValue(const forest::TreeEnsemble& model,
                           const std::vector<bool>& coalition,
                           std::span<const double> foreground,
                           std::span<const double> background,
                           int target_class);

// Weighted sum of marginal contributions over all 2^(M-1) coalitions per
// feature. Throws CapacityError when M > kMaxExactFeatures.
AttributionVector ExactShapley(const forest::TreeEnsemble& model,
                               std::span<const double> foreground,
                               std::span<const double> background,
                               int target_class);

AttributionVector TreeShapley(const forest::TreeEnsemble& model,
                              std::span<const double> foreground,
                              std::span<const double> background,
                              int target_class);

MultiClassAttribution TreeShapleyAllClasses(const forest::TreeEnsemble& model,
                                            std::span<const double> foreground,
                                            std::span<const double> background);

// Mean of TreeShapley over the rows of `background` (|D| >= 1).
AttributionVector ShapleyOverBackground(const forest::TreeEnsemble& model,
                                        std::span<const double> foreground,
                                        const Matrix& background,
                                        int target_class);

MultiClassAttribution ShapleyOverBackgroundAllClasses(
    const forest::TreeEnsemble& model, std::span<const double> foreground,
    const Matrix& background);

struct AttributionReport {
  // score_j = mean over samples and classes of |phi_j|.
  Vector scores;
  // C x M, mean |phi| per class.
  Matrix per_class_scores;
  // Per class: N x M attributions of every evaluated sample.
  std::vector<Matrix> phi;
  // N x C base values.
  Matrix base_values;
};

// Attributions of every row of `eval` against `background`, for all classes.
// Samples are processed in parallel when num_threads > 1; reductions run in a
// fixed order so the result does not depend on the thread count.
AttributionReport AttributionMatrix(const forest::TreeEnsemble& model,
                                    const Matrix& eval,
                                    const Matrix& background,
                                    int num_threads = 1);

// Up to `max_rows` distinct rows of `pool` drawn without replacement.
Matrix SampleBackground(const Matrix& pool, int max_rows, std::uint64_t seed);

}  // namespace shapfuse::attribution

#endif  // SHAPFUSE_ATTRIBUTION_HPP_
