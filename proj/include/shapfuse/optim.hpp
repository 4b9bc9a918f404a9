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

#ifndef SHAPFUSE_OPTIM_HPP_
#define SHAPFUSE_OPTIM_HPP_

#include <cmath>
#include <span>
#include <vector>

#include "shapfuse/common.hpp"

namespace shapfuse {

// Adam over a fixed list of parameter groups. Weight decay is added to the
// gradient (L2 form), so a zero learning rate leaves parameters untouched.
class Adam {
 public:
  Adam(std::vector<std::size_t> group_sizes, double learning_rate,
       double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8)
      : lr_(learning_rate),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(epsilon) {
    for (const std::size_t n : group_sizes) {
      m_.emplace_back(Vector::Zero(static_cast<Eigen::Index>(n)));
      v_.emplace_back(Vector::Zero(static_cast<Eigen::Index>(n)));
    }
  }

  template <std::size_t N>
  void Step(const std::array<std::span<double>, N>& params,
            const std::array<std::span<const double>, N>& grads) {
    CheckShape(N == m_.size(), "Adam: group count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t g = 0; g < N; ++g) {
      CheckShape(params[g].size() == static_cast<std::size_t>(m_[g].size()) &&
                     grads[g].size() == params[g].size(),
                 "Adam: group size mismatch");
      const auto n = static_cast<Eigen::Index>(params[g].size());
      Eigen::Map<Eigen::ArrayXd> theta(params[g].data(), n);
      Eigen::Map<const Eigen::ArrayXd> grad(grads[g].data(), n);
      auto m = m_[g].array();
      auto v = v_[g].array();
      const Eigen::ArrayXd gd = grad + wd_ * theta;
      m = beta1_ * m + (1.0 - beta1_) * gd;
      v = beta2_ * v + (1.0 - beta2_) * gd.square();
      theta -= lr_ * (m / c1) / ((v / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_;
  double wd_;
  double beta1_;
  double beta2_;
  double eps_;
  int t_ = 0;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
};

}  // namespace shapfuse

#endif  // SHAPFUSE_OPTIM_HPP_
