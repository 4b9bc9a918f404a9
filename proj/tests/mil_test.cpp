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

#include "shapfuse/mil.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace shapfuse::mil {
namespace {

MilShape SmallShape() { return {6, 10, 5, 3}; }

data::Bag RandomBag(int k, int dim, int label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  data::Bag b;
  b.instances.resize(k, dim);
  for (Eigen::Index i = 0; i < b.instances.size(); ++i) b.instances.data()[i] = n(rng);
  b.label = label;
  b.patient_id = "P" + std::to_string(seed);
  return b;
}

// Independent scalar-loop forward pass.
struct Reference {
  std::vector<double> attention, z, logits;
};

Reference LoopForward(const Matrix& x, const MilParams& p) {
  const int k = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  const int hd = static_cast<int>(p.fc_weight.rows());
  const int ad = static_cast<int>(p.attn_v.rows());
  const int c = static_cast<int>(p.cls_weight.rows());
  std::vector<std::vector<double>> h(k, std::vector<double>(hd));
  std::vector<double> e(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < hd; ++j) {
      double s = p.fc_bias[j];
      for (int t = 0; t < d; ++t) s += p.fc_weight(j, t) * x(i, t);
      h[i][j] = s > 0.0 ? s : 0.0;
    }
    double score = 0.0;
    for (int a = 0; a < ad; ++a) {
      double v = 0.0, u = 0.0;
      for (int j = 0; j < hd; ++j) {
        v += p.attn_v(a, j) * h[i][j];
        u += p.attn_u(a, j) * h[i][j];
      }
      score += p.attn_w[a] * std::tanh(v) / (1.0 + std::exp(-u));
    }
    e[i] = score;
  }
  Reference r;
  const double mx = *std::max_element(e.begin(), e.end());
  double total = 0.0;
  for (const double v : e) total += std::exp(v - mx);
  for (const double v : e) r.attention.push_back(std::exp(v - mx) / total);
  r.z.assign(hd, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < hd; ++j) r.z[j] += r.attention[i] * h[i][j];
  for (int cl = 0; cl < c; ++cl) {
    double s = p.cls_bias[cl];
    for (int j = 0; j < hd; ++j) s += p.cls_weight(cl, j) * r.z[j];
    r.logits.push_back(s);
  }
  return r;
}

TEST(MilForwardTest, MatchesScalarReference) {
  MilParams p = MilParams::Init(SmallShape(), 3);
  p.fc_bias.setConstant(0.1);
  p.cls_bias << 0.3, -0.2, 0.05;
  for (const int k : {1, 2, 7}) {
    const data::Bag bag = RandomBag(k, 6, 1, 10 + k);
    const BagForward f = Forward(bag, p);
    const Reference r = LoopForward(bag.instances, p);
    ASSERT_EQ(f.attention.size(), k);
    for (int i = 0; i < k; ++i) EXPECT_NEAR(f.attention[i], r.attention[i], 1e-12);
    for (int j = 0; j < 10; ++j) EXPECT_NEAR(f.z[j], r.z[j], 1e-12);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(f.logits[c], r.logits[c], 1e-12);
  }
}

TEST(MilForwardTest, AttentionIsADistribution) {
  const MilParams p = MilParams::Init({64, 512, 128, 4}, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const data::Bag bag = RandomBag(1 + trial % 9, 64, 0, 100 + trial);
    const BagForward f = Forward(bag, p);
    EXPECT_NEAR(f.attention.sum(), 1.0, 1e-12);
    EXPECT_GE(f.attention.minCoeff(), 0.0);
    EXPECT_EQ(f.z.size(), 512);
  }
}

TEST(MilForwardTest, SingleInstanceGetsFullWeight) {
  const MilParams p = MilParams::Init(SmallShape(), 2);
  const data::Bag bag = RandomBag(1, 6, 0, 5);
  const BagForward f = Forward(bag, p);
  EXPECT_DOUBLE_EQ(f.attention[0], 1.0);
  const Matrix h = CompressInstances(bag.instances, p);
  for (int j = 0; j < 10; ++j) EXPECT_DOUBLE_EQ(f.z[j], h(0, j));
}

TEST(MilForwardTest, PermutationInvariant) {
  const MilParams p = MilParams::Init(SmallShape(), 4);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    data::Bag bag = RandomBag(8, 6, 2, 200 + trial);
    const BagForward f = Forward(bag, p);
    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    data::Bag shuffled = bag;
    for (int i = 0; i < 8; ++i) shuffled.instances.row(i) = bag.instances.row(perm[i]);
    const BagForward g = Forward(shuffled, p);
    EXPECT_LE((f.z - g.z).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((f.logits - g.logits).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MilForwardTest, RejectsWrongInputWidth) {
  const MilParams p = MilParams::Init(SmallShape(), 4);
  EXPECT_THROW(Forward(RandomBag(3, 5, 0, 1), p), ShapeError);
}

TEST(MilGradientTest, MatchesCentralDifferences) {
  MilParams p = MilParams::Init(SmallShape(), 8);
  p.fc_bias.setConstant(0.05);  // keep relu units away from the kink
  const data::Bag bag = RandomBag(5, 6, 2, 31);
  MilParams grad;
  LossAndGradient(bag.instances, bag.label, p, &grad);
  auto pg = p.groups();
  const auto gg = std::as_const(grad).groups();
  int checked = 0;
  for (int g = 0; g < MilParams::kNumGroups; ++g) {
    for (std::size_t i = 0; i < pg[g].size(); ++i) {
      const double saved = pg[g][i];
      const double h = 1e-4;
      pg[g][i] = saved + h;
      const double up = LossAndGradient(bag.instances, bag.label, p, nullptr);
      pg[g][i] = saved - h;
      const double down = LossAndGradient(bag.instances, bag.label, p, nullptr);
      pg[g][i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = gg[g][i];
      const double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
      EXPECT_LE(rel, 1e-4) << MilParams::kGroupNames[g] << "[" << i << "] analytic "
                           << analytic << " numeric " << numeric;
      ++checked;
    }
  }
  EXPECT_EQ(checked, static_cast<int>(p.NumParameters()));
}

TEST(MilTrainTest, ZeroLearningRateKeepsInitialParameters) {
  std::vector<data::Bag> bags;
  for (int i = 0; i < 8; ++i) bags.push_back(RandomBag(3, 6, i % 3, 50 + i));
  std::vector<const data::Bag*> ptr;
  for (const auto& b : bags) ptr.push_back(&b);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  cfg.max_epochs = 3;
  cfg.seed = 9;
  const MilModel m = TrainMil(ptr, ptr, SmallShape(), cfg);
  const MilParams init = MilParams::Init(SmallShape(), DeriveSeed(9, "mil-init"));
  const auto a = m.params.groups();
  const auto b = init.groups();
  for (int g = 0; g < MilParams::kNumGroups; ++g)
    for (std::size_t i = 0; i < a[g].size(); ++i) ASSERT_EQ(a[g][i], b[g][i]);
}

// Bags of class c carry one instance with a large value in dimension c.
TEST(MilTrainTest, FitsSeparableToyProblem) {
  std::vector<data::Bag> bags;
  for (int i = 0; i < 30; ++i) {
    data::Bag b = RandomBag(4, 6, i % 3, 500 + i);
    b.instances *= 0.1;
    b.instances(i % 4, b.label) += 3.0;
    bags.push_back(b);
  }
  std::vector<const data::Bag*> ptr;
  for (const auto& b : bags) ptr.push_back(&b);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.seed = 1;
  const MilModel m = TrainMil(ptr, ptr, SmallShape(), cfg);
  EXPECT_TRUE(m.trained);
  const Matrix proba = PredictProba(m, ptr);
  int correct = 0;
  for (int i = 0; i < 30; ++i) {
    Eigen::Index arg;
    proba.row(i).maxCoeff(&arg);
    correct += arg == bags[i].label;
    EXPECT_NEAR(proba.row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(correct, 30);
  EXPECT_LT(m.report.best_val_loss, m.report.val_loss.front());
}

TEST(MilTrainTest, DeterministicAndSerializable) {
  std::vector<data::Bag> bags;
  for (int i = 0; i < 9; ++i) bags.push_back(RandomBag(3, 6, i % 3, 70 + i));
  std::vector<const data::Bag*> ptr;
  for (const auto& b : bags) ptr.push_back(&b);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.max_epochs = 4;
  cfg.seed = 2;
  const MilModel a = TrainMil(ptr, ptr, SmallShape(), cfg);
  const MilModel b = TrainMil(ptr, ptr, SmallShape(), cfg);
  EXPECT_EQ(ToJson(a).dump(), ToJson(b).dump());
  const MilModel back = MilModelFromJson(ToJson(a));
  const EmbeddingTable ea = ExtractEmbeddings(a, ptr);
  const EmbeddingTable eb = ExtractEmbeddings(back, ptr);
  EXPECT_TRUE((ea.z.array() == eb.z.array()).all());
  EXPECT_EQ(ea.patient_ids[4], bags[4].patient_id);
  EXPECT_EQ(ea.labels[4], bags[4].label);
}

TEST(MilTrainTest, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.Validate(), InvalidArgument);
  std::vector<const data::Bag*> none;
  EXPECT_THROW(TrainMil(none, none, SmallShape(), TrainConfig{}), InvalidArgument);
}

}  // namespace
}  // namespace shapfuse::mil
