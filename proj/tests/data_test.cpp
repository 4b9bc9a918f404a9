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

#include "shapfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "shapfuse/forest.hpp"

namespace shapfuse::data {
namespace {

SynthConfig Small(int n = 200) {
  SynthConfig c;
  c.num_patients = n;
  c.seed = 7;
  return c;
}

bool SameCohort(const Cohort& a, const Cohort& b) {
  if (a.patients.size() != b.patients.size()) return false;
  for (std::size_t i = 0; i < a.patients.size(); ++i) {
    const Patient& p = a.patients[i];
    const Patient& q = b.patients[i];
    if (p.id != q.id || p.label != q.label || p.bags.size() != q.bags.size()) return false;
    for (const auto& [m, bag] : p.bags) {
      const Bag& other = q.bags.at(m);
      if (bag.instances.rows() != other.instances.rows() ||
          bag.instances.cols() != other.instances.cols() ||
          !(bag.instances.array() == other.instances.array()).all())
        return false;
    }
  }
  return true;
}

TEST(SyntheticCohortTest, DeterministicGivenSeed) {
  const Cohort a = GenerateSyntheticCohort(Small());
  const Cohort b = GenerateSyntheticCohort(Small());
  EXPECT_TRUE(SameCohort(a, b));
  SynthConfig other = Small();
  other.seed = 8;
  EXPECT_FALSE(SameCohort(a, GenerateSyntheticCohort(other)));
}

TEST(SyntheticCohortTest, StructureAndPairing) {
  const SynthConfig cfg = Small();
  const Cohort c = GenerateSyntheticCohort(cfg);
  ASSERT_EQ(c.patients.size(), 200u);
  EXPECT_NO_THROW(c.Validate());
  std::vector<int> per_class(4, 0);
  for (const Patient& p : c.patients) {
    ++per_class[p.label];
    ASSERT_EQ(p.bags.size(), 3u);
    for (const auto& [m, bag] : p.bags) {
      EXPECT_EQ(bag.label, p.label);
      EXPECT_EQ(bag.patient_id, p.id);
      EXPECT_EQ(bag.dim(), 64);
      EXPECT_GE(bag.size(), cfg.min_bag_size);
      EXPECT_TRUE(AllFinite(bag.instances));
    }
    EXPECT_EQ(p.bags.at(Modality::kRecHE).size(), p.bags.at(Modality::kHE).size());
  }
  for (const int n : per_class) EXPECT_EQ(n, 50);
}

TEST(SyntheticCohortTest, RejectsInvalidConfigs) {
  SynthConfig c = Small();
  c.ihc_signal_dims = c.he_signal_dims;
  EXPECT_THROW(GenerateSyntheticCohort(c), InvalidArgument);
  c = Small();
  c.noise_scale = 0.0;
  EXPECT_THROW(GenerateSyntheticCohort(c), InvalidArgument);
  c = Small();
  c.num_patients = 2;  // fewer patients than classes leaves a class empty
  EXPECT_THROW(GenerateSyntheticCohort(c), InvalidArgument);
  c = Small();
  c.he_signal_dims = {70};
  EXPECT_THROW(GenerateSyntheticCohort(c), InvalidArgument);
}

// Signal lives only in the configured dimensions: class means differ there
// and agree (up to noise) elsewhere.
TEST(SyntheticCohortTest, SignalConfinedToConfiguredDimensions) {
  const SynthConfig cfg = Small(400);
  const Cohort c = GenerateSyntheticCohort(cfg);
  auto class_mean_spread = [&](Modality m, int dim) {
    std::vector<double> sum(4, 0.0), count(4, 0.0);
    for (const Patient& p : c.patients) {
      const Bag& b = p.bags.at(m);
      sum[p.label] += b.instances.col(dim).sum();
      count[p.label] += b.size();
    }
    double lo = 1e9, hi = -1e9;
    for (int k = 0; k < 4; ++k) {
      lo = std::min(lo, sum[k] / count[k]);
      hi = std::max(hi, sum[k] / count[k]);
    }
    return hi - lo;
  };
  double he_signal = 0.0, he_noise = 0.0, ihc_signal = 0.0;
  for (const int d : cfg.he_signal_dims) he_signal = std::max(he_signal, class_mean_spread(Modality::kHE, d));
  for (int d = 32; d < 64; ++d) he_noise = std::max(he_noise, class_mean_spread(Modality::kHE, d));
  for (const int d : cfg.ihc_signal_dims) ihc_signal = std::max(ihc_signal, class_mean_spread(Modality::kIHC, d));
  EXPECT_GT(he_signal, 0.3);
  EXPECT_GT(ihc_signal, 0.3);
  EXPECT_LT(he_noise, 0.2);
}

TEST(ReconstructionTest, IdentityMixingWithoutNoiseCopiesHe) {
  const Cohort c = GenerateSyntheticCohort(Small(8));
  const Patient& p = c.patients[3];
  ReconstructionModel model;
  model.he_mixing = Matrix::Identity(64, 64);
  model.ihc_mixing = Matrix::Zero(64, 64);
  model.noise_scale = 0.0;
  const Bag rec = SimulateReconstructedModality(p.bags.at(Modality::kHE),
                                                p.bags.at(Modality::kIHC), model, 1);
  EXPECT_EQ(rec.modality, Modality::kRecHE);
  EXPECT_EQ(rec.patient_id, p.id);
  EXPECT_TRUE((rec.instances.array() == p.bags.at(Modality::kHE).instances.array()).all());
}

TEST(ReconstructionTest, DeterministicAndRejectsMismatchedPatients) {
  const Cohort c = GenerateSyntheticCohort(Small(8));
  const ReconstructionModel model = MakeReconstructionModel({}, 64, 5);
  const Bag& he = c.patients[0].bags.at(Modality::kHE);
  const Bag& ihc = c.patients[0].bags.at(Modality::kIHC);
  const Bag a = SimulateReconstructedModality(he, ihc, model, 11);
  const Bag b = SimulateReconstructedModality(he, ihc, model, 11);
  EXPECT_TRUE((a.instances.array() == b.instances.array()).all());
  EXPECT_EQ(a.size(), he.size());
  const Bag d = SimulateReconstructedModality(he, ihc, model, 12);
  EXPECT_FALSE((a.instances.array() == d.instances.array()).all());
  EXPECT_THROW(SimulateReconstructedModality(
                   he, c.patients[1].bags.at(Modality::kIHC), model, 11),
               InvalidArgument);
}

TEST(SplitTest, HundredPatientsEightyTenTen) {
  const Cohort c = GenerateSyntheticCohort(Small(100));
  const SplitAssignment s = StratifiedSplit(c, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.CountIn(Part::kTrain), 80u);
  EXPECT_EQ(s.CountIn(Part::kVal), 10u);
  EXPECT_EQ(s.CountIn(Part::kTest), 10u);
  EXPECT_EQ(s.part_of.size(), 100u);
  for (const Part p : kAllParts) {
    const auto ids = s.PatientsIn(c, p);
    std::vector<int> per_class(4, 0);
    for (const auto& id : ids) ++per_class[c.patient(id).label];
    const double n = static_cast<double>(ids.size());
    for (const int k : per_class) {
      // |count(c,p)/count(p) - prior(c)| <= 1/count(p)
      EXPECT_LE(std::abs(k / n - 0.25), 1.0 / n + 1e-12);
    }
  }
}

TEST(SplitTest, UnbalancedClassesStayWithinOnePatient) {
  Cohort c = GenerateSyntheticCohort(Small(103));
  // Relabel to an unbalanced prior.
  for (std::size_t i = 0; i < c.patients.size(); ++i) {
    const int label = i < 50 ? 0 : i < 80 ? 1 : i < 95 ? 2 : 3;
    c.patients[i].label = label;
    for (auto& [m, b] : c.patients[i].bags) b.label = label;
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SplitAssignment s = StratifiedSplit(c, {0.8, 0.1, 0.1}, seed);
    std::vector<int> class_total(4, 0);
    for (const Patient& p : c.patients) ++class_total[p.label];
    for (const Part p : kAllParts) {
      const auto ids = s.PatientsIn(c, p);
      std::vector<int> per_class(4, 0);
      for (const auto& id : ids) ++per_class[c.patient(id).label];
      const double n = static_cast<double>(ids.size());
      for (int k = 0; k < 4; ++k)
        EXPECT_LE(std::abs(per_class[k] / n - class_total[k] / 103.0), 1.0 / n + 1e-12);
    }
  }
}

TEST(SplitTest, SeedsChangeAssignmentNotSizes) {
  const Cohort c = GenerateSyntheticCohort(Small(100));
  const SplitAssignment a = StratifiedSplit(c, {0.8, 0.1, 0.1}, 1);
  const SplitAssignment b = StratifiedSplit(c, {0.8, 0.1, 0.1}, 2);
  EXPECT_NE(a.part_of, b.part_of);
  for (const Part p : kAllParts) EXPECT_EQ(a.CountIn(p), b.CountIn(p));
  EXPECT_EQ(a.part_of, StratifiedSplit(c, {0.8, 0.1, 0.1}, 1).part_of);
}

TEST(SplitTest, AllTrainAndErrors) {
  const Cohort c = GenerateSyntheticCohort(Small(40));
  const SplitAssignment s = StratifiedSplit(c, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(s.CountIn(Part::kTrain), 40u);
  EXPECT_THROW(StratifiedSplit(c, {0.5, 0.2, 0.2}, 1), InvalidArgument);
  EXPECT_THROW(StratifiedSplit(c, {0.9, 0.2, -0.1}, 1), InvalidArgument);
  const Cohort tiny = GenerateSyntheticCohort(Small(8));  // 2 patients per class
  EXPECT_THROW(StratifiedSplit(tiny, {0.8, 0.1, 0.1}, 1), InvalidArgument);
}

TEST(BagsForTest, KeepsRequestedOrder) {
  const Cohort c = GenerateSyntheticCohort(Small(12));
  const std::vector<std::string> ids = {c.patients[5].id, c.patients[2].id};
  const auto bags = BagsFor(c, Modality::kIHC, ids);
  ASSERT_EQ(bags.size(), 2u);
  EXPECT_EQ(bags[0]->patient_id, ids[0]);
  EXPECT_EQ(bags[1]->modality, Modality::kIHC);
}

// Bag means over the planted dimensions of the requested modalities.
Matrix OracleFeatures(const Cohort& c, const std::vector<std::string>& ids,
                      const SynthConfig& s, bool he, bool ihc) {
  std::vector<std::pair<Modality, int>> cols;
  if (he) for (const int d : s.he_signal_dims) cols.emplace_back(Modality::kHE, d);
  if (ihc) for (const int d : s.ihc_signal_dims) cols.emplace_back(Modality::kIHC, d);
  Matrix x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Patient& p = c.patient(ids[i]);
    for (std::size_t j = 0; j < cols.size(); ++j)
      x(i, j) = p.bags.at(cols[j].first).instances.col(cols[j].second).mean();
  }
  return x;
}

TEST(CohortTest, DefaultCohortNeedsBothStains) {
  // Forest on oracle-pooled features, scored on VAL+TEST and averaged over
  // three cohort seeds.
  double acc[3] = {0.0, 0.0, 0.0};
  const std::pair<bool, bool> views[3] = {{true, true}, {true, false}, {false, true}};
  for (int r = 0; r < 3; ++r) {
    SynthConfig s;
    s.seed = 7 + r;
    const Cohort c = GenerateSyntheticCohort(s);
    const SplitAssignment split = StratifiedSplit(c, {0.8, 0.1, 0.1}, r);
    const auto train = split.PatientsIn(c, Part::kTrain);
    auto held = split.PatientsIn(c, Part::kVal);
    const auto test = split.PatientsIn(c, Part::kTest);
    held.insert(held.end(), test.begin(), test.end());
    std::vector<int> y_train, y_held;
    for (const auto& id : train) y_train.push_back(c.patient(id).label);
    for (const auto& id : held) y_held.push_back(c.patient(id).label);
    for (int v = 0; v < 3; ++v) {
      forest::ForestConfig fc;
      fc.seed = 1;
      const auto model = forest::FitForest(
          OracleFeatures(c, train, s, views[v].first, views[v].second), y_train,
          s.num_classes, fc);
      const Matrix x = OracleFeatures(c, held, s, views[v].first, views[v].second);
      int correct = 0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best = 0;
        forest::PredictProba(model, forest::Row(x, i)).maxCoeff(&best);
        correct += best == y_held[i];
      }
      acc[v] += correct / static_cast<double>(held.size()) / 3.0;
    }
  }
  EXPECT_GE(acc[0], 0.95);
  EXPECT_LE(acc[1], 0.80);
  EXPECT_LE(acc[2], 0.80);
  EXPECT_GE(acc[0] - std::max(acc[1], acc[2]), 0.15);
}

}  // namespace
}  // namespace shapfuse::data
