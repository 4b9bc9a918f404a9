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
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace shapfuse::data {

namespace {

std::string PatientId(int index, int total) {
  int width = 4;
  for (int t = total; t >= 10000; t /= 10) ++width;
  std::ostringstream os;
  os << 'P' << std::setw(width) << std::setfill('0') << index;
  return os.str();
}

// Centered, unit-norm prototype directions living in `dims` of a d-vector.
std::vector<Vector> MakePrototypes(int count, const std::vector<int>& dims,
                                   int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int s = static_cast<int>(dims.size());
  Matrix raw(count, s);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < s; ++j) raw(i, j) = normal(rng);
  if (count > 1) {
    const Eigen::RowVectorXd mean = raw.colwise().mean();
    raw.rowwise() -= mean;
  }
  std::vector<Vector> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Vector v = Vector::Zero(d);
    const double norm = raw.row(i).norm();
    for (int j = 0; j < s; ++j) v(dims[j]) = raw(i, j) / norm;
    out.push_back(std::move(v));
  }
  return out;
}

Matrix NoiseMatrix(int rows, int cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

// Bag of K instances, a subset of which carries `signal`.
Matrix MakeInstances(const Vector& signal, const SynthConfig& config,
                     std::mt19937_64& rng) {
  std::normal_distribution<double> size_dist(config.mean_bag_size,
                                             config.bag_size_dispersion);
  const int k = std::max(config.min_bag_size,
                         static_cast<int>(std::lround(size_dist(rng))));
  Matrix x = NoiseMatrix(k, config.instance_dim, config.noise_scale, rng);
  const int witnesses = std::clamp(
      static_cast<int>(std::lround(config.witness_fraction * k)), 1, k);
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int w = 0; w < witnesses; ++w)
    x.row(order[w]) += signal.transpose();
  return x;
}

// Max-flow rounding of a fractional C x P table with integer margins. Cells
// with a nonzero fractional part receive at most one extra unit.
std::vector<std::array<int, 3>> ControlledRounding(
    const std::vector<std::array<double, 3>>& quota,
    const std::array<int, 3>& part_totals, std::mt19937_64& rng) {
  const int classes = static_cast<int>(quota.size());
  std::vector<std::array<int, 3>> out(classes);
  std::vector<int> row_need(classes, 0);
  std::array<int, 3> col_need = part_totals;
  for (int c = 0; c < classes; ++c) {
    double row_total = 0.0;
    for (int p = 0; p < 3; ++p) {
      out[c][p] = static_cast<int>(std::floor(quota[c][p] + 1e-9));
      col_need[p] -= out[c][p];
      row_total += quota[c][p];
    }
    row_need[c] = static_cast<int>(std::lround(row_total)) -
                  (out[c][0] + out[c][1] + out[c][2]);
  }
  // Candidate unit edges row -> column, in random order for seed diversity.
  std::vector<std::pair<int, int>> edges;
  for (int c = 0; c < classes; ++c)
    for (int p = 0; p < 3; ++p)
      if (quota[c][p] - out[c][p] > 1e-9) edges.emplace_back(c, p);
  std::shuffle(edges.begin(), edges.end(), rng);

  std::vector<char> used(edges.size(), 0);
  // Augmenting paths alternate unused edge (row->col) and used edge
  // (col->row). Graph is tiny, so plain DFS is enough.
  auto augment = [&](int start_row) {
    std::vector<char> row_seen(classes, 0);
    std::vector<int> path;
    std::function<bool(int)> dfs = [&](int row) -> bool {
      row_seen[row] = 1;
      for (std::size_t e = 0; e < edges.size(); ++e) {
        if (used[e] || edges[e].first != row) continue;
        const int col = edges[e].second;
        path.push_back(static_cast<int>(e));
        if (col_need[col] > 0) {
          --col_need[col];
          return true;
        }
        for (std::size_t f = 0; f < edges.size(); ++f) {
          if (!used[f] || edges[f].second != col) continue;
          const int next = edges[f].first;
          if (row_seen[next]) continue;
          path.push_back(static_cast<int>(f));
          if (dfs(next)) return true;
          path.pop_back();
        }
        path.pop_back();
      }
      return false;
    };
    if (!dfs(start_row)) return false;
    for (const int e : path) used[e] = !used[e];
    return true;
  };
  for (int c = 0; c < classes; ++c) {
    for (int n = 0; n < row_need[c]; ++n) {
      if (!augment(c))
        throw InvalidArgument("stratified split: no controlled rounding");
    }
  }
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (used[e]) ++out[edges[e].first][edges[e].second];
  return out;
}

}  // namespace

std::string_view ModalityName(Modality m) {
  switch (m) {
    case Modality::kHE:
      return "HE";
    case Modality::kIHC:
      return "IHC";
    case Modality::kRecHE:
      return "REC_HE";
  }
  return "?";
}

Modality ParseModality(std::string_view name) {
  for (const Modality m : kAllModalities)
    if (ModalityName(m) == name) return m;
  throw InvalidArgument("unknown modality '" + std::string(name) + "'");
}

std::string_view PartName(Part p) {
  switch (p) {
    case Part::kTrain:
      return "TRAIN";
    case Part::kVal:
      return "VAL";
    case Part::kTest:
      return "TEST";
  }
  return "?";
}

Part ParsePart(std::string_view name) {
  for (const Part p : kAllParts)
    if (PartName(p) == name) return p;
  throw InvalidArgument("unknown split part '" + std::string(name) + "'");
}

std::vector<Modality> Cohort::modalities() const {
  std::vector<Modality> out;
  if (patients.empty()) return out;
  for (const auto& [m, bag] : patients.front().bags) out.push_back(m);
  return out;
}

const Patient& Cohort::patient(std::string_view id) const {
  for (const Patient& p : patients)
    if (p.id == id) return p;
  throw InvalidArgument("unknown patient '" + std::string(id) + "'");
}

void Cohort::Validate() const {
  Require(num_classes >= 2, "cohort needs at least 2 classes");
  Require(!patients.empty(), "cohort has no patients");
  const std::vector<Modality> mods = modalities();
  std::set<std::string> ids;
  for (const Patient& p : patients) {
    Require(ids.insert(p.id).second, "duplicate patient id " + p.id);
    Require(p.label >= 0 && p.label < num_classes,
            "patient " + p.id + " has label out of range");
    Require(p.bags.size() == mods.size(),
            "patient " + p.id + " does not have one bag per modality");
    for (const Modality m : mods) {
      const auto it = p.bags.find(m);
      Require(it != p.bags.end(), "patient " + p.id + " lacks modality " +
                                      std::string(ModalityName(m)));
      const Bag& bag = it->second;
      Require(bag.size() >= 1, "empty bag for patient " + p.id);
      CheckShape(bag.dim() == instance_dim,
                 "bag instance dimension mismatch for patient " + p.id);
      Require(bag.label == p.label && bag.patient_id == p.id &&
                  bag.modality == m,
              "bag metadata disagrees with patient " + p.id);
      Require(AllFinite(bag.instances),
              "non-finite instance features for patient " + p.id);
    }
  }
}

ReconstructionModel MakeReconstructionModel(const ReconstructionConfig& config,
                                            int instance_dim,
                                            std::uint64_t seed) {
  Require(instance_dim >= 1, "reconstruction needs instance_dim >= 1");
  Require(config.noise_scale >= 0.0, "reconstruction noise must be >= 0");
  std::mt19937_64 rng(DeriveSeed(seed, "reconstruction-mixing"));
  const double g = 1.0 / std::sqrt(static_cast<double>(instance_dim));
  const Matrix eye = Matrix::Identity(instance_dim, instance_dim);
  ReconstructionModel model;
  model.he_mixing =
      config.he_weight *
      (eye + config.mixing_jitter * NoiseMatrix(instance_dim, instance_dim, g, rng));
  model.ihc_mixing =
      config.ihc_weight *
      (eye + config.mixing_jitter * NoiseMatrix(instance_dim, instance_dim, g, rng));
  model.noise_scale = config.noise_scale;
  return model;
}

void SynthConfig::Validate() const {
  Require(num_classes >= 2, "synth: num_classes must be >= 2");
  Require(num_patients >= num_classes,
          "synth: num_patients < num_classes leaves a class empty");
  Require(instance_dim >= 1, "synth: instance_dim must be >= 1");
  Require(mean_bag_size >= 1.0, "synth: mean_bag_size must be >= 1");
  Require(bag_size_dispersion >= 0.0, "synth: bag_size_dispersion must be >= 0");
  Require(min_bag_size >= 1, "synth: min_bag_size must be >= 1");
  Require(noise_scale > 0.0, "synth: noise_scale (sigma) must be > 0");
  Require(witness_fraction > 0.0 && witness_fraction <= 1.0,
          "synth: witness_fraction must be in (0, 1]");
  Require(!he_signal_dims.empty() && !ihc_signal_dims.empty(),
          "synth: signal dimension sets must be nonempty");
  std::set<int> he(he_signal_dims.begin(), he_signal_dims.end());
  std::set<int> ihc(ihc_signal_dims.begin(), ihc_signal_dims.end());
  Require(he.size() == he_signal_dims.size() &&
              ihc.size() == ihc_signal_dims.size(),
          "synth: signal dimension sets contain duplicates");
  for (const int d : he) {
    Require(d >= 0 && d < instance_dim, "synth: HE signal dim out of range");
    Require(!ihc.count(d),
            "synth: HE and IHC signal dimension sets must be disjoint");
  }
  for (const int d : ihc)
    Require(d >= 0 && d < instance_dim, "synth: IHC signal dim out of range");
  Require(reconstruction.noise_scale >= 0.0,
          "synth: reconstruction noise must be >= 0");
}

Cohort GenerateSyntheticCohort(const SynthConfig& config) {
  config.Validate();
  const int classes = config.num_classes;
  // Class c = coarse * m + fine. HE resolves the coarse code, IHC the fine
  // one; each sees the other code only through `cross_signal`.
  const int m = static_cast<int>(std::ceil(std::sqrt(classes)));
  const int coarse_codes = (classes + m - 1) / m;
  const int fine_codes = std::min(m, classes);

  std::mt19937_64 proto_rng(DeriveSeed(config.seed, "prototypes"));
  const auto he_main = MakePrototypes(coarse_codes, config.he_signal_dims,
                                      config.instance_dim, proto_rng);
  const auto he_cross = MakePrototypes(fine_codes, config.he_signal_dims,
                                       config.instance_dim, proto_rng);
  const auto ihc_main = MakePrototypes(fine_codes, config.ihc_signal_dims,
                                       config.instance_dim, proto_rng);
  const auto ihc_cross = MakePrototypes(coarse_codes, config.ihc_signal_dims,
                                        config.instance_dim, proto_rng);
  const ReconstructionModel rec = MakeReconstructionModel(
      config.reconstruction, config.instance_dim, config.seed);

  const double a = config.signal_strength;
  const double b = config.signal_strength * config.cross_signal;

  Cohort cohort;
  cohort.num_classes = classes;
  cohort.instance_dim = config.instance_dim;
  cohort.generator_seed = config.seed;
  cohort.patients.reserve(config.num_patients);
  for (int i = 0; i < config.num_patients; ++i) {
    Patient p;
    p.id = PatientId(i, config.num_patients);
    p.label = i % classes;
    const int coarse = p.label / m;
    const int fine = p.label % m;
    std::mt19937_64 rng(DeriveSeed(config.seed, "patient", i));

    Bag he{MakeInstances(a * he_main[coarse] + b * he_cross[fine], config, rng),
           p.label, Modality::kHE, p.id};
    Bag ihc{MakeInstances(a * ihc_main[fine] + b * ihc_cross[coarse], config,
                          rng),
            p.label, Modality::kIHC, p.id};
    Bag rec_he = SimulateReconstructedModality(
        he, ihc, rec, DeriveSeed(config.seed, "reconstruct", i));
    p.bags.emplace(Modality::kHE, std::move(he));
    p.bags.emplace(Modality::kIHC, std::move(ihc));
    p.bags.emplace(Modality::kRecHE, std::move(rec_he));
    cohort.patients.push_back(std::move(p));
  }
  return cohort;
}

Bag SimulateReconstructedModality(const Bag& bag_he, const Bag& bag_ihc,
                                  const ReconstructionModel& model,
                                  std::uint64_t seed) {
  Require(bag_he.patient_id == bag_ihc.patient_id,
          "reconstruction: bags belong to different patients (" +
              bag_he.patient_id + " vs " + bag_ihc.patient_id + ")");
  Require(bag_he.size() >= 1 && bag_ihc.size() >= 1,
          "reconstruction: empty bag");
  const int d = bag_he.dim();
  CheckShape(bag_ihc.dim() == d && model.he_mixing.rows() == d &&
                 model.he_mixing.cols() == d && model.ihc_mixing.rows() == d &&
                 model.ihc_mixing.cols() == d,
             "reconstruction: dimension mismatch");
  const int k = bag_he.size();
  Matrix paired_ihc(k, d);
  for (int i = 0; i < k; ++i)
    paired_ihc.row(i) = bag_ihc.instances.row(i % bag_ihc.size());

  Bag out;
  out.instances = bag_he.instances * model.he_mixing.transpose() +
                  paired_ihc * model.ihc_mixing.transpose();
  if (model.noise_scale > 0.0) {
    std::mt19937_64 rng(seed);
    out.instances += NoiseMatrix(k, d, model.noise_scale, rng);
  }
  out.label = bag_he.label;
  out.modality = Modality::kRecHE;
  out.patient_id = bag_he.patient_id;
  return out;
}

std::vector<std::string> SplitAssignment::PatientsIn(const Cohort& cohort,
                                                     Part part) const {
  std::vector<std::string> out;
  for (const Patient& p : cohort.patients) {
    const auto it = part_of.find(p.id);
    if (it != part_of.end() && it->second == part) out.push_back(p.id);
  }
  return out;
}

std::size_t SplitAssignment::CountIn(Part part) const {
  return static_cast<std::size_t>(
      std::count_if(part_of.begin(), part_of.end(),
                    [part](const auto& kv) { return kv.second == part; }));
}

SplitAssignment StratifiedSplit(const Cohort& cohort,
                                const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
  double sum = 0.0;
  for (const double r : ratios) {
    Require(r >= 0.0 && std::isfinite(r), "split ratios must be >= 0");
    sum += r;
  }
  Require(std::abs(sum - 1.0) < 1e-9, "split ratios must sum to 1");
  Require(ratios[0] > 0.0, "split needs a nonzero TRAIN ratio");

  std::vector<std::vector<int>> members(cohort.num_classes);
  for (int i = 0; i < static_cast<int>(cohort.patients.size()); ++i) {
    const int label = cohort.patients[i].label;
    Require(label >= 0 && label < cohort.num_classes,
            "split: label out of range");
    members[label].push_back(i);
  }
  for (int c = 0; c < cohort.num_classes; ++c) {
    Require(members[c].size() >= 3,
            "split: class " + std::to_string(c) + " has " +
                std::to_string(members[c].size()) +
                " patients; at least 3 are required");
  }

  const int n = static_cast<int>(cohort.patients.size());
  // Largest remainder for the part totals; ties go to the earlier part.
  std::array<int, 3> totals{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int p = 0; p < 3; ++p) {
    const double q = ratios[p] * n;
    totals[p] = static_cast<int>(std::floor(q + 1e-9));
    rem[p] = q - totals[p];
    assigned += totals[p];
  }
  while (assigned < n) {
    int best = 0;
    for (int p = 1; p < 3; ++p)
      if (rem[p] > rem[best] + 1e-12) best = p;
    ++totals[best];
    rem[best] = -1.0;
    ++assigned;
  }

  std::vector<std::array<double, 3>> quota(cohort.num_classes);
  for (int c = 0; c < cohort.num_classes; ++c)
    for (int p = 0; p < 3; ++p)
      quota[c][p] = static_cast<double>(members[c].size()) * totals[p] / n;

  std::mt19937_64 rng(seed);
  const auto counts = ControlledRounding(quota, totals, rng);

  SplitAssignment out;
  out.ratios = ratios;
  out.seed = seed;
  for (int c = 0; c < cohort.num_classes; ++c) {
    std::vector<int> order = members[c];
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t next = 0;
    for (int p = 0; p < 3; ++p)
      for (int j = 0; j < counts[c][p]; ++j)
        out.part_of[cohort.patients[order[next++]].id] = kAllParts[p];
  }
  return out;
}

std::vector<const Bag*> BagsFor(const Cohort& cohort, Modality modality,
                                const std::vector<std::string>& patient_ids) {
  std::map<std::string_view, const Patient*> index;
  for (const Patient& p : cohort.patients) index.emplace(p.id, &p);
  std::vector<const Bag*> out;
  out.reserve(patient_ids.size());
  for (const std::string& id : patient_ids) {
    const auto it = index.find(id);
    Require(it != index.end(), "unknown patient '" + id + "'");
    const auto bag = it->second->bags.find(modality);
    Require(bag != it->second->bags.end(),
            "patient " + id + " lacks modality " +
                std::string(ModalityName(modality)));
    out.push_back(&bag->second);
  }
  return out;
}

}  // namespace shapfuse::data
