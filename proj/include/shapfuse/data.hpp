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

// Synthetic multimodal cohorts of multiple-instance bags.
//
// Every patient owns one bag per modality. A bag is a K x d_in matrix of
// instance features (K varies per bag) plus the patient's class label. The
// generator plants class signal in disjoint dimension sets for the two stained
// modalities so that each modality only partially determines the class, while
// the pair does. The reconstructed modality is a noisy linear mix of the two.

#ifndef SHAPFUSE_DATA_HPP_
#define SHAPFUSE_DATA_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shapfuse/common.hpp"

namespace shapfuse::data {

enum class Modality { kHE = 0, kIHC = 1, kRecHE = 2 };

inline constexpr std::array<Modality, 3> kAllModalities = {
    Modality::kHE, Modality::kIHC, Modality::kRecHE};

std::string_view ModalityName(Modality m);
Modality ParseModality(std::string_view name);

struct Bag {
  Matrix instances;  // K x d_in, one instance per row.
  int label = 0;
  Modality modality = Modality::kHE;
  std::string patient_id;

  int size() const { return static_cast<int>(instances.rows()); }
  int dim() const { return static_cast<int>(instances.cols()); }
};

struct Patient {
  std::string id;
  int label = 0;
  std::map<Modality, Bag> bags;
};

struct Cohort {
  int num_classes = 4;
  int instance_dim = 64;
  std::uint64_t generator_seed = 0;
  std::vector<Patient> patients;

  // Modalities present for the first patient (all patients agree once
  // Validate() passes).
  std::vector<Modality> modalities() const;
  const Patient& patient(std::string_view id) const;

  // Checks K >= 1, label range, shared instance dimension, finite features,
  // unique ids and identical modality sets with matching labels.
  void Validate() const;
};

// Parameters of the reconstructed-modality simulator. The mixing matrices are
// scale * (I + jitter * G) with G a fixed standard normal matrix scaled by
// 1/sqrt(d_in).
struct ReconstructionConfig {
  double he_weight = 0.6;
  double ihc_weight = 0.6;
  double mixing_jitter = 0.5;
  double noise_scale = 1.0;
};

struct ReconstructionModel {
  Matrix he_mixing;   // d_in x d_in
  Matrix ihc_mixing;  // d_in x d_in
  double noise_scale = 0.0;
};

ReconstructionModel MakeReconstructionModel(const ReconstructionConfig& config,
                                            int instance_dim,
                                            std::uint64_t seed);

struct SynthConfig {
  int num_patients = 500;
  int num_classes = 4;
  int instance_dim = 64;
  double mean_bag_size = 10.0;
  double bag_size_dispersion = 3.0;
  int min_bag_size = 2;
  // Dimensions carrying class signal per stained modality; must be disjoint.
  std::vector<int> he_signal_dims = {0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> ihc_signal_dims = {8, 9, 10, 11, 12, 13, 14, 15};
  // Fraction of a bag's instances that carry the class signal (>= 1 instance).
  double witness_fraction = 0.3;
  // Amplitude of the coarse code a modality resolves well.
  double signal_strength = 2.5;
  // Amplitude of the complementary code, relative to signal_strength.
  double cross_signal = 0.35;
  double noise_scale = 1.0;
  ReconstructionConfig reconstruction;
  std::uint64_t seed = 7;

  void Validate() const;
};

// Builds HE, IHC and REC_HE bags for every patient. Labels are balanced
// (patient i has label i mod C). Pure function of the config.
Cohort GenerateSyntheticCohort(const SynthConfig& config);

// REC_HE instance k = A_he * he_k + A_ihc * ihc_{k mod K_ihc} + noise.
// The result has as many instances as the H&E bag.
Bag SimulateReconstructedModality(const Bag& bag_he, const Bag& bag_ihc,
                                  const ReconstructionModel& model,
                                  std::uint64_t seed);

enum class Part { kTrain = 0, kVal = 1, kTest = 2 };
inline constexpr std::array<Part, 3> kAllParts = {Part::kTrain, Part::kVal,
                                                  Part::kTest};
std::string_view PartName(Part p);
Part ParsePart(std::string_view name);

struct SplitAssignment {
  std::map<std::string, Part> part_of;
  std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  // Patient ids of `part` in cohort order.
  std::vector<std::string> PatientsIn(const Cohort& cohort, Part part) const;
  std::size_t CountIn(Part part) const;
};

// Patient-level split, stratified by class. Part sizes are the largest
// remainder rounding of N * ratios; per-class counts are a controlled rounding
// of n_c * |part| / N, so every cell is within one patient of proportional.
SplitAssignment StratifiedSplit(const Cohort& cohort,
                                const std::array<double, 3>& ratios,
                                std::uint64_t seed);

// The bags of one modality for the listed patients, in the listed order.
std::vector<const Bag*> BagsFor(const Cohort& cohort, Modality modality,
                                const std::vector<std::string>& patient_ids);

}  // namespace shapfuse::data

#endif  // SHAPFUSE_DATA_HPP_
