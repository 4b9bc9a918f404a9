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

// Late fusion of pooled per-modality features.
//
// The two H&E representations (true and reconstructed) are concatenated and
// the result is combined with the IHC representation by a Kronecker product:
//   F = [f_he, f_rec] (x) f_ihc,   F[i * 32 + j] = a[i] * b[j].

#ifndef SHAPFUSE_FUSION_HPP_
#define SHAPFUSE_FUSION_HPP_

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shapfuse/common.hpp"
#include "shapfuse/data.hpp"
#include "shapfuse/mil.hpp"
#include "shapfuse/pool.hpp"

namespace shapfuse::fusion {

inline constexpr int kPooledDim = 32;
inline constexpr int kConcatDim = 2 * kPooledDim;
inline constexpr int kFusedDim = kConcatDim * kPooledDim;

// [a, b], a first.
Vector ConcatHe(std::span<const double> f_he, std::span<const double> f_rec);

// out[i * |b| + j] = a[i] * b[j].
Vector Kronecker(std::span<const double> a, std::span<const double> b);

// The modality combinations of the ablation grid.
enum class Layout {
  kHE,
  kIHC,
  kRecHE,
  kHEandIHC,     // f_he (x) f_ihc
  kRecHEandIHC,  // f_rec (x) f_ihc
  kHEandRecHE,   // [f_he, f_rec]
  kAll,          // [f_he, f_rec] (x) f_ihc
};
inline constexpr std::array<Layout, 7> kAllLayouts = {
    Layout::kHE,         Layout::kIHC,         Layout::kRecHE, Layout::kHEandIHC,
    Layout::kRecHEandIHC, Layout::kHEandRecHE, Layout::kAll};

std::string_view LayoutName(Layout layout);
Layout ParseLayout(std::string_view name);
std::vector<data::Modality> LayoutModalities(Layout layout);
int NumModalities(Layout layout);
// Output width for pooled inputs of width k.
int LayoutDim(Layout layout, int k);

// Pooled features of one modality for every patient of a part, row-aligned
// by patient id.
struct PooledPart {
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
  std::map<data::Modality, Matrix> f;
};

// Applies the per-modality selectors to row-aligned embedding tables.
// Throws if a modality is missing or the tables disagree on patients.
PooledPart PoolPart(const std::map<data::Modality, pool::DimensionSelector>& selectors,
                    const std::map<data::Modality, mil::EmbeddingTable>& embeddings);

struct FusedDataset {
  Matrix x;
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
};

// Fused feature rows for `layout`. With layout kAll every row has length
// kFusedDim when the pooled width is kPooledDim.
FusedDataset Fuse(const PooledPart& part, Layout layout);

// Pools and fuses in one step: F_n = [s_he(z_he), s_rec(z_rec)] (x) s_ihc(z_ihc).
FusedDataset BuildFusedDataset(
    const std::map<data::Modality, pool::DimensionSelector>& selectors,
    const std::map<data::Modality, mil::EmbeddingTable>& embeddings);

}  // namespace shapfuse::fusion

#endif  // SHAPFUSE_FUSION_HPP_
