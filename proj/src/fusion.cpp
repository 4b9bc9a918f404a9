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

#include "shapfuse/fusion.hpp"

namespace shapfuse::fusion {

using data::Modality;

Vector ConcatHe(std::span<const double> f_he, std::span<const double> f_rec) {
  CheckShape(f_he.size() == f_rec.size(),
             "concatenated H&E representations must have equal length");
  Vector out(static_cast<Eigen::Index>(f_he.size() + f_rec.size()));
  std::copy(f_he.begin(), f_he.end(), out.data());
  std::copy(f_rec.begin(), f_rec.end(), out.data() + f_he.size());
  return out;
}

Vector Kronecker(std::span<const double> a, std::span<const double> b) {
  CheckShape(!a.empty() && !b.empty(), "Kronecker product of an empty vector");
  Vector out(static_cast<Eigen::Index>(a.size() * b.size()));
  double* o = out.data();
  for (const double ai : a)
    for (const double bj : b) *o++ = ai * bj;
  return out;
}

std::string_view LayoutName(Layout layout) {
  switch (layout) {
    case Layout::kHE: return "HE";
    case Layout::kIHC: return "IHC";
    case Layout::kRecHE: return "REC_HE";
    case Layout::kHEandIHC: return "HE+IHC";
    case Layout::kRecHEandIHC: return "REC_HE+IHC";
    case Layout::kHEandRecHE: return "HE+REC_HE";
    case Layout::kAll: return "HE+REC_HE+IHC";
  }
  return "?";
}

Layout ParseLayout(std::string_view name) {
  for (const Layout l : kAllLayouts)
    if (LayoutName(l) == name) return l;
  throw InvalidArgument("unknown modality layout '" + std::string(name) + "'");
}

std::vector<Modality> LayoutModalities(Layout layout) {
  switch (layout) {
    case Layout::kHE: return {Modality::kHE};
    case Layout::kIHC: return {Modality::kIHC};
    case Layout::kRecHE: return {Modality::kRecHE};
    case Layout::kHEandIHC: return {Modality::kHE, Modality::kIHC};
    case Layout::kRecHEandIHC: return {Modality::kRecHE, Modality::kIHC};
    case Layout::kHEandRecHE: return {Modality::kHE, Modality::kRecHE};
    case Layout::kAll: return {Modality::kHE, Modality::kRecHE, Modality::kIHC};
  }
  return {};
}

int NumModalities(Layout layout) {
  return static_cast<int>(LayoutModalities(layout).size());
}

int LayoutDim(Layout layout, int k) {
  switch (layout) {
    case Layout::kHE:
    case Layout::kIHC:
    case Layout::kRecHE: return k;
    case Layout::kHEandIHC:
    case Layout::kRecHEandIHC: return k * k;
    case Layout::kHEandRecHE: return 2 * k;
    case Layout::kAll: return 2 * k * k;
  }
  return 0;
}

PooledPart PoolPart(const std::map<Modality, pool::DimensionSelector>& selectors,
                    const std::map<Modality, mil::EmbeddingTable>& embeddings) {
  Require(!embeddings.empty(), "no embeddings to pool");
  PooledPart part;
  bool first = true;
  for (const auto& [modality, table] : embeddings) {
    const auto sel = selectors.find(modality);
    Require(sel != selectors.end(), "no selector for modality " +
                                        std::string(data::ModalityName(modality)));
    if (first) {
      part.patient_ids = table.patient_ids;
      part.labels = table.labels;
      first = false;
    } else {
      CheckShape(table.patient_ids == part.patient_ids,
                 "embedding tables disagree on patients for modality " +
                     std::string(data::ModalityName(modality)));
    }
    Matrix f = pool::ApplyPool(sel->second, table.z);
    CheckShape(f.cols() == sel->second.k, "pooled width differs from k");
    part.f.emplace(modality, std::move(f));
  }
  return part;
}

FusedDataset Fuse(const PooledPart& part, Layout layout) {
  const auto modalities = LayoutModalities(layout);
  std::vector<const Matrix*> in;
  for (const Modality m : modalities) {
    const auto it = part.f.find(m);
    Require(it != part.f.end(), "missing modality " + std::string(data::ModalityName(m)) +
                                    " for layout " + std::string(LayoutName(layout)));
    CheckShape(it->second.rows() == static_cast<Eigen::Index>(part.patient_ids.size()),
               "pooled rows do not match patient count");
    in.push_back(&it->second);
  }
  const int k = static_cast<int>(in[0]->cols());
  for (const Matrix* m : in)
    CheckShape(m->cols() == k, "pooled modalities differ in width");

  const Eigen::Index n = static_cast<Eigen::Index>(part.patient_ids.size());
  FusedDataset out;
  out.patient_ids = part.patient_ids;
  out.labels = part.labels;
  out.x.resize(n, LayoutDim(layout, k));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = [&](int idx) { return forest::Row(*in[idx], i); };
    Vector v;
    switch (layout) {
      case Layout::kHE:
      case Layout::kIHC:
      case Layout::kRecHE:
        v = in[0]->row(i).transpose();
        break;
      case Layout::kHEandIHC:
      case Layout::kRecHEandIHC:
        v = Kronecker(row(0), row(1));
        break;
      case Layout::kHEandRecHE:
        v = ConcatHe(row(0), row(1));
        break;
      case Layout::kAll: {
        const Vector a = ConcatHe(row(0), row(1));
        CheckShape(k != kPooledDim || a.size() == kConcatDim,
                   "concatenated H&E representation must have length 64");
        v = Kronecker({a.data(), static_cast<std::size_t>(a.size())}, row(2));
        break;
      }
    }
    CheckShape(v.size() == out.x.cols(), "fused row has the wrong length");
    out.x.row(i) = v.transpose();
  }
  if (layout == Layout::kAll && k == kPooledDim)
    CheckShape(out.x.cols() == kFusedDim, "fused representation must have length 2048");
  return out;
}

FusedDataset BuildFusedDataset(
    const std::map<Modality, pool::DimensionSelector>& selectors,
    const std::map<Modality, mil::EmbeddingTable>& embeddings) {
  for (const Modality m : {Modality::kHE, Modality::kRecHE, Modality::kIHC})
    Require(embeddings.count(m) == 1,
            "missing " + std::string(data::ModalityName(m)) + " embeddings");
  return Fuse(PoolPart(selectors, embeddings), Layout::kAll);
}

}  // namespace shapfuse::fusion
