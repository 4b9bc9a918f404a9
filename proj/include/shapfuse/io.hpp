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

// File formats shared by every stage.
//
// Matrices are headered CSV (first row: column names; values written as the
// shortest decimal that round-trips) with a sidecar JSON manifest holding the
// shape, the producing stage, its seed and free-form metadata. For
// `dir/name.csv` the manifest is `dir/name.manifest.json`.

#ifndef SHAPFUSE_IO_HPP_
#define SHAPFUSE_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "shapfuse/common.hpp"
#include "shapfuse/data.hpp"

namespace shapfuse::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

struct MatrixManifest {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t seed = 0;
  std::string producer;
  Json extra = Json::object();
};

fs::path ManifestPathFor(const fs::path& csv_path);

// Shortest round-trip decimal (std::to_chars).
std::string FormatDouble(double value);
// Strict parse of a full token; throws IoError on junk.
double ParseDouble(std::string_view token);

// Writes CSV + manifest. `manifest.rows/cols` are overwritten from `m`.
// Column names default to c0..c{n-1}.
void SaveMatrix(const fs::path& csv_path, const Matrix& m,
                MatrixManifest manifest,
                const std::vector<std::string>& column_names = {});

// Reads CSV + manifest and checks the shape against the manifest.
Matrix LoadMatrix(const fs::path& csv_path, MatrixManifest* manifest = nullptr);

void WriteText(const fs::path& path, std::string_view text);
std::string ReadText(const fs::path& path);
// Pretty-printed with a trailing newline so output is byte-stable.
void WriteJson(const fs::path& path, const Json& value);
Json ReadJson(const fs::path& path);

std::string Sha256Hex(std::string_view bytes);
std::string Sha256File(const fs::path& path);

// cohort/cohort.json plus cohort/<patient>/<modality>.csv.
void SaveCohort(const fs::path& dir, const data::Cohort& cohort);
data::Cohort LoadCohort(const fs::path& dir);

Json SplitToJson(const data::SplitAssignment& split);
data::SplitAssignment SplitFromJson(const Json& j);

}  // namespace shapfuse::io

#endif  // SHAPFUSE_IO_HPP_
