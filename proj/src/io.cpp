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

#include "shapfuse/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace shapfuse::io {

fs::path ManifestPathFor(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".manifest.json");
  return p;
}

std::string FormatDouble(double value) {
  if (!std::isfinite(value))
    throw IoError("refusing to serialize a non-finite value");
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double ParseDouble(std::string_view token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last || token.empty())
    throw IoError("malformed number '" + std::string(token) + "'");
  return value;
}

void WriteText(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void WriteJson(const fs::path& path, const Json& value) {
  WriteText(path, value.dump(2) + "\n");
}

Json ReadJson(const fs::path& path) {
  const std::string text = ReadText(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void SaveMatrix(const fs::path& csv_path, const Matrix& m,
                MatrixManifest manifest,
                const std::vector<std::string>& column_names) {
  CheckShape(column_names.empty() ||
                 column_names.size() == static_cast<std::size_t>(m.cols()),
             "column name count does not match matrix width");
  manifest.rows = static_cast<std::size_t>(m.rows());
  manifest.cols = static_cast<std::size_t>(m.cols());

  std::string text;
  text.reserve(static_cast<std::size_t>(m.size()) * 12 + 64);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (j) text += ',';
    text += column_names.empty() ? "c" + std::to_string(j) : column_names[j];
  }
  text += '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) text += ',';
      text += FormatDouble(m(i, j));
    }
    text += '\n';
  }
  WriteText(csv_path, text);

  Json mj = {{"shape", {manifest.rows, manifest.cols}},
             {"seed", manifest.seed},
             {"producer", manifest.producer},
             {"extra", manifest.extra}};
  WriteJson(ManifestPathFor(csv_path), mj);
}

Matrix LoadMatrix(const fs::path& csv_path, MatrixManifest* manifest_out) {
  const fs::path mpath = ManifestPathFor(csv_path);
  if (!fs::exists(mpath))
    throw IoError("missing matrix manifest " + mpath.string());
  const Json mj = ReadJson(mpath);
  MatrixManifest manifest;
  try {
    manifest.rows = mj.at("shape").at(0).get<std::size_t>();
    manifest.cols = mj.at("shape").at(1).get<std::size_t>();
    manifest.seed = mj.at("seed").get<std::uint64_t>();
    manifest.producer = mj.at("producer").get<std::string>();
    if (mj.contains("extra")) manifest.extra = mj.at("extra");
  } catch (const Json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }

  const std::string text = ReadText(csv_path);
  std::vector<std::string_view> lines;
  {
    std::string_view rest = text;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  if (lines.empty()) throw IoError(csv_path.string() + ": missing header row");
  const std::size_t data_rows = lines.size() - 1;
  if (data_rows != manifest.rows) {
    throw IoError(csv_path.string() + ": manifest says " +
                  std::to_string(manifest.rows) + " rows but file has " +
                  std::to_string(data_rows));
  }
  auto count_fields = [](std::string_view line) {
    return line.empty() ? std::size_t{0}
                        : static_cast<std::size_t>(
                              std::count(line.begin(), line.end(), ',')) + 1;
  };
  if (count_fields(lines[0]) != manifest.cols) {
    throw IoError(csv_path.string() + ": manifest says " +
                  std::to_string(manifest.cols) + " columns but header has " +
                  std::to_string(count_fields(lines[0])));
  }
  Matrix m(static_cast<Eigen::Index>(manifest.rows),
           static_cast<Eigen::Index>(manifest.cols));
  for (std::size_t i = 0; i < data_rows; ++i) {
    std::string_view line = lines[i + 1];
    if (count_fields(line) != manifest.cols) {
      throw IoError(csv_path.string() + ": row " + std::to_string(i + 1) +
                    " has the wrong number of fields");
    }
    for (std::size_t j = 0; j < manifest.cols; ++j) {
      const auto comma = line.find(',');
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          ParseDouble(line.substr(0, comma));
      if (comma != std::string_view::npos) line.remove_prefix(comma + 1);
    }
  }
  if (manifest_out) *manifest_out = std::move(manifest);
  return m;
}

std::string Sha256Hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(
      EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0')
       << static_cast<int>(digest[i]);
  return os.str();
}

std::string Sha256File(const fs::path& path) { return Sha256Hex(ReadText(path)); }

void SaveCohort(const fs::path& dir, const data::Cohort& cohort) {
  cohort.Validate();
  Json patients = Json::array();
  for (const data::Patient& p : cohort.patients) {
    patients.push_back({{"id", p.id}, {"label", p.label}});
    for (const auto& [modality, bag] : p.bags) {
      MatrixManifest mm;
      mm.seed = cohort.generator_seed;
      mm.producer = "synth";
      mm.extra = {{"patient_id", p.id},
                  {"label", p.label},
                  {"modality", data::ModalityName(modality)}};
      SaveMatrix(dir / p.id / (std::string(data::ModalityName(modality)) + ".csv"),
                 bag.instances, mm);
    }
  }
  Json modalities = Json::array();
  for (const data::Modality m : cohort.modalities())
    modalities.push_back(data::ModalityName(m));
  WriteJson(dir / "cohort.json", {{"num_classes", cohort.num_classes},
                                  {"instance_dim", cohort.instance_dim},
                                  {"generator_seed", cohort.generator_seed},
                                  {"modalities", modalities},
                                  {"patients", patients}});
}

data::Cohort LoadCohort(const fs::path& dir) {
  const fs::path index = dir / "cohort.json";
  if (!fs::exists(index)) throw IoError("missing cohort index " + index.string());
  const Json j = ReadJson(index);
  data::Cohort cohort;
  try {
    cohort.num_classes = j.at("num_classes").get<int>();
    cohort.instance_dim = j.at("instance_dim").get<int>();
    cohort.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    std::vector<data::Modality> modalities;
    for (const auto& m : j.at("modalities"))
      modalities.push_back(data::ParseModality(m.get<std::string>()));
    for (const auto& pj : j.at("patients")) {
      data::Patient p;
      p.id = pj.at("id").get<std::string>();
      p.label = pj.at("label").get<int>();
      for (const data::Modality m : modalities) {
        data::Bag bag;
        bag.instances = LoadMatrix(
            dir / p.id / (std::string(data::ModalityName(m)) + ".csv"));
        bag.label = p.label;
        bag.modality = m;
        bag.patient_id = p.id;
        p.bags.emplace(m, std::move(bag));
      }
      cohort.patients.push_back(std::move(p));
    }
  } catch (const Json::exception& e) {
    throw IoError("malformed cohort index " + index.string() + ": " + e.what());
  }
  cohort.Validate();
  return cohort;
}

Json SplitToJson(const data::SplitAssignment& split) {
  Json assignment = Json::object();
  for (const auto& [id, part] : split.part_of)
    assignment[id] = data::PartName(part);
  return {{"ratios", split.ratios},
          {"seed", split.seed},
          {"assignment", assignment}};
}

data::SplitAssignment SplitFromJson(const Json& j) {
  data::SplitAssignment split;
  try {
    split.ratios = j.at("ratios").get<std::array<double, 3>>();
    split.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [id, part] : j.at("assignment").items())
      split.part_of[id] = data::ParsePart(part.get<std::string>());
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed split: ") + e.what());
  }
  return split;
}

}  // namespace shapfuse::io
