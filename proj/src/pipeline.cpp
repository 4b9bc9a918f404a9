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

#include "shapfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>

#include "shapfuse/attribution.hpp"
#include "shapfuse/forest.hpp"
#include "shapfuse/fusion.hpp"
#include "shapfuse/io.hpp"
#include "shapfuse/metrics.hpp"

namespace shapfuse::pipeline {

using data::Modality;
using data::Part;
using io::Json;

std::string_view StageName(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kTrainMil: return "train-mil";
    case Stage::kExtract: return "extract";
    case Stage::kFitPool: return "fit-pool";
    case Stage::kFuse: return "fuse";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage ParseStage(std::string_view name) {
  for (const Stage s : kAllStages)
    if (StageName(s) == name) return s;
  throw InvalidArgument("unknown stage '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig::PipelineConfig() {
  grid_pools = {"SHAP", "AVG", "MAX", "RAND1"};
  fusion_head.kind = heads::HeadKind::kMlp;
  for (const heads::HeadKind k : heads::kAllHeads) {
    heads::HeadConfig h;
    h.kind = k;
    comparison_heads.push_back(h);
  }
}

mil::TrainConfig PipelineConfig::MilConfigFor(Modality m) const {
  const auto it = mil.find(m);
  return it == mil.end() ? mil_default : it->second;
}

std::vector<std::string> PipelineConfig::PoolNames() const {
  std::vector<std::string> names = {"SHAP", "AVG", "MAX"};
  for (int r = 1; r <= rand_pools; ++r) names.push_back("RAND" + std::to_string(r));
  return names;
}

void PipelineConfig::Validate() const {
  Require(folds >= 1, "folds must be >= 1");
  Require(jobs >= 1, "jobs must be >= 1");
  Require(rand_pools >= 0, "rand_pools must be >= 0");
  Require(mil_hidden >= 1 && mil_attention >= 1, "MIL widths must be positive");
  synth.Validate();
  mil_default.Validate();
  for (const auto& [m, c] : mil) c.Validate();
  pool.Validate();
  Require(pool.k <= mil_hidden, "pool k exceeds the embedding width");
  fusion_head.Validate();
  for (const auto& h : comparison_heads) h.Validate();
  const auto names = PoolNames();
  for (const auto& p : grid_pools)
    Require(std::find(names.begin(), names.end(), p) != names.end(),
            "grid pool '" + p + "' is not one of the configured pools");
  Require(mil_hidden % pool.k == 0,
          "window pools need k to divide the embedding width");
}

namespace {

Json ForestConfigJson(const forest::ForestConfig& c) {
  return {{"n_trees", c.n_trees},
          {"max_depth", c.max_depth},
          {"min_samples_leaf", c.min_samples_leaf},
          {"max_features", c.max_features},
          {"bootstrap", c.bootstrap},
          {"num_threads", c.num_threads}};
}

void ForestConfigFrom(const Json& j, forest::ForestConfig& c) {
  if (j.contains("n_trees")) j.at("n_trees").get_to(c.n_trees);
  if (j.contains("max_depth")) j.at("max_depth").get_to(c.max_depth);
  if (j.contains("min_samples_leaf")) j.at("min_samples_leaf").get_to(c.min_samples_leaf);
  if (j.contains("max_features")) j.at("max_features").get_to(c.max_features);
  if (j.contains("bootstrap")) j.at("bootstrap").get_to(c.bootstrap);
  if (j.contains("num_threads")) j.at("num_threads").get_to(c.num_threads);
}

Json TrainConfigJson(const mil::TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience}};
}

void TrainConfigFrom(const Json& j, mil::TrainConfig& c) {
  if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
  if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
  if (j.contains("max_epochs")) j.at("max_epochs").get_to(c.max_epochs);
  if (j.contains("patience")) j.at("patience").get_to(c.patience);
}

Json SynthConfigJson(const data::SynthConfig& c) {
  return {{"num_patients", c.num_patients},
          {"num_classes", c.num_classes},
          {"instance_dim", c.instance_dim},
          {"mean_bag_size", c.mean_bag_size},
          {"bag_size_dispersion", c.bag_size_dispersion},
          {"min_bag_size", c.min_bag_size},
          {"he_signal_dims", c.he_signal_dims},
          {"ihc_signal_dims", c.ihc_signal_dims},
          {"witness_fraction", c.witness_fraction},
          {"signal_strength", c.signal_strength},
          {"cross_signal", c.cross_signal},
          {"noise_scale", c.noise_scale},
          {"reconstruction",
           {{"he_weight", c.reconstruction.he_weight},
            {"ihc_weight", c.reconstruction.ihc_weight},
            {"mixing_jitter", c.reconstruction.mixing_jitter},
            {"noise_scale", c.reconstruction.noise_scale}}}};
}

void SynthConfigFrom(const Json& j, data::SynthConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_patients", c.num_patients);
  get("num_classes", c.num_classes);
  get("instance_dim", c.instance_dim);
  get("mean_bag_size", c.mean_bag_size);
  get("bag_size_dispersion", c.bag_size_dispersion);
  get("min_bag_size", c.min_bag_size);
  get("he_signal_dims", c.he_signal_dims);
  get("ihc_signal_dims", c.ihc_signal_dims);
  get("witness_fraction", c.witness_fraction);
  get("signal_strength", c.signal_strength);
  get("cross_signal", c.cross_signal);
  get("noise_scale", c.noise_scale);
  if (j.contains("reconstruction")) {
    const Json& r = j.at("reconstruction");
    if (r.contains("he_weight")) r.at("he_weight").get_to(c.reconstruction.he_weight);
    if (r.contains("ihc_weight")) r.at("ihc_weight").get_to(c.reconstruction.ihc_weight);
    if (r.contains("mixing_jitter"))
      r.at("mixing_jitter").get_to(c.reconstruction.mixing_jitter);
    if (r.contains("noise_scale")) r.at("noise_scale").get_to(c.reconstruction.noise_scale);
  }
}

}  // namespace

Json ToJson(const PipelineConfig& c) {
  Json mil_per = Json::object();
  for (const auto& [m, tc] : c.mil)
    mil_per[std::string(data::ModalityName(m))] = TrainConfigJson(tc);
  Json cmp = Json::array();
  for (const auto& h : c.comparison_heads) cmp.push_back(heads::ToJson(h));
  return {{"out_dir", c.out_dir.generic_string()},
          {"master_seed", c.master_seed},
          {"folds", c.folds},
          {"ratios", c.ratios},
          {"jobs", c.jobs},
          {"synth", SynthConfigJson(c.synth)},
          {"mil",
           {{"hidden_dim", c.mil_hidden},
            {"attention_dim", c.mil_attention},
            {"train", TrainConfigJson(c.mil_default)},
            {"per_modality", mil_per}}},
          {"pool",
           {{"k", c.pool.k},
            {"background_size", c.pool.background_size},
            {"holdout_fraction", c.pool.holdout_fraction},
            {"num_threads", c.pool.num_threads},
            {"attribute_on", c.attribute_on == AttributionSource::kVal ? "VAL" : "TEST"},
            {"rand_pools", c.rand_pools},
            {"forest", ForestConfigJson(c.pool.forest)}}},
          {"fusion_head", heads::ToJson(c.fusion_head)},
          {"grid_pools", c.grid_pools},
          {"comparison",
           {{"modality", data::ModalityName(c.comparison_modality)},
            {"heads", cmp}}}};
}

PipelineConfig ConfigFromJson(const Json& j, PipelineConfig c) {
  try {
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("master_seed")) j.at("master_seed").get_to(c.master_seed);
    if (j.contains("folds")) j.at("folds").get_to(c.folds);
    if (j.contains("ratios")) j.at("ratios").get_to(c.ratios);
    if (j.contains("jobs")) j.at("jobs").get_to(c.jobs);
    if (j.contains("synth")) SynthConfigFrom(j.at("synth"), c.synth);
    if (j.contains("mil")) {
      const Json& m = j.at("mil");
      if (m.contains("hidden_dim")) m.at("hidden_dim").get_to(c.mil_hidden);
      if (m.contains("attention_dim")) m.at("attention_dim").get_to(c.mil_attention);
      if (m.contains("train")) TrainConfigFrom(m.at("train"), c.mil_default);
      if (m.contains("per_modality")) {
        for (const auto& [name, tj] : m.at("per_modality").items()) {
          const Modality mod = data::ParseModality(name);
          mil::TrainConfig tc = c.MilConfigFor(mod);
          TrainConfigFrom(tj, tc);
          c.mil[mod] = tc;
        }
      }
    }
    if (j.contains("pool")) {
      const Json& p = j.at("pool");
      if (p.contains("k")) p.at("k").get_to(c.pool.k);
      if (p.contains("background_size")) p.at("background_size").get_to(c.pool.background_size);
      if (p.contains("holdout_fraction"))
        p.at("holdout_fraction").get_to(c.pool.holdout_fraction);
      if (p.contains("num_threads")) p.at("num_threads").get_to(c.pool.num_threads);
      if (p.contains("attribute_on")) {
        const auto s = p.at("attribute_on").get<std::string>();
        Require(s == "VAL" || s == "TEST", "pool.attribute_on must be VAL or TEST");
        c.attribute_on = s == "VAL" ? AttributionSource::kVal : AttributionSource::kTest;
      }
      const bool had_default_grid = c.grid_pools == c.PoolNames();
      if (p.contains("rand_pools")) p.at("rand_pools").get_to(c.rand_pools);
      if (had_default_grid) c.grid_pools = c.PoolNames();
      if (p.contains("forest")) ForestConfigFrom(p.at("forest"), c.pool.forest);
    }
    if (j.contains("fusion_head"))
      c.fusion_head = heads::HeadConfigFromJson(j.at("fusion_head"), c.fusion_head);
    if (j.contains("grid_pools")) j.at("grid_pools").get_to(c.grid_pools);
    if (j.contains("comparison")) {
      const Json& cj = j.at("comparison");
      if (cj.contains("modality"))
        c.comparison_modality = data::ParseModality(cj.at("modality").get<std::string>());
      if (cj.contains("heads")) {
        c.comparison_heads.clear();
        for (const Json& hj : cj.at("heads"))
          c.comparison_heads.push_back(heads::HeadConfigFromJson(hj));
      }
    }
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("malformed pipeline config: ") + e.what());
  }
  c.Validate();
  return c;
}

PipelineConfig LoadConfig(const fs::path& path, PipelineConfig base) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return ConfigFromJson(io::ReadJson(path), std::move(base));
}

fs::path FoldDir(const fs::path& out_dir, int fold) {
  return out_dir / "folds" / ("fold_" + std::to_string(fold));
}

MeanSd Summarize(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  for (const double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (const double x : v) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

Json LoadSummary(const fs::path& out_dir) {
  const fs::path p = out_dir / "summary.json";
  if (!fs::exists(p))
    throw IoError("missing " + p.string() + "; run `shapfuse report` first");
  return io::ReadJson(p);
}

namespace {

// ---------------------------------------------------------------------------
// Run manifest

std::string Mod(Modality m) { return std::string(data::ModalityName(m)); }
std::string PartStr(Part p) { return std::string(data::PartName(p)); }

std::string FoldKey(Stage s, int fold) {
  return std::string(StageName(s)) + "/fold_" + std::to_string(fold);
}
std::string FoldModKey(Stage s, int fold, Modality m) {
  return FoldKey(s, fold) + "/" + Mod(m);
}

Stage StageOfKey(const std::string& key) {
  return ParseStage(key.substr(0, key.find('/')));
}

struct Unit {
  std::string key;
  std::vector<std::string> deps;
  std::uint64_t seed = 0;
  std::function<std::vector<fs::path>()> run;
};

class RunManifest {
 public:
  explicit RunManifest(fs::path out_dir) : out_(std::move(out_dir)) {
    const fs::path p = out_ / "run_manifest.json";
    if (fs::exists(p)) {
      j_ = io::ReadJson(p);
    }
    if (!j_.is_object()) j_ = Json::object();
    if (!j_.contains("units")) j_["units"] = Json::object();
  }

  const Json* Find(const std::string& key) const {
    const auto& units = j_.at("units");
    const auto it = units.find(key);
    return it == units.end() ? nullptr : &*it;
  }

  // True when the record exists and every output still hashes the same.
  bool Intact(const std::string& key) {
    if (verified_.count(key)) return true;
    const Json* r = Find(key);
    if (!r) return false;
    for (const auto& [rel, hash] : r->at("outputs").items()) {
      const fs::path p = out_ / rel;
      if (!fs::exists(p) || io::Sha256File(p) != hash.get<std::string>()) return false;
    }
    verified_.insert(key);
    return true;
  }

  std::string Digest(const std::string& key) const {
    const Json* r = Find(key);
    return r ? r->at("digest").get<std::string>() : std::string();
  }

  void Record(const std::string& key, Json record) {
    j_["units"][key] = std::move(record);
    verified_.insert(key);
  }

  void SetConfig(const Json& snapshot) {
    j_["config"] = snapshot;
  }

  void Save() const { io::WriteJson(out_ / "run_manifest.json", j_); }

 private:
  fs::path out_;
  Json j_;
  std::set<std::string> verified_;
};

// Config fields each stage depends on.
Json StageConfig(const PipelineConfig& c, Stage s) {
  const Json all = ToJson(c);
  Json j = {{"master_seed", c.master_seed}};
  switch (s) {
    case Stage::kSynth:
      j["synth"] = all["synth"];
      j["folds"] = c.folds;
      j["ratios"] = c.ratios;
      break;
    case Stage::kTrainMil:
      j["mil"] = all["mil"];
      break;
    case Stage::kExtract:
      break;
    case Stage::kFitPool:
      j["pool"] = all["pool"];
      break;
    case Stage::kFuse:
      j["k"] = c.pool.k;
      j["pools"] = c.PoolNames();
      break;
    case Stage::kEvaluate:
      j["fusion_head"] = all["fusion_head"];
      j["grid_pools"] = all["grid_pools"];
      j["comparison"] = all["comparison"];
      break;
    case Stage::kReport:
      j["grid_pools"] = all["grid_pools"];
      break;
  }
  return j;
}

class Timings {
 public:
  explicit Timings(const fs::path& out) : path_(out / "timings.json") {
    if (fs::exists(path_)) j_ = io::ReadJson(path_);
    if (!j_.is_object()) j_ = Json::object();
  }
  void Set(const std::string& key, double seconds) { j_[key] = seconds; }
  void Save() const { io::WriteJson(path_, j_); }

 private:
  fs::path path_;
  Json j_;
};

std::mutex log_mutex;

void Log(const std::string& line) {
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << line << '\n';
}

// Runs the units of one stage: dependency checks first, then every unit
// whose record is stale, then manifest bookkeeping in unit order.
StageOutcome Execute(const PipelineConfig& config, Stage stage,
                     std::vector<Unit> units) {
  const fs::path& out = config.out_dir;
  RunManifest manifest(out);
  const Json stage_cfg = StageConfig(config, stage);
  const std::string cfg_hash = io::Sha256Hex(stage_cfg.dump());

  for (const Unit& u : units) {
    for (const std::string& dep : u.deps) {
      if (!manifest.Intact(dep)) {
        const std::string producer(StageName(StageOfKey(dep)));
        throw IoError("missing or modified output of `" + producer + "` (" + dep +
                      ") under " + out.string() + "; run `shapfuse " + producer +
                      "` first");
      }
    }
  }

  auto inputs_of = [&](const Unit& u) {
    Json inputs = Json::object();
    for (const std::string& dep : u.deps) inputs[dep] = manifest.Digest(dep);
    return inputs;
  };

  std::vector<std::size_t> pending;
  StageOutcome outcome;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const Unit& u = units[i];
    const Json* r = manifest.Find(u.key);
    const bool fresh = r && r->at("config_hash") == cfg_hash &&
                       r->at("seed").get<std::uint64_t>() == u.seed &&
                       r->at("inputs") == inputs_of(u) && manifest.Intact(u.key);
    if (fresh) {
      ++outcome.units_skipped;
      Log("[" + std::string(StageName(stage)) + "] " + u.key + ": up to date");
    } else {
      pending.push_back(i);
    }
  }

  std::vector<std::vector<fs::path>> written(units.size());
  std::vector<double> seconds(units.size(), 0.0);
  ParallelFor(pending.size(), config.jobs, [&](std::size_t t) {
    const std::size_t i = pending[t];
    const auto start = std::chrono::steady_clock::now();
    written[i] = units[i].run();
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                     .count();
    std::ostringstream os;
    os << "[" << StageName(stage) << "] " << units[i].key << ": done in "
       << std::fixed << std::setprecision(1) << seconds[i] << " s";
    Log(os.str());
  });

  Timings timings(out);
  for (const std::size_t i : pending) {
    const Unit& u = units[i];
    Json outputs = Json::object();
    std::vector<fs::path> files = written[i];
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files)
      outputs[fs::relative(f, out).generic_string()] = io::Sha256File(f);
    Json record = {{"seed", u.seed},
                   {"config_hash", cfg_hash},
                   {"inputs", inputs_of(u)},
                   {"outputs", outputs}};
    record["digest"] = io::Sha256Hex(record.dump());
    manifest.Record(u.key, std::move(record));
    timings.Set(u.key, seconds[i]);
    ++outcome.units_run;
  }
  Json snapshot = ToJson(config);
  snapshot.erase("out_dir");
  snapshot.erase("jobs");
  manifest.SetConfig(snapshot);
  manifest.Save();
  timings.Save();
  return outcome;
}

// ---------------------------------------------------------------------------
// Artifacts

fs::path CohortDir(const fs::path& out) { return out / "cohort"; }
fs::path SplitPath(const fs::path& out, int f) { return FoldDir(out, f) / "splits.json"; }
fs::path MilPath(const fs::path& out, int f, Modality m) {
  return FoldDir(out, f) / "mil" / (Mod(m) + ".json");
}
fs::path EmbeddingPath(const fs::path& out, int f, Modality m, Part p) {
  return FoldDir(out, f) / "embeddings" / (Mod(m) + "_" + PartStr(p) + ".csv");
}
fs::path PoolDir(const fs::path& out, int f, Modality m) {
  return FoldDir(out, f) / "pool" / Mod(m);
}
fs::path SelectorPath(const fs::path& out, int f, Modality m, const std::string& pool) {
  return PoolDir(out, f, m) / ("selector_" + pool + ".json");
}
fs::path PooledPath(const fs::path& out, int f, const std::string& pool, Modality m,
                    Part p) {
  return FoldDir(out, f) / "pooled" / pool / (Mod(m) + "_" + PartStr(p) + ".csv");
}
fs::path FusedPath(const fs::path& out, int f, Part p) {
  return FoldDir(out, f) / "fused" / ("F_" + PartStr(p) + ".csv");
}
fs::path MetricsPath(const fs::path& out, int f) { return FoldDir(out, f) / "metrics.json"; }

std::vector<fs::path> FilesUnder(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

void SaveTable(const fs::path& path, const Matrix& x, const std::vector<std::string>& ids,
               const std::vector<int>& labels, std::uint64_t seed,
               const std::string& producer, Json extra,
               const std::string& column_prefix) {
  io::MatrixManifest mm;
  mm.seed = seed;
  mm.producer = producer;
  extra["patient_ids"] = ids;
  extra["labels"] = labels;
  mm.extra = std::move(extra);
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < x.cols(); ++j) cols.push_back(column_prefix + std::to_string(j));
  io::SaveMatrix(path, x, std::move(mm), cols);
}

mil::EmbeddingTable LoadTable(const fs::path& path) {
  io::MatrixManifest mm;
  mil::EmbeddingTable t;
  t.z = io::LoadMatrix(path, &mm);
  try {
    t.patient_ids = mm.extra.at("patient_ids").get<std::vector<std::string>>();
    t.labels = mm.extra.at("labels").get<std::vector<int>>();
  } catch (const Json::exception& e) {
    throw IoError("malformed table manifest for " + path.string() + ": " + e.what());
  }
  CheckShape(t.patient_ids.size() == static_cast<std::size_t>(t.z.rows()) &&
                 t.labels.size() == t.patient_ids.size(),
             "row metadata does not match " + path.string());
  return t;
}

// Lazily loaded, shared read-only across the units of a stage.
class CohortCache {
 public:
  explicit CohortCache(fs::path out) : out_(std::move(out)) {}
  const data::Cohort& Get() {
    std::call_once(once_, [&] { cohort_ = io::LoadCohort(CohortDir(out_)); });
    return cohort_;
  }

 private:
  fs::path out_;
  std::once_flag once_;
  data::Cohort cohort_;
};

data::SplitAssignment LoadSplit(const fs::path& out, int f) {
  return io::SplitFromJson(io::ReadJson(SplitPath(out, f)));
}

mil::MilShape ShapeFor(const PipelineConfig& c) {
  return {c.synth.instance_dim, c.mil_hidden, c.mil_attention, c.synth.num_classes};
}

// ---------------------------------------------------------------------------
// Stages

std::vector<Unit> SynthUnits(const PipelineConfig& c) {
  Unit u;
  u.key = "synth";
  u.seed = DeriveSeed(c.master_seed, "synth");
  u.run = [&c, seed = u.seed] {
    const fs::path& out = c.out_dir;
    data::SynthConfig sc = c.synth;
    sc.seed = seed;
    const data::Cohort cohort = data::GenerateSyntheticCohort(sc);
    fs::remove_all(CohortDir(out));
    io::SaveCohort(CohortDir(out), cohort);
    std::vector<fs::path> files = FilesUnder(CohortDir(out));
    for (int f = 0; f < c.folds; ++f) {
      const auto split = data::StratifiedSplit(
          cohort, c.ratios, DeriveSeed(c.master_seed, "split", static_cast<std::uint64_t>(f)));
      io::WriteJson(SplitPath(out, f), io::SplitToJson(split));
      files.push_back(SplitPath(out, f));
    }
    return files;
  };
  return {u};
}

std::vector<Unit> TrainMilUnits(const PipelineConfig& c, CohortCache& cohorts) {
  std::vector<Unit> units;
  for (int f = 0; f < c.folds; ++f) {
    for (const Modality m : data::kAllModalities) {
      Unit u;
      u.key = FoldModKey(Stage::kTrainMil, f, m);
      u.deps = {"synth"};
      u.seed = DeriveSeed(c.master_seed, "mil", static_cast<std::uint64_t>(f),
                          static_cast<std::uint64_t>(m));
      u.run = [&c, &cohorts, f, m, seed = u.seed] {
        const data::Cohort& cohort = cohorts.Get();
        const auto split = LoadSplit(c.out_dir, f);
        mil::TrainConfig tc = c.MilConfigFor(m);
        tc.seed = seed;
        const mil::MilModel model = mil::TrainMil(
            data::BagsFor(cohort, m, split.PatientsIn(cohort, Part::kTrain)),
            data::BagsFor(cohort, m, split.PatientsIn(cohort, Part::kVal)),
            ShapeFor(c), tc);
        const fs::path p = MilPath(c.out_dir, f, m);
        io::WriteJson(p, mil::ToJson(model));
        std::ostringstream os;
        os << "[train-mil] fold " << f << " " << Mod(m) << ": " << model.report.epochs_run
           << " epochs, best " << model.report.best_epoch << " (val loss "
           << std::setprecision(4) << model.report.best_val_loss << ")";
        Log(os.str());
        return std::vector<fs::path>{p};
      };
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<Unit> ExtractUnits(const PipelineConfig& c, CohortCache& cohorts) {
  std::vector<Unit> units;
  for (int f = 0; f < c.folds; ++f) {
    for (const Modality m : data::kAllModalities) {
      Unit u;
      u.key = FoldModKey(Stage::kExtract, f, m);
      u.deps = {"synth", FoldModKey(Stage::kTrainMil, f, m)};
      u.run = [&c, &cohorts, f, m] {
        const data::Cohort& cohort = cohorts.Get();
        const auto split = LoadSplit(c.out_dir, f);
        const mil::MilModel model =
            mil::MilModelFromJson(io::ReadJson(MilPath(c.out_dir, f, m)));
        std::vector<fs::path> files;
        for (const Part p : data::kAllParts) {
          const auto table = mil::ExtractEmbeddings(
              model, data::BagsFor(cohort, m, split.PatientsIn(cohort, p)));
          CheckShape(table.z.cols() == c.mil_hidden, "embedding width mismatch");
          const fs::path path = EmbeddingPath(c.out_dir, f, m, p);
          SaveTable(path, table.z, table.patient_ids, table.labels, 0, "extract",
                    {{"modality", Mod(m)}, {"part", PartStr(p)}, {"fold", f}}, "z");
          files.push_back(path);
          files.push_back(io::ManifestPathFor(path));
        }
        return files;
      };
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<Unit> FitPoolUnits(const PipelineConfig& c) {
  std::vector<Unit> units;
  for (int f = 0; f < c.folds; ++f) {
    for (const Modality m : data::kAllModalities) {
      Unit u;
      u.key = FoldModKey(Stage::kFitPool, f, m);
      u.deps = {FoldModKey(Stage::kExtract, f, m)};
      u.seed = DeriveSeed(c.master_seed, "pool", static_cast<std::uint64_t>(f),
                          static_cast<std::uint64_t>(m));
      u.run = [&c, f, m, seed = u.seed] {
        const fs::path& out = c.out_dir;
        const auto train = LoadTable(EmbeddingPath(out, f, m, Part::kTrain));
        const Part attr_part =
            c.attribute_on == AttributionSource::kVal ? Part::kVal : Part::kTest;
        const auto attr = LoadTable(EmbeddingPath(out, f, m, attr_part));
        pool::ShapPoolConfig pc = c.pool;
        pc.seed = seed;
        const pool::ShapPoolFit fit =
            pool::FitShapPool(train.z, train.labels, attr.z, c.synth.num_classes, pc);

        const fs::path dir = PoolDir(out, f, m);
        std::vector<fs::path> files;
        auto save_json = [&](const fs::path& p, const Json& j) {
          io::WriteJson(p, j);
          files.push_back(p);
        };
        auto save_matrix = [&](const std::string& name, const Matrix& x,
                               const std::vector<std::string>& cols, Json extra) {
          io::MatrixManifest mm;
          mm.seed = seed;
          mm.producer = "fit-pool";
          mm.extra = std::move(extra);
          io::SaveMatrix(dir / name, x, std::move(mm), cols);
          files.push_back(dir / name);
          files.push_back(io::ManifestPathFor(dir / name));
        };
        std::vector<std::string> dims;
        for (int j = 0; j < c.mil_hidden; ++j) dims.push_back("z" + std::to_string(j));

        save_json(dir / "forest.json", forest::ToJson(fit.model));
        save_json(SelectorPath(out, f, m, "SHAP"), pool::ToJson(fit.selector));
        const Json rows = {{"patient_ids", attr.patient_ids},
                           {"labels", attr.labels},
                           {"part", PartStr(attr_part)}};
        for (std::size_t cls = 0; cls < fit.attribution.phi.size(); ++cls)
          save_matrix("phi_class" + std::to_string(cls) + ".csv", fit.attribution.phi[cls],
                      dims, rows);
        std::vector<std::string> class_cols;
        for (int cls = 0; cls < c.synth.num_classes; ++cls)
          class_cols.push_back("class" + std::to_string(cls));
        save_matrix("base_values.csv", fit.attribution.base_values, class_cols, rows);
        save_matrix("eval_inputs.csv", fit.eval_inputs, dims, rows);
        save_matrix("background.csv", fit.background, dims, Json::object());
        Matrix scores(1 + fit.attribution.per_class_scores.rows(), c.mil_hidden);
        scores.row(0) = fit.attribution.scores.transpose();
        scores.bottomRows(fit.attribution.per_class_scores.rows()) =
            fit.attribution.per_class_scores;
        save_matrix("scores.csv", scores, dims,
                    {{"rows", "mean over classes, then one row per class"}});

        const int k = c.pool.k;
        save_json(SelectorPath(out, f, m, "AVG"),
                  pool::ToJson(pool::MakeBaselinePool(pool::PoolMethod::kAvg, k, 0,
                                                      c.mil_hidden)));
        save_json(SelectorPath(out, f, m, "MAX"),
                  pool::ToJson(pool::MakeBaselinePool(pool::PoolMethod::kMax, k, 0,
                                                      c.mil_hidden)));
        for (int r = 1; r <= c.rand_pools; ++r) {
          const std::uint64_t rs =
              DeriveSeed(c.master_seed, "rand-pool", static_cast<std::uint64_t>(f),
                         static_cast<std::uint64_t>(static_cast<int>(m) * 64 + r));
          save_json(SelectorPath(out, f, m, "RAND" + std::to_string(r)),
                    pool::ToJson(pool::MakeBaselinePool(pool::PoolMethod::kRand, k, rs,
                                                        c.mil_hidden)));
        }
        return files;
      };
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<Unit> FuseUnits(const PipelineConfig& c) {
  std::vector<Unit> units;
  for (int f = 0; f < c.folds; ++f) {
    Unit u;
    u.key = FoldKey(Stage::kFuse, f);
    for (const Modality m : data::kAllModalities) {
      u.deps.push_back(FoldModKey(Stage::kExtract, f, m));
      u.deps.push_back(FoldModKey(Stage::kFitPool, f, m));
    }
    u.run = [&c, f] {
      const fs::path& out = c.out_dir;
      std::vector<fs::path> files;
      std::map<Part, std::map<Modality, mil::EmbeddingTable>> emb;
      for (const Part p : data::kAllParts)
        for (const Modality m : data::kAllModalities)
          emb[p][m] = LoadTable(EmbeddingPath(out, f, m, p));
      for (const std::string& pool_name : c.PoolNames()) {
        std::map<Modality, pool::DimensionSelector> sel;
        for (const Modality m : data::kAllModalities)
          sel[m] = pool::SelectorFromJson(io::ReadJson(SelectorPath(out, f, m, pool_name)));
        for (const Part p : data::kAllParts) {
          const fusion::PooledPart pooled = fusion::PoolPart(sel, emb[p]);
          for (const auto& [m, x] : pooled.f) {
            CheckShape(x.cols() == c.pool.k, "pooled width differs from k");
            CheckShape(c.pool.k != fusion::kPooledDim || x.cols() == 32,
                       "pooled representation must have length 32");
            const fs::path path = PooledPath(out, f, pool_name, m, p);
            SaveTable(path, x, pooled.patient_ids, pooled.labels, 0, "fuse",
                      {{"pool", pool_name}, {"modality", Mod(m)}, {"part", PartStr(p)}},
                      "f");
            files.push_back(path);
            files.push_back(io::ManifestPathFor(path));
          }
          if (pool_name == "SHAP") {
            const fusion::FusedDataset fused = fusion::BuildFusedDataset(sel, emb[p]);
            CheckShape(fused.x.cols() == fusion::LayoutDim(fusion::Layout::kAll, c.pool.k),
                       "fused width mismatch");
            CheckShape(c.pool.k != fusion::kPooledDim || fused.x.cols() == fusion::kFusedDim,
                       "fused representation must have length 2048");
            const fs::path path = FusedPath(out, f, p);
            SaveTable(path, fused.x, fused.patient_ids, fused.labels, 0, "fuse",
                      {{"pool", pool_name}, {"layout", "HE+REC_HE+IHC"}, {"part", PartStr(p)}},
                      "F");
            files.push_back(path);
            files.push_back(io::ManifestPathFor(path));
          }
        }
      }
      return files;
    };
    units.push_back(std::move(u));
  }
  return units;
}

Json MetricsOf(const heads::Head& head, const Matrix& x, const std::vector<int>& y) {
  return metrics::ToJson(metrics::Evaluate(heads::PredictProba(head, x), y));
}

std::vector<Unit> EvaluateUnits(const PipelineConfig& c, CohortCache& cohorts) {
  std::vector<Unit> units;
  for (int f = 0; f < c.folds; ++f) {
    Unit u;
    u.key = FoldKey(Stage::kEvaluate, f);
    u.deps = {"synth", FoldKey(Stage::kFuse, f)};
    for (const Modality m : data::kAllModalities)
      u.deps.push_back(FoldModKey(Stage::kTrainMil, f, m));
    u.seed = DeriveSeed(c.master_seed, "evaluate", static_cast<std::uint64_t>(f));
    u.run = [&c, &cohorts, f, seed = u.seed] {
      const fs::path& out = c.out_dir;
      const int num_classes = c.synth.num_classes;
      Json result = {{"fold", f}};

      // Unimodal attention-MIL classifiers on the test part.
      const data::Cohort& cohort = cohorts.Get();
      const auto split = LoadSplit(out, f);
      const auto test_ids = split.PatientsIn(cohort, Part::kTest);
      Json mil_metrics = Json::object();
      for (const Modality m : data::kAllModalities) {
        const auto model = mil::MilModelFromJson(io::ReadJson(MilPath(out, f, m)));
        const auto bags = data::BagsFor(cohort, m, test_ids);
        std::vector<int> y;
        for (const data::Bag* b : bags) y.push_back(b->label);
        mil_metrics[Mod(m)] =
            metrics::ToJson(metrics::Evaluate(mil::PredictProba(model, bags), y));
      }
      result["mil"] = mil_metrics;

      const auto pool_names = c.PoolNames();
      std::map<std::string, std::map<Part, fusion::PooledPart>> pooled;
      for (const std::string& pn : pool_names) {
        for (const Part p : data::kAllParts) {
          fusion::PooledPart& part = pooled[pn][p];
          for (const Modality m : data::kAllModalities) {
            auto t = LoadTable(PooledPath(out, f, pn, m, p));
            part.patient_ids = t.patient_ids;
            part.labels = t.labels;
            part.f[m] = std::move(t.z);
          }
        }
      }

      // Pooling comparison on one modality across classifier heads.
      Json cmp = Json::object();
      for (std::size_t h = 0; h < c.comparison_heads.size(); ++h) {
        heads::HeadConfig hc = c.comparison_heads[h];
        Json row = Json::object();
        for (std::size_t pi = 0; pi < pool_names.size(); ++pi) {
          hc.seed = DeriveSeed(seed, "comparison", h, pi);
          auto& parts = pooled[pool_names[pi]];
          const Matrix& xtr = parts[Part::kTrain].f.at(c.comparison_modality);
          const Matrix& xva = parts[Part::kVal].f.at(c.comparison_modality);
          const Matrix& xte = parts[Part::kTest].f.at(c.comparison_modality);
          const heads::Head head =
              heads::TrainHead(xtr, parts[Part::kTrain].labels, xva,
                               parts[Part::kVal].labels, num_classes, hc);
          row[pool_names[pi]] = MetricsOf(head, xte, parts[Part::kTest].labels);
        }
        cmp[std::string(heads::HeadName(hc.kind))] = row;
      }
      result["pooling_comparison"] = {{"modality", Mod(c.comparison_modality)},
                                      {"heads", cmp}};

      // Modality ablation grid with the fusion head.
      Json grid = Json::object();
      for (const std::string& pn : c.grid_pools) {
        const std::size_t pi =
            std::find(pool_names.begin(), pool_names.end(), pn) - pool_names.begin();
        auto& parts = pooled[pn];
        Json row = Json::object();
        for (const fusion::Layout layout : fusion::kAllLayouts) {
          std::map<Part, fusion::FusedDataset> ds;
          for (const Part p : data::kAllParts) {
            if (pn == "SHAP" && layout == fusion::Layout::kAll) {
              const auto t = LoadTable(FusedPath(out, f, p));
              ds[p] = {t.z, t.patient_ids, t.labels};
            } else {
              ds[p] = fusion::Fuse(parts[p], layout);
            }
          }
          if (layout == fusion::Layout::kAll && c.pool.k == fusion::kPooledDim)
            CheckShape(ds[Part::kTrain].x.cols() == fusion::kFusedDim,
                       "fused representation must have length 2048");
          heads::HeadConfig hc = c.fusion_head;
          hc.seed = DeriveSeed(seed, "grid", pi, static_cast<std::uint64_t>(layout));
          const heads::Head head =
              heads::TrainHead(ds[Part::kTrain].x, ds[Part::kTrain].labels,
                               ds[Part::kVal].x, ds[Part::kVal].labels, num_classes, hc);
          row[std::string(fusion::LayoutName(layout))] =
              MetricsOf(head, ds[Part::kTest].x, ds[Part::kTest].labels);
        }
        grid[pn] = row;
      }
      result["grid"] = {{"head", heads::HeadName(c.fusion_head.kind)}, {"pools", grid}};
      result["dims"] = {{"pooled", c.pool.k},
                        {"concat", fusion::LayoutDim(fusion::Layout::kHEandRecHE, c.pool.k)},
                        {"fused", fusion::LayoutDim(fusion::Layout::kAll, c.pool.k)}};
      io::WriteJson(MetricsPath(out, f), result);
      return std::vector<fs::path>{MetricsPath(out, f)};
    };
    units.push_back(std::move(u));
  }
  return units;
}

// {values, mean, sd, n} of one metric over folds; null entries are skipped.
Json Aggregate(const std::vector<Json>& cells, const char* key) {
  std::vector<double> v;
  Json values = Json::array();
  for (const Json& cell : cells) {
    const Json& x = cell.at(key);
    values.push_back(x);
    if (!x.is_null()) v.push_back(x.get<double>());
  }
  const MeanSd s = Summarize(v);
  Json j = {{"values", values}, {"n", v.size()}};
  j["mean"] = v.empty() ? Json(nullptr) : Json(s.mean);
  j["sd"] = v.empty() ? Json(nullptr) : Json(s.sd);
  return j;
}

Json AggregateCell(const std::vector<Json>& folds,
                   const std::function<const Json&(const Json&)>& pick) {
  std::vector<Json> cells;
  for (const Json& fm : folds) cells.push_back(pick(fm));
  return {{"accuracy", Aggregate(cells, "accuracy")}, {"auc", Aggregate(cells, "auc")}};
}

std::string Fmt(const Json& agg) {
  if (agg.at("mean").is_null()) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << agg.at("mean").get<double>() << " ± "
     << agg.at("sd").get<double>();
  return os.str();
}

std::string Num(const Json& agg, const char* key) {
  if (agg.at(key).is_null()) return "";
  return io::FormatDouble(agg.at(key).get<double>());
}

std::vector<Unit> ReportUnits(const PipelineConfig& c) {
  Unit u;
  u.key = "report";
  for (int f = 0; f < c.folds; ++f) u.deps.push_back(FoldKey(Stage::kEvaluate, f));
  u.run = [&c] {
    const fs::path& out = c.out_dir;
    std::vector<Json> folds;
    for (int f = 0; f < c.folds; ++f) folds.push_back(io::ReadJson(MetricsPath(out, f)));

    Json summary = {{"folds", c.folds}, {"master_seed", c.master_seed}};
    Json mil_s = Json::object();
    for (const Modality m : data::kAllModalities)
      mil_s[Mod(m)] = AggregateCell(folds, [&](const Json& fm) -> const Json& {
        return fm.at("mil").at(Mod(m));
      });
    summary["mil"] = mil_s;

    const auto pool_names = c.PoolNames();
    Json cmp = Json::object();
    for (const auto& [head_name, unused] : folds[0].at("pooling_comparison").at("heads").items()) {
      for (const std::string& pn : pool_names)
        cmp[head_name][pn] = AggregateCell(folds, [&](const Json& fm) -> const Json& {
          return fm.at("pooling_comparison").at("heads").at(head_name).at(pn);
        });
    }
    summary["pooling_comparison"] = {
        {"modality", folds[0].at("pooling_comparison").at("modality")}, {"heads", cmp}};

    Json grid = Json::object();
    for (const std::string& pn : c.grid_pools)
      for (const fusion::Layout l : fusion::kAllLayouts) {
        const std::string ln(fusion::LayoutName(l));
        grid[pn][ln] = AggregateCell(folds, [&](const Json& fm) -> const Json& {
          return fm.at("grid").at("pools").at(pn).at(ln);
        });
      }
    summary["grid"] = {{"head", folds[0].at("grid").at("head")}, {"pools", grid}};
    summary["dims"] = folds[0].at("dims");

    // Markdown and CSV tables.
    std::ostringstream md, ablation_csv, pooling_csv;
    md << "# Results\n\n" << c.folds << " Monte Carlo folds, master seed " << c.master_seed
       << ". Cells are test-set mean ± sd over folds.\n\n";
    md << "## Modality ablation (" << folds[0].at("grid").at("head").get<std::string>()
       << " head on pooled/fused features; MIL = attention-MIL classifier)\n\n";
    md << "| Modalities | MIL ACC | MIL AUC";
    for (const std::string& pn : c.grid_pools) md << " | " << pn << " ACC | " << pn << " AUC";
    md << " |\n|---|---|---";
    for (std::size_t i = 0; i < c.grid_pools.size(); ++i) md << "|---|---";
    md << "|\n";
    ablation_csv << "modalities,pool,acc_mean,acc_sd,auc_mean,auc_sd\n";
    for (const fusion::Layout l : fusion::kAllLayouts) {
      const std::string ln(fusion::LayoutName(l));
      const bool unimodal = fusion::NumModalities(l) == 1;
      md << "| " << ln;
      if (unimodal) {
        const Json& cell = mil_s.at(ln);
        md << " | " << Fmt(cell.at("accuracy")) << " | " << Fmt(cell.at("auc"));
        ablation_csv << ln << ",MIL," << Num(cell.at("accuracy"), "mean") << ','
                     << Num(cell.at("accuracy"), "sd") << ',' << Num(cell.at("auc"), "mean")
                     << ',' << Num(cell.at("auc"), "sd") << '\n';
      } else {
        md << " | - | -";
      }
      for (const std::string& pn : c.grid_pools) {
        const Json& cell = grid.at(pn).at(ln);
        md << " | " << Fmt(cell.at("accuracy")) << " | " << Fmt(cell.at("auc"));
        ablation_csv << ln << ',' << pn << ',' << Num(cell.at("accuracy"), "mean") << ','
                     << Num(cell.at("accuracy"), "sd") << ',' << Num(cell.at("auc"), "mean")
                     << ',' << Num(cell.at("auc"), "sd") << '\n';
      }
      md << " |\n";
    }
    md << "\n## Pooling comparison on "
       << summary["pooling_comparison"]["modality"].get<std::string>()
       << " (test ACC)\n\n| Classifier";
    for (const std::string& pn : pool_names) md << " | " << pn;
    md << " |\n|---";
    for (std::size_t i = 0; i < pool_names.size(); ++i) md << "|---";
    md << "|\n";
    pooling_csv << "classifier,pool,acc_mean,acc_sd,auc_mean,auc_sd\n";
    for (const auto& [head_name, row] : cmp.items()) {
      md << "| " << head_name;
      for (const std::string& pn : pool_names) {
        const Json& cell = row.at(pn);
        md << " | " << Fmt(cell.at("accuracy"));
        pooling_csv << head_name << ',' << pn << ',' << Num(cell.at("accuracy"), "mean")
                    << ',' << Num(cell.at("accuracy"), "sd") << ','
                    << Num(cell.at("auc"), "mean") << ',' << Num(cell.at("auc"), "sd")
                    << '\n';
      }
      md << " |\n";
    }
    const Json& dims = summary["dims"];
    md << "\nFeature widths: pooled " << dims["pooled"] << ", concatenated H&E "
       << dims["concat"] << ", fused " << dims["fused"] << ".\n";

    io::WriteJson(out / "summary.json", summary);
    io::WriteText(out / "report.md", md.str());
    io::WriteText(out / "table_ablation.csv", ablation_csv.str());
    io::WriteText(out / "table_pooling.csv", pooling_csv.str());
    return std::vector<fs::path>{out / "summary.json", out / "report.md",
                                 out / "table_ablation.csv", out / "table_pooling.csv"};
  };
  return {u};
}

}  // namespace

StageOutcome RunStage(const PipelineConfig& config, Stage stage) {
  config.Validate();
  fs::create_directories(config.out_dir);
  CohortCache cohorts(config.out_dir);
  std::vector<Unit> units;
  switch (stage) {
    case Stage::kSynth: units = SynthUnits(config); break;
    case Stage::kTrainMil: units = TrainMilUnits(config, cohorts); break;
    case Stage::kExtract: units = ExtractUnits(config, cohorts); break;
    case Stage::kFitPool: units = FitPoolUnits(config); break;
    case Stage::kFuse: units = FuseUnits(config); break;
    case Stage::kEvaluate: units = EvaluateUnits(config, cohorts); break;
    case Stage::kReport: units = ReportUnits(config); break;
  }
  return Execute(config, stage, std::move(units));
}

std::map<Stage, StageOutcome> RunAll(const PipelineConfig& config, Stage last) {
  config.Validate();
  std::map<Stage, StageOutcome> outcomes;
  for (const Stage s : kAllStages) {
    outcomes[s] = RunStage(config, s);
    if (s == last) break;
  }
  return outcomes;
}

}  // namespace shapfuse::pipeline
