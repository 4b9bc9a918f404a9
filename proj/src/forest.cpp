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

#include "shapfuse/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace shapfuse::forest {

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<int>& y, int num_classes,
              const ForestConfig& config, int max_features, std::uint64_t seed)
      : x_(x),
        y_(y),
        num_classes_(num_classes),
        config_(config),
        max_features_(max_features),
        rng_(seed),
        features_(static_cast<std::size_t>(x.cols())) {
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree Build(std::vector<int> samples) {
    tree_ = Tree{};
    tree_.num_classes = num_classes_;
    samples_ = std::move(samples);
    Grow(0, samples_.size(), 0);
    return std::move(tree_);
  }

 private:
  int NewNode(const std::vector<double>& counts, double n) {
    const int id = tree_.num_nodes();
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.cover.push_back(n);
    for (const double c : counts) tree_.value.push_back(c / n);
    return id;
  }

  Split FindSplit(std::size_t begin, std::size_t end,
                  const std::vector<double>& counts) {
    const double n = static_cast<double>(end - begin);
    double parent_score = 0.0;
    for (const double c : counts) parent_score += c * c;
    parent_score /= n;

    const int m = static_cast<int>(features_.size());
    const int candidates = std::min(max_features_, m);
    for (int i = 0; i < candidates; ++i) {
      std::uniform_int_distribution<int> pick(i, m - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }

    Split best;
    std::vector<std::pair<double, int>> column(end - begin);
    std::vector<double> left(num_classes_);
    const int msl = config_.min_samples_leaf;
    for (int fi = 0; fi < candidates; ++fi) {
      const int f = features_[fi];
      for (std::size_t s = begin; s < end; ++s)
        column[s - begin] = {x_(samples_[s], f), y_[samples_[s]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      std::fill(left.begin(), left.end(), 0.0);
      double sum_sq_left = 0.0;
      double sum_sq_right = 0.0;
      for (const double c : counts) sum_sq_right += c * c;
      const std::size_t total = column.size();
      for (std::size_t i = 0; i + 1 < total; ++i) {
        const int label = column[i].second;
        // Moving one sample of `label` from right to left.
        const double l = left[label];
        const double r = counts[label] - l;
        sum_sq_left += 2.0 * l + 1.0;
        sum_sq_right -= 2.0 * r - 1.0;
        left[label] = l + 1.0;
        const std::size_t nl = i + 1;
        const std::size_t nr = total - nl;
        if (column[i].first == column[i + 1].first) continue;
        if (nl < static_cast<std::size_t>(msl) ||
            nr < static_cast<std::size_t>(msl))
          continue;
        const double score = sum_sq_left / static_cast<double>(nl) +
                             sum_sq_right / static_cast<double>(nr);
        const double gain = score - parent_score;
        if (gain > best.gain + 1e-12) {
          const double lo = column[i].first;
          const double hi = column[i + 1].first;
          double thr = lo + (hi - lo) / 2.0;
          if (!(thr < hi)) thr = lo;
          best = {f, thr, gain};
        }
      }
    }
    return best;
  }

  int Grow(std::size_t begin, std::size_t end, int depth) {
    std::vector<double> counts(num_classes_, 0.0);
    for (std::size_t s = begin; s < end; ++s) counts[y_[samples_[s]]] += 1.0;
    const double n = static_cast<double>(end - begin);
    const int node = NewNode(counts, n);

    const bool pure =
        std::count_if(counts.begin(), counts.end(),
                      [](double c) { return c > 0.0; }) <= 1;
    if (pure || depth >= config_.max_depth ||
        end - begin < 2 * static_cast<std::size_t>(config_.min_samples_leaf))
      return node;

    const Split split = FindSplit(begin, end, counts);
    if (split.feature < 0) return node;

    const auto mid = std::partition(
        samples_.begin() + static_cast<std::ptrdiff_t>(begin),
        samples_.begin() + static_cast<std::ptrdiff_t>(end),
        [&](int s) { return x_(s, split.feature) <= split.threshold; });
    const std::size_t cut = static_cast<std::size_t>(mid - samples_.begin());
    tree_.feature[node] = split.feature;
    tree_.threshold[node] = split.threshold;
    const int l = Grow(begin, cut, depth + 1);
    const int r = Grow(cut, end, depth + 1);
    tree_.left[node] = l;
    tree_.right[node] = r;
    return node;
  }

  const Matrix& x_;
  const std::vector<int>& y_;
  int num_classes_;
  const ForestConfig& config_;
  int max_features_;
  std::mt19937_64 rng_;
  std::vector<int> features_;
  std::vector<int> samples_;
  Tree tree_;
};

int DepthFrom(const Tree& t, int node) {
  if (t.is_leaf(node)) return 0;
  return 1 + std::max(DepthFrom(t, t.left[node]), DepthFrom(t, t.right[node]));
}

}  // namespace

int Tree::LeafFor(std::span<const double> x) const {
  int node = 0;
  while (left[node] >= 0)
    node = x[feature[node]] <= threshold[node] ? left[node] : right[node];
  return node;
}

int Tree::Depth() const { return num_nodes() ? DepthFrom(*this, 0) : 0; }

Tree Tree::Leaf(std::span<const double> value, double cover) {
  Tree t;
  t.num_classes = static_cast<int>(value.size());
  t.feature = {-1};
  t.threshold = {0.0};
  t.left = {-1};
  t.right = {-1};
  t.cover = {cover};
  t.value.assign(value.begin(), value.end());
  return t;
}

void TreeEnsemble::ValidateStructure() const {
  Require(!trees.empty(), "ensemble has no trees");
  Require(num_features >= 1 && num_classes >= 1,
          "ensemble needs positive feature and class counts");
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const Tree& tree = trees[t];
    const std::string where = "tree " + std::to_string(t);
    const auto n = static_cast<std::size_t>(tree.num_nodes());
    Require(n >= 1, where + " is empty");
    Require(tree.num_classes == num_classes, where + " class count mismatch");
    Require(tree.threshold.size() == n && tree.left.size() == n &&
                tree.right.size() == n && tree.cover.size() == n &&
                tree.value.size() == n * static_cast<std::size_t>(num_classes),
            where + " has inconsistent node arrays");
    std::vector<int> parents(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      Require(tree.cover[i] >= 1.0, where + " has a node with cover < 1");
      if (tree.left[i] < 0) {
        Require(tree.right[i] < 0, where + " has a half leaf");
        continue;
      }
      Require(tree.feature[i] >= 0 && tree.feature[i] < num_features,
              where + " references feature out of range");
      Require(std::isfinite(tree.threshold[i]), where + " non-finite threshold");
      for (const int c : {tree.left[i], tree.right[i]}) {
        Require(c > static_cast<int>(i) && c < static_cast<int>(n),
                where + " has a bad child index");
        ++parents[c];
      }
      Require(std::abs(tree.cover[tree.left[i]] + tree.cover[tree.right[i]] -
                       tree.cover[i]) <= 1e-9,
              where + " child covers do not sum to parent cover");
    }
    for (std::size_t i = 1; i < n; ++i)
      Require(parents[i] == 1, where + " is not a tree");
  }
}

void TreeEnsemble::Validate() const {
  ValidateStructure();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const Tree& tree = trees[t];
    for (int i = 0; i < tree.num_nodes(); ++i) {
      if (!tree.is_leaf(i)) continue;
      double sum = 0.0;
      for (const double v : tree.node_value(i)) sum += v;
      Require(std::abs(sum - 1.0) <= 1e-9,
              "tree " + std::to_string(t) + " leaf " + std::to_string(i) +
                  " values do not sum to 1");
    }
  }
}

void ForestConfig::Validate() const {
  Require(n_trees >= 1, "forest: n_trees must be >= 1");
  Require(max_depth >= 1, "forest: max_depth must be >= 1");
  Require(min_samples_leaf >= 1, "forest: min_samples_leaf must be >= 1");
  Require(max_features >= 0, "forest: max_features must be >= 0");
  Require(num_threads >= 1, "forest: num_threads must be >= 1");
}

TreeEnsemble FitForest(const Matrix& x, const std::vector<int>& y,
                       int num_classes, const ForestConfig& config) {
  config.Validate();
  const auto n = static_cast<std::size_t>(x.rows());
  Require(n >= 2, "forest: need at least 2 samples");
  CheckShape(y.size() == n, "forest: label count does not match rows");
  Require(x.cols() >= 1, "forest: need at least one feature");
  Require(x.allFinite(), "forest: features contain NaN or infinity");
  Require(num_classes >= 2, "forest: need at least 2 classes");
  std::vector<double> prior(num_classes, 0.0);
  for (const int label : y) {
    Require(label >= 0 && label < num_classes, "forest: label out of range");
    prior[label] += 1.0;
  }
  Require(std::count_if(prior.begin(), prior.end(),
                        [](double c) { return c > 0.0; }) >= 2,
          "forest: training labels contain a single class");
  for (double& p : prior) p /= static_cast<double>(n);

  const int m = static_cast<int>(x.cols());
  const int max_features =
      config.max_features > 0
          ? std::min(config.max_features, m)
          : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));

  TreeEnsemble ensemble;
  ensemble.num_features = m;
  ensemble.num_classes = num_classes;
  ensemble.class_prior = prior;
  ensemble.trees.resize(static_cast<std::size_t>(config.n_trees));

  auto build = [&](int t) {
    const std::uint64_t seed = DeriveSeed(config.seed, "tree", t);
    std::mt19937_64 boot(DeriveSeed(seed, "bootstrap"));
    std::vector<int> samples(n);
    if (config.bootstrap) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
      for (int& s : samples) s = pick(boot);
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    TreeBuilder builder(x, y, num_classes, config, max_features,
                        DeriveSeed(seed, "splits"));
    ensemble.trees[t] = builder.Build(std::move(samples));
  };

  const int threads = std::min(config.num_threads, config.n_trees);
  if (threads <= 1) {
    for (int t = 0; t < config.n_trees; ++t) build(t);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (int t = w; t < config.n_trees; t += threads) build(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return ensemble;
}

Vector PredictProba(const TreeEnsemble& ensemble, std::span<const double> x) {
  CheckShape(x.size() == static_cast<std::size_t>(ensemble.num_features),
             "predict: input length " + std::to_string(x.size()) +
                 " does not match " + std::to_string(ensemble.num_features) +
                 " features");
  Vector out = Vector::Zero(ensemble.num_classes);
  for (const Tree& tree : ensemble.trees) {
    const auto v = tree.node_value(tree.LeafFor(x));
    for (int c = 0; c < ensemble.num_classes; ++c) out(c) += v[c];
  }
  return out / static_cast<double>(ensemble.trees.size());
}

Matrix PredictProba(const TreeEnsemble& ensemble, const Matrix& x) {
  Matrix out(x.rows(), ensemble.num_classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.row(i) = PredictProba(ensemble, Row(x, i)).transpose();
  return out;
}

double ClassMargin(const TreeEnsemble& ensemble, std::span<const double> x,
                   int target_class) {
  Require(target_class >= 0 && target_class < ensemble.num_classes,
          "class index out of range");
  CheckShape(x.size() == static_cast<std::size_t>(ensemble.num_features),
             "class margin: input length mismatch");
  double sum = 0.0;
  for (const Tree& tree : ensemble.trees)
    sum += tree.node_value(tree.LeafFor(x))[target_class];
  return sum / static_cast<double>(ensemble.trees.size());
}

nlohmann::json ToJson(const TreeEnsemble& ensemble) {
  nlohmann::json trees = nlohmann::json::array();
  for (const Tree& t : ensemble.trees) {
    nlohmann::json values = nlohmann::json::array();
    for (int i = 0; i < t.num_nodes(); ++i) {
      const auto v = t.node_value(i);
      values.push_back(std::vector<double>(v.begin(), v.end()));
    }
    trees.push_back({{"feature", t.feature},
                     {"threshold", t.threshold},
                     {"left", t.left},
                     {"right", t.right},
                     {"cover", t.cover},
                     {"value", values}});
  }
  return {{"num_features", ensemble.num_features},
          {"num_classes", ensemble.num_classes},
          {"class_prior", ensemble.class_prior},
          {"trees", trees}};
}

TreeEnsemble EnsembleFromJson(const nlohmann::json& j) {
  TreeEnsemble e;
  try {
    e.num_features = j.at("num_features").get<int>();
    e.num_classes = j.at("num_classes").get<int>();
    e.class_prior = j.at("class_prior").get<std::vector<double>>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      t.num_classes = e.num_classes;
      t.feature = tj.at("feature").get<std::vector<int>>();
      t.threshold = tj.at("threshold").get<std::vector<double>>();
      t.left = tj.at("left").get<std::vector<int>>();
      t.right = tj.at("right").get<std::vector<int>>();
      t.cover = tj.at("cover").get<std::vector<double>>();
      for (const auto& v : tj.at("value")) {
        const auto row = v.get<std::vector<double>>();
        CheckShape(row.size() == static_cast<std::size_t>(e.num_classes),
                   "forest checkpoint: node value has wrong length");
        t.value.insert(t.value.end(), row.begin(), row.end());
      }
      e.trees.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("malformed forest checkpoint: ") + ex.what());
  }
  e.ValidateStructure();
  return e;
}

}  // namespace shapfuse::forest
