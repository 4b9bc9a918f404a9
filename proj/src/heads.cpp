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

#include "shapfuse/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>

#include "shapfuse/optim.hpp"

namespace shapfuse::heads {

std::string_view HeadName(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlp: return "MLP";
    case HeadKind::kForest: return "FOREST";
    case HeadKind::kLogistic: return "LOGISTIC";
    case HeadKind::kKnn: return "KNN";
    case HeadKind::kTree: return "TREE";
  }
  return "?";
}

HeadKind ParseHead(std::string_view name) {
  for (const HeadKind k : kAllHeads)
    if (HeadName(k) == name) return k;
  throw InvalidArgument("unknown classifier head '" + std::string(name) + "'");
}

void HeadConfig::Validate() const {
  Require(hidden >= 1, "MLP hidden width must be positive");
  Require(learning_rate >= 0.0 && logistic_learning_rate >= 0.0,
          "learning rates must be >= 0");
  Require(weight_decay >= 0.0 && logistic_weight_decay >= 0.0,
          "weight decay must be >= 0");
  Require(max_epochs >= 1 && patience >= 1 && logistic_epochs >= 1,
          "epoch counts must be positive");
  Require(batch_size >= 1, "batch size must be positive");
  Require(knn_k >= 1, "knn k must be positive");
  forest.Validate();
}

namespace {

void Glorot(Matrix& m, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
}

void SoftmaxRows(Matrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i);
    r.array() -= r.maxCoeff();
    r = r.array().exp().matrix();
    r /= r.sum();
  }
}

// Cross-entropy of softmax(logits) and its gradient wrt the logits, both
// averaged over rows.
double SoftmaxCrossEntropy(const Matrix& logits, const std::vector<int>& y,
                           Matrix* dlogits) {
  Matrix p = logits;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    const double mx = r.maxCoeff();
    const double lse = mx + std::log((r.array() - mx).exp().sum());
    loss += lse - r(y[i]);
    r = (r.array() - lse).exp().matrix();
  }
  const double n = static_cast<double>(p.rows());
  if (dlogits) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, y[i]) -= 1.0;
    *dlogits = p / n;
  }
  return loss / n;
}

Matrix Rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

Matrix Standardized(const Head& head, const Matrix& x) {
  if (head.mean.size() == 0) return x;
  Matrix out = x;
  out.rowwise() -= head.mean.transpose();
  out.array().rowwise() /= head.scale.transpose().array();
  return out;
}

void CheckLabels(const std::vector<int>& y, int num_classes, Eigen::Index rows) {
  CheckShape(static_cast<Eigen::Index>(y.size()) == rows,
             "label count does not match feature rows");
  for (const int c : y) Require(c >= 0 && c < num_classes, "label out of range");
}

void TrainMlp(Head& head, const Matrix& x, const std::vector<int>& y,
              const Matrix& xv, const std::vector<int>& yv) {
  const HeadConfig& cfg = head.config;
  Require(!yv.empty(), "MLP head needs a validation set for early stopping");
  head.mlp = MlpParams::Init(head.input_dim, cfg.hidden, head.num_classes,
                             DeriveSeed(cfg.seed, "head-mlp-init"));
  MlpParams grad = MlpParams::ZerosLike(head.mlp);
  std::vector<std::size_t> sizes;
  for (const auto g : head.mlp.groups()) sizes.push_back(g.size());
  Adam adam(sizes, cfg.learning_rate, cfg.weight_decay);

  std::mt19937_64 rng(DeriveSeed(cfg.seed, "head-mlp-order"));
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);

  MlpParams best = head.mlp;
  double best_loss = MlpLossAndGradient(xv, yv, head.mlp, nullptr);
  int best_epoch = 0;
  std::vector<int> yb;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + s, e - s);
      yb.clear();
      for (const std::size_t i : idx) yb.push_back(y[i]);
      const double loss = MlpLossAndGradient(Rows(x, idx), yb, head.mlp, &grad);
      if (!std::isfinite(loss))
        throw DivergenceError("MLP head diverged at epoch " + std::to_string(epoch));
      adam.Step(head.mlp.groups(), std::as_const(grad).groups());
    }
    head.epochs_run = epoch;
    const double vl = MlpLossAndGradient(xv, yv, head.mlp, nullptr);
    if (!std::isfinite(vl))
      throw DivergenceError("MLP head validation loss is non-finite");
    if (vl < best_loss) {
      best_loss = vl;
      best_epoch = epoch;
      best = head.mlp;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  head.mlp = std::move(best);
}

void TrainLogistic(Head& head, const Matrix& x, const std::vector<int>& y,
                   const Matrix& xv, const std::vector<int>& yv) {
  const HeadConfig& cfg = head.config;
  Require(!yv.empty(), "logistic head needs a validation set");
  MlpParams& p = head.mlp;
  p.w2 = Matrix::Zero(head.num_classes, head.input_dim);
  p.b2 = Vector::Zero(head.num_classes);
  Matrix gw(p.w2.rows(), p.w2.cols());
  Vector gb(p.b2.size());
  Adam adam({static_cast<std::size_t>(p.w2.size()), static_cast<std::size_t>(p.b2.size())},
            cfg.logistic_learning_rate, cfg.logistic_weight_decay);

  auto loss_of = [&](const Matrix& xs, const std::vector<int>& ys, bool with_grad) {
    Matrix logits = xs * p.w2.transpose();
    logits.rowwise() += p.b2.transpose();
    Matrix d;
    const double loss = SoftmaxCrossEntropy(logits, ys, with_grad ? &d : nullptr);
    if (with_grad) {
      gw.noalias() = d.transpose() * xs;
      gb = d.colwise().sum().transpose();
    }
    return loss;
  };

  Matrix best_w = p.w2;
  Vector best_b = p.b2;
  double best_loss = loss_of(xv, yv, false);
  for (int epoch = 1; epoch <= cfg.logistic_epochs; ++epoch) {
    const double loss = loss_of(x, y, true);
    if (!std::isfinite(loss)) throw DivergenceError("logistic head diverged");
    adam.Step<2>({std::span<double>(p.w2.data(), p.w2.size()),
                  std::span<double>(p.b2.data(), p.b2.size())},
                 {std::span<const double>(gw.data(), gw.size()),
                  std::span<const double>(gb.data(), gb.size())});
    head.epochs_run = epoch;
    const double vl = loss_of(xv, yv, false);
    if (vl < best_loss) {
      best_loss = vl;
      best_w = p.w2;
      best_b = p.b2;
    }
  }
  p.w2 = std::move(best_w);
  p.b2 = std::move(best_b);
}

}  // namespace

MlpParams MlpParams::Init(int input_dim, int hidden, int num_classes,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpParams p;
  p.w1.resize(hidden, input_dim);
  p.w2.resize(num_classes, hidden);
  Glorot(p.w1, rng);
  Glorot(p.w2, rng);
  p.b1 = Vector::Zero(hidden);
  p.b2 = Vector::Zero(num_classes);
  return p;
}

MlpParams MlpParams::ZerosLike(const MlpParams& p) {
  return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Vector::Zero(p.b1.size()),
          Matrix::Zero(p.w2.rows(), p.w2.cols()), Vector::Zero(p.b2.size())};
}

std::array<std::span<double>, 4> MlpParams::groups() {
  auto s = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  return {s(w1), s(b1), s(w2), s(b2)};
}

std::array<std::span<const double>, 4> MlpParams::groups() const {
  auto s = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {s(w1), s(b1), s(w2), s(b2)};
}

Matrix MlpLogits(const Matrix& x, const MlpParams& p) {
  CheckShape(x.cols() == p.w1.cols(), "MLP input width mismatch");
  Matrix h = x * p.w1.transpose();
  h.rowwise() += p.b1.transpose();
  h = h.cwiseMax(0.0);
  Matrix logits = h * p.w2.transpose();
  logits.rowwise() += p.b2.transpose();
  return logits;
}

double MlpLossAndGradient(const Matrix& x, const std::vector<int>& y,
                          const MlpParams& p, MlpParams* grad) {
  CheckShape(x.cols() == p.w1.cols(), "MLP input width mismatch");
  CheckShape(static_cast<Eigen::Index>(y.size()) == x.rows() && x.rows() > 0,
             "MLP batch/label mismatch");
  Matrix pre = x * p.w1.transpose();
  pre.rowwise() += p.b1.transpose();
  const Matrix h = pre.cwiseMax(0.0);
  Matrix logits = h * p.w2.transpose();
  logits.rowwise() += p.b2.transpose();
  Matrix dlogits;
  const double loss = SoftmaxCrossEntropy(logits, y, grad ? &dlogits : nullptr);
  if (!grad) return loss;
  grad->w2.noalias() = dlogits.transpose() * h;
  grad->b2 = dlogits.colwise().sum().transpose();
  Matrix dh = dlogits * p.w2;
  dh = (pre.array() > 0.0).select(dh, 0.0);
  grad->w1.noalias() = dh.transpose() * x;
  grad->b1 = dh.colwise().sum().transpose();
  return loss;
}

Head TrainHead(const Matrix& x_train, const std::vector<int>& y_train,
               const Matrix& x_val, const std::vector<int>& y_val,
               int num_classes, const HeadConfig& config) {
  config.Validate();
  Require(num_classes >= 2, "need at least two classes");
  Require(x_train.rows() >= 1, "empty training set");
  CheckLabels(y_train, num_classes, x_train.rows());
  CheckLabels(y_val, num_classes, x_val.rows());
  CheckShape(x_val.rows() == 0 || x_val.cols() == x_train.cols(),
             "train/validation feature widths differ");
  Require(AllFinite(x_train), "non-finite training features");

  Head head;
  head.config = config;
  head.num_classes = num_classes;
  head.input_dim = static_cast<int>(x_train.cols());
  if (config.standardize) {
    head.mean = x_train.colwise().mean().transpose();
    const Matrix centered = x_train.rowwise() - head.mean.transpose();
    head.scale = (centered.array().square().colwise().sum() /
                  static_cast<double>(x_train.rows()))
                     .sqrt()
                     .transpose();
    for (Eigen::Index j = 0; j < head.scale.size(); ++j)
      if (head.scale[j] < 1e-12) head.scale[j] = 1.0;
  }
  const Matrix x = Standardized(head, x_train);
  const Matrix xv = Standardized(head, x_val);

  switch (config.kind) {
    case HeadKind::kMlp:
      TrainMlp(head, x, y_train, xv, y_val);
      break;
    case HeadKind::kLogistic:
      TrainLogistic(head, x, y_train, xv, y_val);
      break;
    case HeadKind::kForest: {
      forest::ForestConfig fc = config.forest;
      fc.seed = DeriveSeed(config.seed, "head-forest");
      head.forest = forest::FitForest(x, y_train, num_classes, fc);
      break;
    }
    case HeadKind::kTree: {
      forest::ForestConfig fc = config.forest;
      fc.n_trees = 1;
      fc.bootstrap = false;
      fc.max_features = head.input_dim;
      fc.num_threads = 1;
      fc.seed = DeriveSeed(config.seed, "head-tree");
      head.forest = forest::FitForest(x, y_train, num_classes, fc);
      break;
    }
    case HeadKind::kKnn:
      head.knn_x = x;
      head.knn_y = y_train;
      break;
  }
  return head;
}

Matrix PredictProba(const Head& head, const Matrix& x_raw) {
  CheckShape(x_raw.cols() == head.input_dim, "head input width mismatch");
  const Matrix x = Standardized(head, x_raw);
  switch (head.config.kind) {
    case HeadKind::kMlp: {
      Matrix p = MlpLogits(x, head.mlp);
      SoftmaxRows(p);
      return p;
    }
    case HeadKind::kLogistic: {
      Matrix p = x * head.mlp.w2.transpose();
      p.rowwise() += head.mlp.b2.transpose();
      SoftmaxRows(p);
      return p;
    }
    case HeadKind::kForest:
    case HeadKind::kTree:
      return forest::PredictProba(head.forest, x);
    case HeadKind::kKnn: {
      const int k = std::min<int>(head.config.knn_k, static_cast<int>(head.knn_x.rows()));
      Matrix p = Matrix::Zero(x.rows(), head.num_classes);
      std::vector<std::pair<double, int>> d(static_cast<std::size_t>(head.knn_x.rows()));
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index r = 0; r < head.knn_x.rows(); ++r)
          d[r] = {(head.knn_x.row(r) - x.row(i)).squaredNorm(), static_cast<int>(r)};
        std::partial_sort(d.begin(), d.begin() + k, d.end());
        for (int t = 0; t < k; ++t) p(i, head.knn_y[d[t].second]) += 1.0 / k;
      }
      return p;
    }
  }
  return {};
}

nlohmann::json ToJson(const HeadConfig& c) {
  return {{"kind", HeadName(c.kind)},
          {"hidden", c.hidden},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"logistic_learning_rate", c.logistic_learning_rate},
          {"logistic_weight_decay", c.logistic_weight_decay},
          {"logistic_epochs", c.logistic_epochs},
          {"knn_k", c.knn_k},
          {"standardize", c.standardize},
          {"forest",
           {{"n_trees", c.forest.n_trees},
            {"max_depth", c.forest.max_depth},
            {"min_samples_leaf", c.forest.min_samples_leaf},
            {"max_features", c.forest.max_features},
            {"bootstrap", c.forest.bootstrap}}}};
}

HeadConfig HeadConfigFromJson(const nlohmann::json& j, HeadConfig c) {
  try {
    if (j.contains("kind")) c.kind = ParseHead(j.at("kind").get<std::string>());
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("hidden", c.hidden);
    get("learning_rate", c.learning_rate);
    get("weight_decay", c.weight_decay);
    get("max_epochs", c.max_epochs);
    get("patience", c.patience);
    get("batch_size", c.batch_size);
    get("logistic_learning_rate", c.logistic_learning_rate);
    get("logistic_weight_decay", c.logistic_weight_decay);
    get("logistic_epochs", c.logistic_epochs);
    get("knn_k", c.knn_k);
    get("standardize", c.standardize);
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      if (f.contains("n_trees")) f.at("n_trees").get_to(c.forest.n_trees);
      if (f.contains("max_depth")) f.at("max_depth").get_to(c.forest.max_depth);
      if (f.contains("min_samples_leaf"))
        f.at("min_samples_leaf").get_to(c.forest.min_samples_leaf);
      if (f.contains("max_features")) f.at("max_features").get_to(c.forest.max_features);
      if (f.contains("bootstrap")) f.at("bootstrap").get_to(c.forest.bootstrap);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed head config: ") + e.what());
  }
  c.Validate();
  return c;
}

}  // namespace shapfuse::heads
