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

#include "shapfuse/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "shapfuse/optim.hpp"

namespace shapfuse::mil {

namespace {

void GlorotFill(Matrix& m, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = uni(rng);
}

Matrix Sigmoid(const Matrix& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

void CheckAttention(const Vector& a) {
  const double sum = a.sum();
  if (!(std::abs(sum - 1.0) <= 1e-9) || !(a.array() > 0.0).all())
    throw std::logic_error("attention scores are not a strictly positive "
                           "distribution");
}

double LogSumExp(const Vector& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

nlohmann::json FlatArray(std::span<const double> values) {
  return nlohmann::json(std::vector<double>(values.begin(), values.end()));
}

}  // namespace

MilParams MilParams::Zeros(const MilShape& s) {
  Require(s.input_dim >= 1 && s.hidden_dim >= 1 && s.attention_dim >= 1 &&
              s.num_classes >= 2,
          "MIL shape must have positive dimensions and >= 2 classes");
  MilParams p;
  p.fc_weight = Matrix::Zero(s.hidden_dim, s.input_dim);
  p.fc_bias = Vector::Zero(s.hidden_dim);
  p.attn_v = Matrix::Zero(s.attention_dim, s.hidden_dim);
  p.attn_u = Matrix::Zero(s.attention_dim, s.hidden_dim);
  p.attn_w = Vector::Zero(s.attention_dim);
  p.cls_weight = Matrix::Zero(s.num_classes, s.hidden_dim);
  p.cls_bias = Vector::Zero(s.num_classes);
  return p;
}

MilParams MilParams::Init(const MilShape& s, std::uint64_t seed) {
  MilParams p = Zeros(s);
  std::mt19937_64 rng(seed);
  GlorotFill(p.fc_weight, rng);
  GlorotFill(p.attn_v, rng);
  GlorotFill(p.attn_u, rng);
  Matrix w(1, s.attention_dim);
  GlorotFill(w, rng);
  p.attn_w = w.row(0).transpose();
  GlorotFill(p.cls_weight, rng);
  return p;
}

MilShape MilParams::shape() const {
  return {static_cast<int>(fc_weight.cols()), static_cast<int>(fc_weight.rows()),
          static_cast<int>(attn_v.rows()), static_cast<int>(cls_weight.rows())};
}

void MilParams::Validate() const {
  const MilShape s = shape();
  CheckShape(fc_bias.size() == s.hidden_dim && attn_v.cols() == s.hidden_dim &&
                 attn_u.rows() == s.attention_dim &&
                 attn_u.cols() == s.hidden_dim &&
                 attn_w.size() == s.attention_dim &&
                 cls_weight.cols() == s.hidden_dim &&
                 cls_bias.size() == s.num_classes,
             "MIL parameter shapes are inconsistent");
  for (const auto g : groups())
    for (const double v : g)
      Require(std::isfinite(v), "MIL parameters contain non-finite values");
}

std::array<std::span<double>, MilParams::kNumGroups> MilParams::groups() {
  auto span = [](auto& m) {
    return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span(fc_weight), span(fc_bias),    span(attn_v),  span(attn_u),
          span(attn_w),    span(cls_weight), span(cls_bias)};
}

std::array<std::span<const double>, MilParams::kNumGroups> MilParams::groups()
    const {
  auto span = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span(fc_weight), span(fc_bias),    span(attn_v),  span(attn_u),
          span(attn_w),    span(cls_weight), span(cls_bias)};
}

std::size_t MilParams::NumParameters() const {
  std::size_t n = 0;
  for (const auto g : groups()) n += g.size();
  return n;
}

Matrix CompressInstances(const Matrix& instances, const MilParams& params) {
  CheckShape(instances.cols() == params.fc_weight.cols(),
             "bag instance dimension " + std::to_string(instances.cols()) +
                 " does not match MIL input dimension " +
                 std::to_string(params.fc_weight.cols()));
  Matrix h = instances * params.fc_weight.transpose();
  h.rowwise() += params.fc_bias.transpose();
  return h.cwiseMax(0.0);
}

Vector Softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Vector AttentionScores(const Matrix& h, const MilParams& params) {
  Require(h.rows() >= 1, "attention needs at least one instance");
  CheckShape(h.cols() == params.attn_v.cols(),
             "attention input width does not match hidden dimension");
  const Matrix gate_t = (h * params.attn_v.transpose()).array().tanh().matrix();
  const Matrix gate_s = Sigmoid(h * params.attn_u.transpose());
  const Vector logits = gate_t.cwiseProduct(gate_s) * params.attn_w;
  return Softmax(logits);
}

Vector Aggregate(const Matrix& h, const Vector& attention) {
  CheckShape(attention.size() == h.rows(),
             "attention length does not match instance count");
  return h.transpose() * attention;
}

Vector ClassifierLogits(const Vector& z, const MilParams& params) {
  CheckShape(z.size() == params.cls_weight.cols(),
             "embedding length does not match classifier width");
  return params.cls_weight * z + params.cls_bias;
}

BagForward Forward(const data::Bag& bag, const MilParams& params) {
  Require(bag.size() >= 1, "bag has no instances");
  const Matrix h = CompressInstances(bag.instances, params);
  BagForward out;
  out.attention = AttentionScores(h, params);
  CheckAttention(out.attention);
  out.z = Aggregate(h, out.attention);
  out.logits = ClassifierLogits(out.z, params);
  return out;
}

double LossAndGradient(const Matrix& x, int label, const MilParams& p,
                       MilParams* grad) {
  Require(x.rows() >= 1, "bag has no instances");
  Require(label >= 0 && label < p.cls_weight.rows(), "label out of range");
  CheckShape(x.cols() == p.fc_weight.cols(), "bag instance dimension mismatch");

  Matrix pre = x * p.fc_weight.transpose();
  pre.rowwise() += p.fc_bias.transpose();
  const Matrix h = pre.cwiseMax(0.0);
  const Matrix gate_t = (h * p.attn_v.transpose()).array().tanh().matrix();
  const Matrix gate_s = Sigmoid(h * p.attn_u.transpose());
  const Matrix gated = gate_t.cwiseProduct(gate_s);
  const Vector a = Softmax(gated * p.attn_w);
  const Vector z = h.transpose() * a;
  const Vector logits = p.cls_weight * z + p.cls_bias;
  const double loss = LogSumExp(logits) - logits(label);
  if (!grad) return loss;

  Vector dlogits = Softmax(logits);
  dlogits(label) -= 1.0;
  grad->cls_weight.noalias() = dlogits * z.transpose();
  grad->cls_bias = dlogits;
  const Vector dz = p.cls_weight.transpose() * dlogits;

  // z = h^T a
  Matrix dh = a * dz.transpose();
  const Vector da = h * dz;
  const Vector de = a.cwiseProduct((da.array() - a.dot(da)).matrix());

  grad->attn_w.noalias() = gated.transpose() * de;
  const Matrix dgated = de * p.attn_w.transpose();
  const Matrix dpre_t =
      (dgated.array() * gate_s.array() * (1.0 - gate_t.array().square()))
          .matrix();
  const Matrix dpre_s = (dgated.array() * gate_t.array() * gate_s.array() *
                         (1.0 - gate_s.array()))
                            .matrix();
  grad->attn_v.noalias() = dpre_t.transpose() * h;
  grad->attn_u.noalias() = dpre_s.transpose() * h;
  dh.noalias() += dpre_t * p.attn_v;
  dh.noalias() += dpre_s * p.attn_u;

  const Matrix dpre = (pre.array() > 0.0).select(dh, 0.0);
  grad->fc_weight.noalias() = dpre.transpose() * x;
  grad->fc_bias = dpre.colwise().sum().transpose();
  return loss;
}

void TrainConfig::Validate() const {
  Require(learning_rate >= 0.0 && std::isfinite(learning_rate),
          "learning rate must be finite and >= 0");
  Require(weight_decay >= 0.0, "weight decay must be >= 0");
  Require(max_epochs >= 1, "max_epochs must be >= 1");
  Require(patience >= 1, "patience must be >= 1");
}

MilModel TrainMil(const std::vector<const data::Bag*>& train,
                  const std::vector<const data::Bag*>& val,
                  const MilShape& shape, const TrainConfig& config) {
  config.Validate();
  Require(!train.empty(), "MIL training set is empty");
  Require(!val.empty(), "MIL validation set is empty");

  MilModel model;
  model.params = MilParams::Init(shape, DeriveSeed(config.seed, "mil-init"));
  MilParams grad = MilParams::Zeros(shape);
  std::vector<std::size_t> sizes;
  for (const auto g : model.params.groups()) sizes.push_back(g.size());
  Adam adam(sizes, config.learning_rate, config.weight_decay);

  std::mt19937_64 rng(DeriveSeed(config.seed, "mil-order"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  auto val_loss = [&](const MilParams& params) {
    double total = 0.0;
    for (const data::Bag* bag : val)
      total += LossAndGradient(bag->instances, bag->label, params, nullptr);
    return total / static_cast<double>(val.size());
  };

  MilParams best = model.params;
  double best_loss = val_loss(model.params);
  int best_epoch = 0;
  TrainReport& report = model.report;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (const std::size_t i : order) {
      const data::Bag& bag = *train[i];
      const double loss =
          LossAndGradient(bag.instances, bag.label, model.params, &grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("MIL training diverged at epoch " +
                              std::to_string(epoch) + " on patient " +
                              bag.patient_id + " (loss " +
                              std::to_string(loss) + ")");
      }
      total += loss;
      adam.Step(model.params.groups(), std::as_const(grad).groups());
    }
    const double vl = val_loss(model.params);
    if (!std::isfinite(vl)) {
      throw DivergenceError("MIL validation loss is non-finite at epoch " +
                            std::to_string(epoch));
    }
    report.train_loss.push_back(total / static_cast<double>(train.size()));
    report.val_loss.push_back(vl);
    report.epochs_run = epoch;
    if (vl < best_loss) {
      best_loss = vl;
      best_epoch = epoch;
      best = model.params;
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }
  model.params = std::move(best);
  report.best_epoch = best_epoch;
  report.best_val_loss = best_loss;
  model.trained = true;
  return model;
}

EmbeddingTable ExtractEmbeddings(const MilModel& model,
                                 const std::vector<const data::Bag*>& bags) {
  Require(model.trained, "cannot extract embeddings from an untrained model");
  EmbeddingTable table;
  table.z.resize(static_cast<Eigen::Index>(bags.size()),
                 model.params.shape().hidden_dim);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const BagForward f = Forward(*bags[i], model.params);
    table.z.row(static_cast<Eigen::Index>(i)) = f.z.transpose();
    table.patient_ids.push_back(bags[i]->patient_id);
    table.labels.push_back(bags[i]->label);
  }
  return table;
}

Matrix PredictProba(const MilModel& model,
                    const std::vector<const data::Bag*>& bags) {
  Matrix out(static_cast<Eigen::Index>(bags.size()),
             model.params.shape().num_classes);
  for (std::size_t i = 0; i < bags.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        Softmax(Forward(*bags[i], model.params).logits).transpose();
  return out;
}

nlohmann::json ToJson(const MilModel& model) {
  const MilShape s = model.params.shape();
  nlohmann::json j = {{"shape",
                       {{"input_dim", s.input_dim},
                        {"hidden_dim", s.hidden_dim},
                        {"attention_dim", s.attention_dim},
                        {"num_classes", s.num_classes}}},
                      {"trained", model.trained},
                      {"epochs_run", model.report.epochs_run},
                      {"best_epoch", model.report.best_epoch},
                      {"best_val_loss", model.report.best_val_loss}};
  const auto groups = model.params.groups();
  for (int g = 0; g < MilParams::kNumGroups; ++g)
    j["weights"][MilParams::kGroupNames[g]] = FlatArray(groups[g]);
  return j;
}

MilModel MilModelFromJson(const nlohmann::json& j) {
  MilModel model;
  try {
    const auto& s = j.at("shape");
    const MilShape shape{s.at("input_dim").get<int>(),
                         s.at("hidden_dim").get<int>(),
                         s.at("attention_dim").get<int>(),
                         s.at("num_classes").get<int>()};
    model.params = MilParams::Zeros(shape);
    model.trained = j.at("trained").get<bool>();
    model.report.epochs_run = j.value("epochs_run", 0);
    model.report.best_epoch = j.value("best_epoch", -1);
    model.report.best_val_loss = j.value("best_val_loss", 0.0);
    auto groups = model.params.groups();
    for (int g = 0; g < MilParams::kNumGroups; ++g) {
      const auto values =
          j.at("weights").at(MilParams::kGroupNames[g]).get<std::vector<double>>();
      CheckShape(values.size() == groups[g].size(),
                 std::string("checkpoint group ") + MilParams::kGroupNames[g] +
                     " has the wrong size");
      std::copy(values.begin(), values.end(), groups[g].begin());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed MIL checkpoint: ") + e.what());
  }
  model.params.Validate();
  return model;
}

}  // namespace shapfuse::mil
