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

// Gated-attention multiple-instance network.
//
//   h_k    = relu(W_fc r_k + b_fc)                        (compression)
//   e_k    = w . (tanh(V h_k) * sigmoid(U h_k))           (gated score)
//   a      = softmax_k(e)
//   z      = sum_k a_k h_k                                (bag embedding)
//   logits = W_cls z + b_cls
//
// z is the penultimate activation handed to dimension pooling.

#ifndef SHAPFUSE_MIL_HPP_
#define SHAPFUSE_MIL_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapfuse/common.hpp"
#include "shapfuse/data.hpp"

namespace shapfuse::mil {

struct MilShape {
  int input_dim = 64;
  int hidden_dim = 512;
  int attention_dim = 128;
  int num_classes = 4;

  bool operator==(const MilShape&) const = default;
};

struct MilParams {
  Matrix fc_weight;   // hidden x input
  Vector fc_bias;     // hidden
  Matrix attn_v;      // attention x hidden (tanh branch)
  Matrix attn_u;      // attention x hidden (sigmoid branch)
  Vector attn_w;      // attention
  Matrix cls_weight;  // classes x hidden
  Vector cls_bias;    // classes

  static constexpr int kNumGroups = 7;
  static constexpr std::array<const char*, kNumGroups> kGroupNames = {
      "fc_weight", "fc_bias", "attn_v", "attn_u",
      "attn_w",    "cls_weight", "cls_bias"};

  // Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases.
  static MilParams Init(const MilShape& shape, std::uint64_t seed);
  static MilParams Zeros(const MilShape& shape);

  MilShape shape() const;
  // Throws ShapeError / InvalidArgument on inconsistent shapes or non-finite
  // entries.
  void Validate() const;

  // Contiguous storage of each parameter group, in kGroupNames order.
  std::array<std::span<double>, kNumGroups> groups();
  std::array<std::span<const double>, kNumGroups> groups() const;
  std::size_t NumParameters() const;
};

// K x hidden activations.
Matrix CompressInstances(const Matrix& instances, const MilParams& params);

// Softmax attention over the K rows of `h`.
Vector AttentionScores(const Matrix& h, const MilParams& params);

// z = h^T a.
Vector Aggregate(const Matrix& h, const Vector& attention);

Vector ClassifierLogits(const Vector& z, const MilParams& params);

struct BagForward {
  Vector logits;
  Vector z;
  Vector attention;
};

BagForward Forward(const data::Bag& bag, const MilParams& params);

Vector Softmax(const Vector& logits);

// Cross-entropy of one bag. When `grad` is non-null it receives dLoss/dParams
// (shapes as `params`; previous contents are overwritten).
double LossAndGradient(const Matrix& instances, int label,
                       const MilParams& params, MilParams* grad);

struct TrainConfig {
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int max_epochs = 200;
  int patience = 20;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

struct MilModel {
  MilParams params;
  bool trained = false;
  TrainReport report;
};

// Adam with L2 weight decay folded into the gradient (the decay term is scaled
// by the learning rate like the rest of the step). One bag per step, bag order
// reshuffled each epoch. Returns the parameters of the epoch with the lowest
// validation loss; stops after `patience` epochs without improvement.
MilModel TrainMil(const std::vector<const data::Bag*>& train,
                  const std::vector<const data::Bag*>& val,
                  const MilShape& shape, const TrainConfig& config);

struct EmbeddingTable {
  Matrix z;  // one bag per row
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
};

EmbeddingTable ExtractEmbeddings(const MilModel& model,
                                 const std::vector<const data::Bag*>& bags);

// Class probabilities, one bag per row.
Matrix PredictProba(const MilModel& model,
                    const std::vector<const data::Bag*>& bags);

nlohmann::json ToJson(const MilModel& model);
MilModel MilModelFromJson(const nlohmann::json& j);

}  // namespace shapfuse::mil

#endif  // SHAPFUSE_MIL_HPP_
