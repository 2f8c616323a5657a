// Copyright 2026 The HALT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "halt/features.hpp"
#include "halt/params.hpp"

namespace halt {

struct HaltConfig {
  int input_dim = kFeatureDim;  // 25
  int proj_dim = 128;
  int hidden_dim = 256;
  int num_layers = 5;
  bool bidirectional = true;
  double dropout_rate = 0.4;
  double top_q = 0.15;
  bool out_norm = false;
  std::array<bool, kFeatureDim> column_mask = all_columns();

  static std::array<bool, kFeatureDim> all_columns() {
    std::array<bool, kFeatureDim> m;
    m.fill(true);
    return m;
  }

  // Width of the recurrent stack output feeding the head.
  int encoder_out_dim() const { return hidden_dim * (bidirectional ? 2 : 1); }

  // Throws ConfigError on out-of-range fields.
  void validate() const;
};

// Zero-padded batch of feature sequences. Positions at or beyond an
// example's length are padding; they contribute nothing to any output.
struct Batch {
  std::vector<Eigen::MatrixXd> features;  // B matrices, max_len x input_dim
  std::vector<int> lengths;
  std::vector<int> labels;
  int max_len = 0;

  int size() const { return static_cast<int>(features.size()); }
  bool padded_at(int b, int t) const { return t >= lengths[b]; }

  static Batch from_sequence_ptrs(const std::vector<const FeatureSequence*>& seqs);
  static Batch from_sequences(const std::vector<FeatureSequence>& seqs);

  void validate() const;
};

struct BatchCache;  // opaque backward state

struct ForwardResult {
  Eigen::VectorXd logits;
  std::shared_ptr<BatchCache> cache;
};

struct LossGrad {
  double loss = 0.0;
  ParamSet param_grads;
  std::vector<Eigen::MatrixXd> input_grads;  // B matrices, max_len x input_dim
  Eigen::VectorXd logits;
};

struct Attribution {
  Eigen::VectorXd per_feature;  // 25, non-negative, sums to 1 (or all zero)
  Eigen::VectorXd per_time;     // max_len, |grad * input| summed over B and F
};

struct Prediction {
  std::string trace_id;
  double score = 0.0;
  int label = 0;
};

// Input LayerNorm + two-layer GELU projection, multi-layer bidirectional GRU
// with inter-layer dropout, top-q norm pooling, linear head. Forward and
// exact reverse-mode gradients for all parameters and inputs.
class HaltModel {
 public:
  // Empty shell; call init or load to obtain a usable model.
  HaltModel() = default;

  static HaltModel init(const HaltConfig& config, std::uint64_t seed);

  const HaltConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  std::size_t param_count() const { return params_.total_coefficients(); }

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  // Deterministic when training is false. In training mode, inter-layer
  // dropout masks are drawn from the model's dropout stream, which advances
  // once per call.
  ForwardResult forward(const Batch& batch, bool training);

  // Inference-mode forward; never touches the dropout stream.
  ForwardResult forward_inference(const Batch& batch) const;

  // Mean BCE-with-logits loss plus exact gradients for every parameter and
  // input. Runs the stochastic forward and reuses its dropout masks.
  LossGrad loss_and_grad(const Batch& batch);

  // Sigmoid scores with label = score >= threshold. Deterministic.
  std::vector<Prediction> predict(const std::vector<FeatureSequence>& traces,
                                  double threshold) const;

  // Top-layer encoder outputs (T x encoder_out_dim) in inference mode; the
  // representation top-q pooling summarizes.
  Eigen::MatrixXd encode(const FeatureSequence& trace) const;

  // |input_grad * input| masked and reduced; per-feature normalized to sum 1.
  // Dropout is disabled.
  Attribution attribute(const Batch& batch) const;

  void save(const std::filesystem::path& path) const;
  static HaltModel load(const std::filesystem::path& path);

  std::uint64_t dropout_step() const { return dropout_step_; }

 private:
  LossGrad loss_and_grad_impl(const Batch& batch, bool training,
                              std::uint64_t dropout_step) const;

  HaltConfig config_;
  ParamSet params_;
  std::uint64_t dropout_seed_ = 0;
  std::uint64_t dropout_step_ = 0;
  std::map<std::string, std::string> meta_;
};

// Number of pooled timesteps: max(1, ceil(top_q * length)), with a tiny
// epsilon so exact integer products do not round up.
int pooling_count(double top_q, int length);

std::string attribution_to_json(const Attribution& attribution);

}  // namespace halt
