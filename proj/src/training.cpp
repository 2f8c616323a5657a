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

#include "halt/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/metrics.hpp"
#include "halt/rng.hpp"

namespace halt {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (plateau_patience < 1 || early_stop_patience < 1) {
    throw ConfigError("patience values must be >= 1");
  }
  if (plateau_factor <= 0.0 || plateau_factor >= 1.0) {
    throw ConfigError("plateau_factor must be in (0, 1)");
  }
  if (clip_max_norm <= 0.0) throw ConfigError("clip_max_norm must be positive");
  if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 ||
      adam_beta2 >= 1.0 || adam_eps <= 0.0) {
    throw ConfigError("adam hyperparameters out of range");
  }
}

AdamState AdamState::init_like(const ParamSet& params) {
  AdamState state;
  state.m = params.zeros_like();
  state.v = params.zeros_like();
  state.step = 0;
  return state;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               const TrainConfig& config, double lr_effective) {
  if (!grads.all_finite()) {
    throw NumericError("adam_step: non-finite gradient; step aborted");
  }
  state.step += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  auto& p_items = params.items();
  const auto& g_items = grads.items();
  auto& m_items = state.m.items();
  auto& v_items = state.v.items();
  for (std::size_t i = 0; i < p_items.size(); ++i) {
    Eigen::ArrayXXd g = g_items[i].value.array();
    if (config.weight_decay > 0.0 && !config.weight_decay_decoupled) {
      g += config.weight_decay * p_items[i].value.array();
    }
    m_items[i].value.array() = b1 * m_items[i].value.array() + (1.0 - b1) * g;
    v_items[i].value.array() = b2 * v_items[i].value.array() + (1.0 - b2) * g * g;
    const Eigen::ArrayXXd m_hat = m_items[i].value.array() / bias1;
    const Eigen::ArrayXXd v_hat = v_items[i].value.array() / bias2;
    p_items[i].value.array() -=
        lr_effective * m_hat / (v_hat.sqrt() + config.adam_eps);
    if (config.weight_decay > 0.0 && config.weight_decay_decoupled) {
      p_items[i].value.array() -=
          lr_effective * config.weight_decay * p_items[i].value.array();
    }
  }
}

double clip_global_norm(ParamSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_l2_norm());
  if (norm > max_norm && norm > 0.0) {
    grads.scale(max_norm / norm);
  }
  return norm;
}

double PlateauScheduler::observe(double metric) {
  if (metric > best_) {
    best_ = metric;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ > patience_) {
      multiplier_ *= factor_;
      bad_epochs_ = 0;
    }
  }
  return multiplier_;
}

TrainController::Decision TrainController::observe(double metric) {
  ++epoch_;
  Decision d;
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epoch_;
    epochs_since_best_ = 0;
    d.improved = true;
  } else {
    ++epochs_since_best_;
  }
  d.lr_multiplier = scheduler_.observe(metric);
  d.stop = epochs_since_best_ >= early_stop_patience_;
  return d;
}

double validation_macro_f1(const HaltModel& model,
                           const std::vector<FeatureSequence>& val_set,
                           double threshold) {
  const auto predictions = model.predict(val_set, threshold);
  std::vector<int> labels, preds;
  labels.reserve(val_set.size());
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    labels.push_back(val_set[i].label);
    preds.push_back(predictions[i].label);
  }
  return f1_macro_f1(labels, preds).macro_f1;
}

TrainResult train(const HaltModel& model,
                  const std::vector<FeatureSequence>& train_set,
                  const std::vector<FeatureSequence>& val_set,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ConfigError("train and validation sets must be non-empty");
  }

  HaltModel current = model;
  TrainResult result;
  result.best_model = current;
  TrainController controller(config);
  AdamState adam = AdamState::init_like(current.params());
  Rng shuffle_rng(derive_seed(config.seed, "data-shuffle"));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  double lr_multiplier = 1.0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t example_count = 0;
    try {
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(
            order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::vector<const FeatureSequence*> members;
        members.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
          members.push_back(&train_set[order[i]]);
        }
        Batch batch = Batch::from_sequence_ptrs(members);

        LossGrad lg = current.loss_and_grad(batch);
        clip_global_norm(lg.param_grads, config.clip_max_norm);
        adam_step(current.params(), lg.param_grads, adam, config,
                  config.lr * lr_multiplier);

        loss_sum += lg.loss * static_cast<double>(end - start);
        example_count += end - start;
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      result.epochs_run = epoch - 1;
      return result;
    }

    const double train_loss = loss_sum / static_cast<double>(example_count);
    const double val_metric = validation_macro_f1(current, val_set, 0.5);
    const TrainController::Decision decision = controller.observe(val_metric);
    lr_multiplier = decision.lr_multiplier;

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_loss;
    entry.val_macro_f1 = val_metric;
    entry.lr = config.lr * lr_multiplier;
    entry.improved = decision.improved;
    result.log.push_back(entry);

    if (decision.improved) {
      result.best_model = current;
      result.best_val_macro_f1 = controller.best_metric();
      result.best_epoch = controller.best_epoch();
    }
    result.epochs_run = epoch;
    if (decision.stop) break;
  }
  return result;
}

std::string train_log_to_jsonl(const TrainResult& result) {
  std::ostringstream out;
  for (const auto& entry : result.log) {
    nlohmann::json j;
    j["epoch"] = entry.epoch;
    j["train_loss"] = entry.train_loss;
    j["val_macro_f1"] = entry.val_macro_f1;
    j["lr"] = entry.lr;
    j["improved"] = entry.improved;
    out << j.dump() << '\n';
  }
  if (result.aborted) {
    nlohmann::json j;
    j["aborted"] = true;
    j["reason"] = result.abort_reason;
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace halt
