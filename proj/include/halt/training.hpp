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

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "halt/model.hpp"
#include "halt/params.hpp"

namespace halt {

struct TrainConfig {
  double lr = 4.41e-4;
  double weight_decay = 2.34e-6;
  // Coupled (L2-in-gradient) decay by default; decoupled update exposed for
  // sensitivity runs.
  bool weight_decay_decoupled = false;
  int batch_size = 512;
  int max_epochs = 100;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  int early_stop_patience = 15;
  double clip_max_norm = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  long step = 0;

  static AdamState init_like(const ParamSet& params);
};

// Classic Adam with bias correction; weight decay added to the gradient
// (or applied decoupled when the config says so). Throws NumericError on
// non-finite gradients without touching the parameters.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               const TrainConfig& config, double lr_effective);

// Scales all gradients by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamSet& grads, double max_norm);

// ReduceLROnPlateau in maximize mode: the multiplier halves (by factor) once
// the monitored metric has gone more than `patience` consecutive epochs
// without improving on its best; the counter resets on improvement and after
// each reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience)
      : factor_(factor), patience_(patience) {}

  // Feed one metric value per epoch; returns the multiplier to apply.
  double observe(double metric);

  double multiplier() const { return multiplier_; }

 private:
  double factor_;
  int patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  double multiplier_ = 1.0;
};

// Improvement tracking and early stopping, kept separate from the epoch loop
// so the stopping rules are directly testable.
class TrainController {
 public:
  TrainController(const TrainConfig& config)
      : scheduler_(config.plateau_factor, config.plateau_patience),
        early_stop_patience_(config.early_stop_patience) {}

  struct Decision {
    bool improved = false;
    bool stop = false;
    double lr_multiplier = 1.0;
  };

  Decision observe(double metric);

  double best_metric() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  PlateauScheduler scheduler_;
  int early_stop_patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epoch_ = 0;
  int epochs_since_best_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double lr = 0.0;
  bool improved = false;
};

struct TrainResult {
  HaltModel best_model;
  std::vector<EpochLog> log;
  double best_val_macro_f1 = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  // Set when a numeric fault aborted training; the best checkpoint up to
  // that point is still returned.
  bool aborted = false;
  std::string abort_reason;
};

// Full optimization loop: seeded shuffling, fixed-size batches with the last
// partial batch kept, loss/grad -> clip -> adam, per-epoch validation
// macro-F1 at threshold 0.5, checkpoint on improvement, plateau LR schedule
// and early stopping. Deterministic given (data, config, seed).
TrainResult train(const HaltModel& model,
                  const std::vector<FeatureSequence>& train_set,
                  const std::vector<FeatureSequence>& val_set,
                  const TrainConfig& config);

// Pooled macro-F1 of model predictions at the given threshold.
double validation_macro_f1(const HaltModel& model,
                           const std::vector<FeatureSequence>& val_set,
                           double threshold);

std::string train_log_to_jsonl(const TrainResult& result);

}  // namespace halt
