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
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "halt/model.hpp"
#include "halt/trace.hpp"
#include "halt/training.hpp"

namespace halt {

// Full-vocabulary support of the emulator; the top 20 are emitted, the rest
// exists so cumulative-mass checks have an exact reference.
inline constexpr int kEmulatorSupport = 200;

// A task family: same bias function, different surface statistics.
struct TaskFamily {
  std::string name;
  int t_min = 8;
  int t_max = 128;
  // Baseline sharpness of the per-step distribution (log of the mean logit
  // decrement between consecutive ranks).
  double base_log_gap = 0.0;
  // Persistent sharpness reduction applied to hallucinated traces; nonzero
  // only in families whose classes are separable by level statistics.
  double level_gain = 0.0;
};

// The deterministic calibration-bias function: how hallucination expresses
// itself in the log-prob dynamics. Every trace of one class carries exactly
// one excursion; the class assignment of the abrupt (rectangular window with
// margin collapse, end-of-window snap and clustered rank events) versus
// gradual (triangular ramp with scattered rank events) shape is part of the
// bias.
struct BiasParams {
  bool abrupt_hallucination = true;  // false: the gradual shape marks class 1
  double regime_gap_drop = 1.1;      // log-gap depth of the excursion
  double onset_hazard = 0.05;        // per-step onset probability
  int window_min = 8;
  int window_max = 16;
  double margin_collapse_lo = 0.02;  // selected-vs-runner-up decrement inside
  double margin_collapse_hi = 0.15;  // the abrupt window
  double margin_snap_lo = 3.0;       // decrement during the closing snap
  double margin_snap_hi = 5.0;
  double rank_event_prob = 0.35;     // per in-window step
  int rank_max = 5;                  // worst planted rank proxy
  double drift_mag = 0.05;           // AR(1) drift of the log gap
};

double bias_distance(const BiasParams& a, const BiasParams& b);

struct EmulatorSpec {
  std::string id;
  std::uint64_t seed = 0;
  BiasParams bias;
  std::vector<TaskFamily> families;
  // Documented minimum pairwise differences between family marginals,
  // assertable from generated data.
  double marginal_min_length_diff = 4.0;
  double marginal_min_entropy_diff = 0.08;
};

EmulatorSpec emulator_spec_from_json(const std::string& text);
std::string emulator_spec_to_json(const EmulatorSpec& spec);
EmulatorSpec load_emulator_spec(const std::filesystem::path& path);

const TaskFamily& find_family(const EmulatorSpec& spec,
                              const std::string& name);

// Balanced labeled traces, deterministic per (spec, family, seed);
// trace i depends only on its own derived seed, so chunked generation is
// order-independent.
std::vector<ResponseTrace> generate(const EmulatorSpec& spec,
                                    const std::string& family, int n,
                                    std::uint64_t seed);

// Like generate, but also returns the untruncated per-step distribution
// (T x 200 probabilities per trace) for oracle checks.
struct GeneratedTrace {
  ResponseTrace trace;
  Eigen::MatrixXd full_probs;  // T x kEmulatorSupport, rows sum to 1
};

std::vector<GeneratedTrace> generate_full(const EmulatorSpec& spec,
                                          const std::string& family, int n,
                                          std::uint64_t seed);

struct HypothesisConfig {
  HaltConfig model_config = desk_scale_model();
  TrainConfig train_config = desk_scale_train();
  int train_per_family = 600;
  int val_per_family = 150;
  int test_count = 400;

  static HaltConfig desk_scale_model();
  static TrainConfig desk_scale_train();
};

struct HypothesisReport {
  // Macro-F1 of each detector on each emulator's held-out family, with
  // thresholds tuned on the in-domain validation split.
  double a_on_a = 0.0;
  double a_on_b = 0.0;
  double b_on_b = 0.0;
  double b_on_a = 0.0;
  double gap_a = 0.0;  // a_on_a - a_on_b
  double gap_b = 0.0;  // b_on_b - b_on_a
  double threshold_a = 0.5;
  double threshold_b = 0.5;
};

// Trains one detector per emulator on families 0 and 1, evaluates in-domain
// on family 2 and cross-emulator on the other spec's family-2 set. Refuses
// specs whose bias parameters are not meaningfully distinct.
HypothesisReport hypothesis_suite(const EmulatorSpec& a, const EmulatorSpec& b,
                                  const HypothesisConfig& config);

std::string hypothesis_report_to_json(const HypothesisReport& report);

// Threshold maximizing macro-F1 with the fixed higher-means-hallucinated
// polarity used for model scores.
double tune_score_threshold(const std::vector<double>& scores,
                            const std::vector<int>& labels);

}  // namespace halt
