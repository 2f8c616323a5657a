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
#include <string>
#include <vector>

#include "halt/trace.hpp"

namespace halt {

enum class Statistic { kPpl, kHOverall, kHAlts, kDhDec, kRankProxy };

enum class Reduction { kMean, kMax };

Statistic statistic_from_string(const std::string& name);
std::string statistic_to_string(Statistic s);

// Reduction is fixed by the statistic: max for the rank proxy, mean for
// everything else.
Reduction reduction_for(Statistic s);

// Single-statistic detector with a tuned threshold. When
// higher_means_hallucinated is set, a trace is flagged iff score >= threshold
// (ties classify as hallucinated); otherwise iff score <= threshold.
struct StatDetector {
  Statistic statistic = Statistic::kPpl;
  Reduction reduction = Reduction::kMean;
  bool higher_means_hallucinated = true;
  double threshold = 0.0;
  double val_macro_f1 = 0.0;
};

// Per-response scalar: the chosen statistic per token, reduced over time.
// PPL is exp(-mean selected-token log-prob), natural base.
double detector_score(const StatDetector& detector, const ResponseTrace& trace);

int detector_predict(const StatDetector& detector, double score);

// Exhaustive sweep over all midpoints between consecutive sorted unique
// scores plus +/-infinity, both polarities, maximizing macro-F1. Ties break
// toward the lower threshold, then toward higher-means-hallucinated. Throws
// ValidationError when only one class is present.
StatDetector tune_threshold(Statistic statistic,
                            const std::vector<ResponseTrace>& validation);

// Same sweep on precomputed scores; used by the tuner and directly testable.
struct TunedThreshold {
  double threshold = 0.0;
  bool higher_means_hallucinated = true;
  double macro_f1 = 0.0;
};

TunedThreshold tune_scores(const std::vector<double>& scores,
                           const std::vector<int>& labels);

// Constant-positive, constant-negative, uniform-random, and prevalence-
// weighted random predictors; scores equal predictions so constant
// predictors land at AUROC 0.5 under the tie convention.
struct TrivialBaseline {
  std::string name;
  std::vector<int> predictions;
  std::vector<double> scores;
};

std::vector<TrivialBaseline> trivial_baselines(std::size_t n,
                                               double train_prevalence,
                                               std::uint64_t seed);

std::string detector_to_json(const StatDetector& detector);
StatDetector detector_from_json(const std::string& text);

}  // namespace halt
