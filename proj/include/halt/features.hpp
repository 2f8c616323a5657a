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
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "halt/trace.hpp"

namespace halt {

inline constexpr int kNumStats = 5;
inline constexpr int kFeatureDim = kNumStats + kTopK;  // 25
inline constexpr int kFeatureLayoutVersion = 1;

// Fixed column layout: the five engineered statistics, then the raw top-20
// log-probs. The layout version in feature caches and weight files guards
// against silent reordering.
enum FeatureColumn : int {
  kColEntropyOverall = 0,
  kColEntropyAlts = 1,
  kColAvgLogProb = 2,
  kColRankProxy = 3,
  kColDecEntropyDelta = 4,
  kColRawLogProb0 = 5,
};

// Column names in layout order: entropy_overall, entropy_alts, avg_logprob,
// rank_proxy, dec_entropy_delta, logprob_1..logprob_20.
const std::array<std::string, kFeatureDim>& feature_names();

// The step's top-20 support renormalized into a probability distribution
// (max-subtracted softmax; shift invariant, overflow-free).
struct TruncatedDistribution {
  std::array<double, kTopK> probs{};
};

TruncatedDistribution trunc_softmax(const LogProbStep& step);

// Mean of the 20 log-probs.
double avg_logp(const LogProbStep& step);

// 1 + number of alternatives strictly above the selected token; 1 = greedy.
int rank_proxy(const LogProbStep& step);

// Shannon entropy of the truncated distribution, in [0, ln 20].
double entropy_overall(const TruncatedDistribution& dist);

// Entropy of the alternatives renormalized among themselves, in [0, ln 19].
// Numerically zero alternative mass (< 1e-300) yields 0.
double entropy_alts(const TruncatedDistribution& dist);

// Binary entropy of the selected-vs-best-alternative decision, in [0, ln 2].
double decision_entropy(const LogProbStep& step);

struct FeatureSequence {
  std::string trace_id;
  int label = 0;
  Eigen::MatrixXd rows;  // T x 25 in the fixed column layout

  int length() const { return static_cast<int>(rows.rows()); }
};

// T x 25 enriched feature matrix. Column 4 holds the step-to-step change in
// decision entropy with the t=1 value defined as 0; decision entropy itself
// is computed internally and not emitted.
FeatureSequence featurize(const ResponseTrace& trace);

// Parallel across traces; order preserved.
std::vector<FeatureSequence> featurize_all(
    const std::vector<ResponseTrace>& traces);

// Cumulative probability mass of the k_prefix largest entries, with the
// selected token included in the descending sort. Requires true
// log-probabilities (entries <= 0); throws ValidationError otherwise.
double topk_mass(const LogProbStep& step, int k_prefix);

// Feature cache files: a JSON header line with the layout version, column
// names and active column mask, then one record per line.
void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureSequence>& sequences,
                         const std::array<bool, kFeatureDim>& mask);

struct FeatureCache {
  int layout_version = 0;
  std::array<bool, kFeatureDim> mask{};
  std::vector<FeatureSequence> sequences;
};

FeatureCache read_feature_cache(const std::filesystem::path& path);

}  // namespace halt
