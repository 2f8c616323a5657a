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

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace halt {

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(const std::vector<int>& labels,
                    const std::vector<int>& predictions);

// Per-class F1 with the 0/0 -> 0 convention; macro-F1 is the unweighted mean
// of the positive-class and negative-class F1.
struct F1Scores {
  double f1_positive = 0.0;
  double f1_negative = 0.0;
  double macro_f1 = 0.0;
};

F1Scores f1_macro_f1(const std::vector<int>& labels,
                     const std::vector<int>& predictions);

double accuracy(const std::vector<int>& labels,
                const std::vector<int>& predictions);

// Mann-Whitney AUROC (ties count 1/2), O(n log n). Throws ValidationError
// when only one class is present.
double auroc(const std::vector<int>& labels, const std::vector<double>& scores);

struct MetricBlock {
  double f1 = 0.0;        // positive-class F1
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::optional<double> auroc;  // absent for single-class inputs
  int support = 0;
  int positive_count = 0;
};

// One scored, thresholded example with its task-cluster tag.
struct TraceResult {
  std::string cluster;
  int label = 0;
  int prediction = 0;
  double score = 0.0;
};

struct EvalReport {
  std::map<std::string, MetricBlock> per_cluster;
  MetricBlock overall;  // metrics on the pooled set
  MetricBlock average;  // unweighted mean over clusters
};

// Per-cluster blocks plus pooled Overall and unweighted Average rows.
// Single-class clusters report AUROC as absent and are excluded from the
// average AUROC. Throws ValidationError on empty input.
EvalReport aggregate(const std::vector<TraceResult>& results);

std::string report_to_json(const EvalReport& report);

// Aligned text table: clusters as rows, one macro-F1 column per method,
// with Overall and Average rows at the bottom.
std::string render_comparison_table(
    const std::vector<std::pair<std::string, EvalReport>>& methods);

}  // namespace halt
