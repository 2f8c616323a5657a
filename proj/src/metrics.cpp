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

#include "halt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "halt/errors.hpp"

namespace halt {

using nlohmann::json;

Confusion confusion(const std::vector<int>& labels,
                    const std::vector<int>& predictions) {
  if (labels.empty() || labels.size() != predictions.size()) {
    throw ValidationError("confusion: need equal non-empty label/prediction lists");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
      throw ValidationError("confusion: labels and predictions must be binary");
    }
    if (y == 1 && p == 1) ++c.tp;
    else if (y == 0 && p == 1) ++c.fp;
    else if (y == 0 && p == 0) ++c.tn;
    else ++c.fn;
  }
  return c;
}

namespace {

double f1_from_counts(long tp, long fp, long fn) {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

F1Scores f1_macro_f1(const std::vector<int>& labels,
                     const std::vector<int>& predictions) {
  const Confusion c = confusion(labels, predictions);
  F1Scores s;
  s.f1_positive = f1_from_counts(c.tp, c.fp, c.fn);
  // Negative class: swap roles.
  s.f1_negative = f1_from_counts(c.tn, c.fn, c.fp);
  s.macro_f1 = (s.f1_positive + s.f1_negative) / 2.0;
  return s;
}

double accuracy(const std::vector<int>& labels,
                const std::vector<int>& predictions) {
  const Confusion c = confusion(labels, predictions);
  return static_cast<double>(c.tp + c.tn) /
         static_cast<double>(c.tp + c.tn + c.fp + c.fn);
}

double auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.empty() || labels.size() != scores.size()) {
    throw ValidationError("auroc: need equal non-empty label/score lists");
  }
  long n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ValidationError("auroc: non-finite score");
    n_pos += labels[i];
  }
  const long n = static_cast<long>(labels.size());
  const long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auroc undefined: only one class present");
  }

  // Rank-sum with average ranks for ties.
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    // positions i..j (0-based) share the average rank
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

MetricBlock block_from(const std::vector<int>& labels,
                       const std::vector<int>& predictions,
                       const std::vector<double>& scores) {
  MetricBlock b;
  const F1Scores f1 = f1_macro_f1(labels, predictions);
  b.f1 = f1.f1_positive;
  b.macro_f1 = f1.macro_f1;
  b.accuracy = accuracy(labels, predictions);
  b.support = static_cast<int>(labels.size());
  b.positive_count = static_cast<int>(
      std::count(labels.begin(), labels.end(), 1));
  if (b.positive_count > 0 && b.positive_count < b.support) {
    b.auroc = auroc(labels, scores);
  }
  return b;
}

}  // namespace

EvalReport aggregate(const std::vector<TraceResult>& results) {
  if (results.empty()) throw ValidationError("aggregate: empty input");

  std::map<std::string, std::vector<std::size_t>> by_cluster;
  for (std::size_t i = 0; i < results.size(); ++i) {
    by_cluster[results[i].cluster].push_back(i);
  }

  EvalReport report;
  std::vector<int> all_labels, all_preds;
  std::vector<double> all_scores;
  all_labels.reserve(results.size());

  for (const auto& [cluster, idx] : by_cluster) {
    std::vector<int> labels, preds;
    std::vector<double> scores;
    for (std::size_t i : idx) {
      labels.push_back(results[i].label);
      preds.push_back(results[i].prediction);
      scores.push_back(results[i].score);
    }
    report.per_cluster[cluster] = block_from(labels, preds, scores);
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    all_preds.insert(all_preds.end(), preds.begin(), preds.end());
    all_scores.insert(all_scores.end(), scores.begin(), scores.end());
  }

  report.overall = block_from(all_labels, all_preds, all_scores);

  MetricBlock avg;
  double auroc_sum = 0.0;
  int auroc_n = 0;
  const double n_clusters = static_cast<double>(report.per_cluster.size());
  for (const auto& [cluster, b] : report.per_cluster) {
    avg.f1 += b.f1 / n_clusters;
    avg.macro_f1 += b.macro_f1 / n_clusters;
    avg.accuracy += b.accuracy / n_clusters;
    avg.support += b.support;
    avg.positive_count += b.positive_count;
    if (b.auroc) {
      auroc_sum += *b.auroc;
      ++auroc_n;
    }
  }
  if (auroc_n > 0) avg.auroc = auroc_sum / auroc_n;
  report.average = avg;
  return report;
}

namespace {

json block_to_json(const MetricBlock& b) {
  json j;
  j["f1"] = b.f1;
  j["macro_f1"] = b.macro_f1;
  j["accuracy"] = b.accuracy;
  if (b.auroc) j["auroc"] = *b.auroc;
  else j["auroc"] = nullptr;
  j["support"] = b.support;
  j["positive_count"] = b.positive_count;
  return j;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  json pc = json::object();
  for (const auto& [cluster, b] : report.per_cluster) pc[cluster] = block_to_json(b);
  j["per_cluster"] = std::move(pc);
  j["overall"] = block_to_json(report.overall);
  j["average"] = block_to_json(report.average);
  return j.dump(2);
}

std::string render_comparison_table(
    const std::vector<std::pair<std::string, EvalReport>>& methods) {
  std::vector<std::string> clusters;
  for (const auto& [name, report] : methods) {
    for (const auto& [cluster, block] : report.per_cluster) {
      if (std::find(clusters.begin(), clusters.end(), cluster) == clusters.end()) {
        clusters.push_back(cluster);
      }
    }
  }
  std::sort(clusters.begin(), clusters.end());

  std::size_t width = 12;
  for (const auto& c : clusters) width = std::max(width, c.size() + 2);

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Cluster";
  for (const auto& [name, report] : methods) {
    out << std::right << std::setw(static_cast<int>(std::max<std::size_t>(name.size() + 2, 10)))
        << name;
  }
  out << "\n";

  auto emit_row = [&](const std::string& row_name,
                      const std::function<const MetricBlock*(const EvalReport&)>& pick) {
    out << std::left << std::setw(static_cast<int>(width)) << row_name;
    for (const auto& [name, report] : methods) {
      const int w = static_cast<int>(std::max<std::size_t>(name.size() + 2, 10));
      const MetricBlock* b = pick(report);
      if (b == nullptr) {
        out << std::right << std::setw(w) << "-";
      } else {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << 100.0 * b->macro_f1;
        out << std::right << std::setw(w) << cell.str();
      }
    }
    out << "\n";
  };

  for (const auto& cluster : clusters) {
    emit_row(cluster, [&](const EvalReport& r) -> const MetricBlock* {
      auto it = r.per_cluster.find(cluster);
      return it == r.per_cluster.end() ? nullptr : &it->second;
    });
  }
  emit_row("Overall", [](const EvalReport& r) { return &r.overall; });
  emit_row("Average", [](const EvalReport& r) { return &r.average; });
  return out.str();
}

}  // namespace halt
