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

#include "halt/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/features.hpp"
#include "halt/metrics.hpp"
#include "halt/rng.hpp"

namespace halt {

using nlohmann::json;

Statistic statistic_from_string(const std::string& name) {
  if (name == "ppl") return Statistic::kPpl;
  if (name == "h_overall") return Statistic::kHOverall;
  if (name == "h_alts") return Statistic::kHAlts;
  if (name == "dh_dec") return Statistic::kDhDec;
  if (name == "rank_proxy") return Statistic::kRankProxy;
  throw ConfigError("unknown statistic '" + name + "'");
}

std::string statistic_to_string(Statistic s) {
  switch (s) {
    case Statistic::kPpl: return "ppl";
    case Statistic::kHOverall: return "h_overall";
    case Statistic::kHAlts: return "h_alts";
    case Statistic::kDhDec: return "dh_dec";
    case Statistic::kRankProxy: return "rank_proxy";
  }
  return "?";
}

Reduction reduction_for(Statistic s) {
  return s == Statistic::kRankProxy ? Reduction::kMax : Reduction::kMean;
}

double detector_score(const StatDetector& detector, const ResponseTrace& trace) {
  const int T = trace.length();
  double mean_acc = 0.0;
  double max_acc = -std::numeric_limits<double>::infinity();
  double prev_dec = 0.0;

  for (int t = 0; t < T; ++t) {
    const LogProbStep& step = trace.steps[static_cast<std::size_t>(t)];
    double value = 0.0;
    switch (detector.statistic) {
      case Statistic::kPpl:
        value = step.selected();  // averaged below, then exponentiated
        break;
      case Statistic::kHOverall:
        value = entropy_overall(trunc_softmax(step));
        break;
      case Statistic::kHAlts:
        value = entropy_alts(trunc_softmax(step));
        break;
      case Statistic::kDhDec: {
        const double dec = decision_entropy(step);
        value = t == 0 ? 0.0 : dec - prev_dec;
        prev_dec = dec;
        break;
      }
      case Statistic::kRankProxy:
        value = static_cast<double>(rank_proxy(step));
        break;
    }
    mean_acc += value;
    max_acc = std::max(max_acc, value);
  }
  mean_acc /= T;

  if (detector.statistic == Statistic::kPpl) return std::exp(-mean_acc);
  return detector.reduction == Reduction::kMax ? max_acc : mean_acc;
}

int detector_predict(const StatDetector& detector, double score) {
  return detector.higher_means_hallucinated ? (score >= detector.threshold ? 1 : 0)
                                            : (score <= detector.threshold ? 1 : 0);
}

TunedThreshold tune_scores(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ValidationError("tune_scores: need equal non-empty score/label lists");
  }
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (!has_pos || !has_neg) {
    throw ValidationError(
        "threshold tuning needs both classes in the validation set");
  }

  std::vector<double> unique_scores = scores;
  std::sort(unique_scores.begin(), unique_scores.end());
  unique_scores.erase(std::unique(unique_scores.begin(), unique_scores.end()),
                      unique_scores.end());

  std::vector<double> candidates;
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < unique_scores.size(); ++i) {
    candidates.push_back((unique_scores[i] + unique_scores[i + 1]) / 2.0);
  }
  candidates.push_back(std::numeric_limits<double>::infinity());

  TunedThreshold best;
  double best_f1 = -1.0;
  std::vector<int> preds(scores.size());
  // Candidates ascend and "higher" polarity comes first, so first-found
  // maxima implement the documented tie-breaking.
  for (double threshold : candidates) {
    for (bool higher : {true, false}) {
      for (std::size_t i = 0; i < scores.size(); ++i) {
        preds[i] = higher ? (scores[i] >= threshold ? 1 : 0)
                          : (scores[i] <= threshold ? 1 : 0);
      }
      const double f1 = f1_macro_f1(labels, preds).macro_f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        best.threshold = threshold;
        best.higher_means_hallucinated = higher;
        best.macro_f1 = f1;
      }
    }
  }
  return best;
}

StatDetector tune_threshold(Statistic statistic,
                            const std::vector<ResponseTrace>& validation) {
  StatDetector detector;
  detector.statistic = statistic;
  detector.reduction = reduction_for(statistic);

  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(validation.size());
  for (const auto& trace : validation) {
    scores.push_back(detector_score(detector, trace));
    labels.push_back(trace.label);
  }
  const TunedThreshold tuned = tune_scores(scores, labels);
  detector.threshold = tuned.threshold;
  detector.higher_means_hallucinated = tuned.higher_means_hallucinated;
  detector.val_macro_f1 = tuned.macro_f1;
  return detector;
}

std::vector<TrivialBaseline> trivial_baselines(std::size_t n,
                                               double train_prevalence,
                                               std::uint64_t seed) {
  if (train_prevalence < 0.0 || train_prevalence > 1.0) {
    throw ConfigError("train prevalence must be in [0, 1]");
  }
  std::vector<TrivialBaseline> out(4);
  out[0].name = "constant_positive";
  out[1].name = "constant_negative";
  out[2].name = "random";
  out[3].name = "weighted_random";

  Rng uniform_rng(derive_seed(seed, "baseline-random"));
  Rng weighted_rng(derive_seed(seed, "baseline-weighted"));
  for (std::size_t i = 0; i < n; ++i) {
    out[0].predictions.push_back(1);
    out[1].predictions.push_back(0);
    out[2].predictions.push_back(uniform_rng.bernoulli(0.5) ? 1 : 0);
    out[3].predictions.push_back(weighted_rng.bernoulli(train_prevalence) ? 1 : 0);
  }
  for (auto& baseline : out) {
    baseline.scores.reserve(n);
    for (int p : baseline.predictions) {
      baseline.scores.push_back(static_cast<double>(p));
    }
  }
  // Constant predictors: all scores tie, so AUROC lands at 1/2.
  out[0].scores.assign(n, 1.0);
  out[1].scores.assign(n, 0.0);
  return out;
}

std::string detector_to_json(const StatDetector& detector) {
  json j;
  j["statistic"] = statistic_to_string(detector.statistic);
  j["reduction"] = detector.reduction == Reduction::kMax ? "max" : "mean";
  j["direction"] = detector.higher_means_hallucinated ? "higher" : "lower";
  j["threshold"] = detector.threshold;
  j["val_macro_f1"] = detector.val_macro_f1;
  return j.dump(2);
}

StatDetector detector_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("detector JSON is malformed");
  StatDetector d;
  d.statistic = statistic_from_string(j.at("statistic").get<std::string>());
  const std::string reduction = j.at("reduction").get<std::string>();
  if (reduction != "mean" && reduction != "max") {
    throw ValidationError("detector reduction must be 'mean' or 'max'");
  }
  d.reduction = reduction == "max" ? Reduction::kMax : Reduction::kMean;
  if (d.reduction != reduction_for(d.statistic)) {
    throw ValidationError("detector reduction inconsistent with statistic '" +
                          statistic_to_string(d.statistic) + "'");
  }
  d.higher_means_hallucinated = j.at("direction").get<std::string>() == "higher";
  d.threshold = j.at("threshold").get<double>();
  d.val_macro_f1 = j.value("val_macro_f1", 0.0);
  return d;
}

}  // namespace halt
