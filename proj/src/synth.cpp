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

#include "halt/synth.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/features.hpp"
#include "halt/io_util.hpp"
#include "halt/metrics.hpp"
#include "halt/parallel.hpp"
#include "halt/rng.hpp"

namespace halt {

using nlohmann::json;

double bias_distance(const BiasParams& a, const BiasParams& b) {
  double d = a.abrupt_hallucination == b.abrupt_hallucination ? 0.0 : 1.0;
  d += std::abs(a.regime_gap_drop - b.regime_gap_drop);
  d += std::abs(a.onset_hazard - b.onset_hazard);
  d += std::abs(a.margin_collapse_lo - b.margin_collapse_lo);
  d += std::abs(a.margin_collapse_hi - b.margin_collapse_hi);
  d += std::abs(a.margin_snap_lo - b.margin_snap_lo);
  d += std::abs(a.margin_snap_hi - b.margin_snap_hi);
  d += std::abs(a.rank_event_prob - b.rank_event_prob);
  d += std::abs(a.drift_mag - b.drift_mag);
  d += std::abs(static_cast<double>(a.window_min - b.window_min)) / 10.0;
  d += std::abs(static_cast<double>(a.window_max - b.window_max)) / 10.0;
  return d;
}

EmulatorSpec emulator_spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError("emulator spec is not valid JSON");

  EmulatorSpec spec;
  spec.id = j.at("id").get<std::string>();
  spec.seed = j.value("seed", 0ULL);

  const json& b = j.at("bias_params");
  spec.bias.abrupt_hallucination = b.value("abrupt_hallucination", true);
  spec.bias.regime_gap_drop = b.value("regime_gap_drop", 1.1);
  spec.bias.onset_hazard = b.value("onset_hazard", 0.05);
  spec.bias.window_min = b.value("window_min", 8);
  spec.bias.window_max = b.value("window_max", 16);
  spec.bias.margin_collapse_lo = b.value("margin_collapse_lo", 0.02);
  spec.bias.margin_collapse_hi = b.value("margin_collapse_hi", 0.15);
  spec.bias.margin_snap_lo = b.value("margin_snap_lo", 3.0);
  spec.bias.margin_snap_hi = b.value("margin_snap_hi", 5.0);
  spec.bias.rank_event_prob = b.value("rank_event_prob", 0.35);
  spec.bias.rank_max = b.value("rank_max", 5);
  spec.bias.drift_mag = b.value("drift_mag", 0.05);

  for (const auto& f : j.at("families")) {
    TaskFamily family;
    family.name = f.at("name").get<std::string>();
    family.t_min = f.value("t_min", 8);
    family.t_max = f.value("t_max", 128);
    family.base_log_gap = f.value("base_log_gap", 0.0);
    family.level_gain = f.value("level_gain", 0.0);
    if (family.t_min < 1 || family.t_max < family.t_min) {
      throw ValidationError("family '" + family.name + "' has a bad length law");
    }
    spec.families.push_back(std::move(family));
  }
  if (spec.families.empty()) {
    throw ValidationError("emulator spec has no task families");
  }
  if (j.contains("marginals")) {
    spec.marginal_min_length_diff = j["marginals"].value("min_length_diff", 4.0);
    spec.marginal_min_entropy_diff =
        j["marginals"].value("min_entropy_diff", 0.08);
  }
  return spec;
}

std::string emulator_spec_to_json(const EmulatorSpec& spec) {
  json j;
  j["id"] = spec.id;
  j["seed"] = spec.seed;
  json b;
  b["abrupt_hallucination"] = spec.bias.abrupt_hallucination;
  b["regime_gap_drop"] = spec.bias.regime_gap_drop;
  b["onset_hazard"] = spec.bias.onset_hazard;
  b["window_min"] = spec.bias.window_min;
  b["window_max"] = spec.bias.window_max;
  b["margin_collapse_lo"] = spec.bias.margin_collapse_lo;
  b["margin_collapse_hi"] = spec.bias.margin_collapse_hi;
  b["margin_snap_lo"] = spec.bias.margin_snap_lo;
  b["margin_snap_hi"] = spec.bias.margin_snap_hi;
  b["rank_event_prob"] = spec.bias.rank_event_prob;
  b["rank_max"] = spec.bias.rank_max;
  b["drift_mag"] = spec.bias.drift_mag;
  j["bias_params"] = std::move(b);
  json families = json::array();
  for (const auto& f : spec.families) {
    json jf;
    jf["name"] = f.name;
    jf["t_min"] = f.t_min;
    jf["t_max"] = f.t_max;
    jf["base_log_gap"] = f.base_log_gap;
    jf["level_gain"] = f.level_gain;
    families.push_back(std::move(jf));
  }
  j["families"] = std::move(families);
  j["marginals"] = {{"min_length_diff", spec.marginal_min_length_diff},
                    {"min_entropy_diff", spec.marginal_min_entropy_diff}};
  return j.dump(2);
}

EmulatorSpec load_emulator_spec(const std::filesystem::path& path) {
  return emulator_spec_from_json(read_file(path));
}

const TaskFamily& find_family(const EmulatorSpec& spec,
                              const std::string& name) {
  for (const auto& f : spec.families) {
    if (f.name == name) return f;
  }
  throw ConfigError("emulator '" + spec.id + "' has no family '" + name + "'");
}

namespace {

// Shape of one excursion over the trace: the abrupt rectangle carries the
// margin collapse and snap; the gradual triangle spreads the same area over
// twice the span with no sharp transition.
struct Excursion {
  bool abrupt = true;
  int start = 0;
  int len = 0;  // rectangle length; the triangle spans 2*len
  int span() const { return abrupt ? len : 2 * len; }
  // Depth fraction in [0, 1] at step t.
  double depth(int t) const {
    if (t < start || t >= start + span()) return 0.0;
    if (abrupt) return 1.0;
    const double half = static_cast<double>(len);
    const double offset = static_cast<double>(t - start);
    const double frac =
        offset < half ? (offset + 1.0) / half : (2.0 * half - offset - 1.0) / half;
    return std::clamp(frac, 0.0, 1.0);
  }
};

struct StepPlan {
  double log_gap = 0.0;
  double margin_delta = 1.0;  // decrement between ranks 0 and 1, pre-gap
  int selected_rank = 0;      // 0 = greedy
};

void emit_step(const StepPlan& plan, Rng& rng, LogProbStep& step,
               Eigen::VectorXd* full_probs) {
  const double gap = std::exp(std::clamp(plan.log_gap, -2.5, 3.0));

  // Strictly decreasing logits over the full support.
  std::array<double, kEmulatorSupport> logits;
  logits[0] = 0.0;
  logits[1] = logits[0] - gap * plan.margin_delta;
  for (int i = 2; i < kEmulatorSupport; ++i) {
    logits[i] = logits[i - 1] - gap * rng.uniform(0.5, 1.5);
  }

  double m = logits[0];
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double lse = m + std::log(sum);

  std::array<double, kEmulatorSupport> logp;
  for (int i = 0; i < kEmulatorSupport; ++i) logp[i] = logits[i] - lse;

  const int r = plan.selected_rank;
  step.values[0] = logp[r];
  int out = 1;
  for (int i = 0; i < kTopK && out < kTopK; ++i) {
    if (i == r) continue;
    step.values[out++] = logp[i];
  }
  if (full_probs != nullptr) {
    full_probs->resize(kEmulatorSupport);
    for (int i = 0; i < kEmulatorSupport; ++i) (*full_probs)(i) = std::exp(logp[i]);
  }
}

ResponseTrace generate_one(const EmulatorSpec& spec, const TaskFamily& family,
                           int index, std::uint64_t seed,
                           Eigen::MatrixXd* full_probs) {
  Rng rng(derive_seed(seed, family.name, static_cast<std::uint64_t>(index)));
  const BiasParams& bias = spec.bias;

  const int label = index % 2 == 0 ? 1 : 0;
  const int T =
      static_cast<int>(rng.uniform_int(family.t_min, family.t_max));

  Excursion exc;
  exc.abrupt = (label == 1) == bias.abrupt_hallucination;
  int len = static_cast<int>(rng.uniform_int(bias.window_min, bias.window_max));
  // Clip so both shapes fit; the triangle needs twice the room.
  len = std::min(len, std::max(1, (T - 2) / 2));
  exc.len = len;
  const int latest_start = std::max(0, T - exc.span());
  exc.start = latest_start;
  for (int t = 0; t < latest_start; ++t) {
    if (rng.bernoulli(bias.onset_hazard)) {
      exc.start = t;
      break;
    }
  }

  // Rank events: expected count rank_event_prob * len for both shapes, and
  // both land in raised-entropy steps (uniform over the rectangle,
  // depth-weighted over the triangle) so aggregate statistics stay matched.
  std::vector<int> rank_at(static_cast<std::size_t>(T), 0);
  for (int t = 0; t < T; ++t) {
    const double p = bias.rank_event_prob * exc.depth(t);
    if (p > 0.0 && rng.bernoulli(p)) {
      rank_at[static_cast<std::size_t>(t)] =
          static_cast<int>(rng.uniform_int(1, std::max(1, bias.rank_max - 1)));
    }
  }

  ResponseTrace trace;
  trace.id = spec.id + ":" + family.name + ":" + std::to_string(index);
  trace.cluster = family.name;
  trace.label = label;
  trace.meta["family"] = family.name;
  trace.meta["shape"] = exc.abrupt ? "abrupt" : "gradual";
  trace.meta["excursion_start"] = std::to_string(exc.start);
  trace.meta["excursion_len"] = std::to_string(exc.len);

  if (full_probs != nullptr) full_probs->resize(T, kEmulatorSupport);

  double drift = bias.drift_mag * rng.normal();
  for (int t = 0; t < T; ++t) {
    drift = 0.9 * drift + bias.drift_mag * rng.normal();
    const double depth = exc.depth(t);

    StepPlan plan;
    plan.log_gap = family.base_log_gap + drift - bias.regime_gap_drop * depth -
                   (label == 1 ? family.level_gain : 0.0);

    // Margins: both shapes spend ~len steps fully collapsed so per-trace
    // aggregates match; only the abrupt shape gets the closing snap.
    const bool in_abrupt_window =
        exc.abrupt && t >= exc.start && t < exc.start + exc.len;
    const bool in_snap = in_abrupt_window && t >= exc.start + exc.len - 2;
    if (in_snap) {
      plan.margin_delta = rng.uniform(bias.margin_snap_lo, bias.margin_snap_hi);
    } else if (in_abrupt_window || depth >= 0.5) {
      plan.margin_delta =
          rng.uniform(bias.margin_collapse_lo, bias.margin_collapse_hi);
    } else {
      const double normal_delta = rng.uniform(0.5, 1.5);
      const double collapsed_delta =
          rng.uniform(bias.margin_collapse_lo, bias.margin_collapse_hi);
      plan.margin_delta = (1.0 - depth) * normal_delta + depth * collapsed_delta;
    }
    plan.selected_rank = rank_at[static_cast<std::size_t>(t)];

    LogProbStep step;
    Eigen::VectorXd row;
    emit_step(plan, rng, step, full_probs != nullptr ? &row : nullptr);
    if (full_probs != nullptr) full_probs->row(t) = row.transpose();
    trace.steps.push_back(step);
  }
  return trace;
}

}  // namespace

std::vector<ResponseTrace> generate(const EmulatorSpec& spec,
                                    const std::string& family_name, int n,
                                    std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  const TaskFamily& family = find_family(spec, family_name);
  std::vector<ResponseTrace> traces(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    traces[i] =
        generate_one(spec, family, static_cast<int>(i), seed, nullptr);
  });
  return traces;
}

std::vector<GeneratedTrace> generate_full(const EmulatorSpec& spec,
                                          const std::string& family_name,
                                          int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate_full: n must be >= 1");
  const TaskFamily& family = find_family(spec, family_name);
  std::vector<GeneratedTrace> out(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    out[i].trace = generate_one(spec, family, static_cast<int>(i), seed,
                                &out[i].full_probs);
  });
  return out;
}

HaltConfig HypothesisConfig::desk_scale_model() {
  HaltConfig config;
  config.proj_dim = 32;
  config.hidden_dim = 40;
  config.num_layers = 2;
  config.dropout_rate = 0.15;
  return config;
}

TrainConfig HypothesisConfig::desk_scale_train() {
  TrainConfig config;
  config.batch_size = 64;
  config.max_epochs = 40;
  config.early_stop_patience = 10;
  config.seed = 1234;
  return config;
}

double tune_score_threshold(const std::vector<double>& scores,
                            const std::vector<int>& labels) {
  std::vector<double> unique_scores = scores;
  std::sort(unique_scores.begin(), unique_scores.end());
  unique_scores.erase(std::unique(unique_scores.begin(), unique_scores.end()),
                      unique_scores.end());
  std::vector<double> candidates = {0.5};
  for (std::size_t i = 0; i + 1 < unique_scores.size(); ++i) {
    candidates.push_back((unique_scores[i] + unique_scores[i + 1]) / 2.0);
  }
  double best_threshold = 0.5;
  double best_f1 = -1.0;
  std::vector<int> preds(scores.size());
  for (double threshold : candidates) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      preds[i] = scores[i] >= threshold ? 1 : 0;
    }
    const double f1 = f1_macro_f1(labels, preds).macro_f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_threshold = threshold;
    }
  }
  return best_threshold;
}

namespace {

struct TrainedDetector {
  HaltModel model;
  double threshold = 0.5;
};

double eval_macro_f1(const TrainedDetector& detector,
                     const std::vector<FeatureSequence>& test) {
  const auto predictions = detector.model.predict(test, detector.threshold);
  std::vector<int> labels, preds;
  for (std::size_t i = 0; i < test.size(); ++i) {
    labels.push_back(test[i].label);
    preds.push_back(predictions[i].label);
  }
  return f1_macro_f1(labels, preds).macro_f1;
}

TrainedDetector train_on_spec(const EmulatorSpec& spec,
                              const HypothesisConfig& config) {
  std::vector<ResponseTrace> train_traces, val_traces;
  for (int f = 0; f < 2; ++f) {
    const std::string& family = spec.families[static_cast<std::size_t>(f)].name;
    auto tr = generate(spec, family, config.train_per_family,
                       derive_seed(spec.seed, "train", static_cast<std::uint64_t>(f)));
    train_traces.insert(train_traces.end(), tr.begin(), tr.end());
    auto va = generate(spec, family, config.val_per_family,
                       derive_seed(spec.seed, "val", static_cast<std::uint64_t>(f)));
    val_traces.insert(val_traces.end(), va.begin(), va.end());
  }

  const auto train_features = featurize_all(train_traces);
  const auto val_features = featurize_all(val_traces);

  HaltModel model = HaltModel::init(
      config.model_config, derive_seed(spec.seed, "model-init"));
  model.meta()["train_families"] = spec.families[0].name + "," + spec.families[1].name;
  model.meta()["emulator"] = spec.id;

  TrainResult result =
      train(model, train_features, val_features, config.train_config);
  if (result.aborted) {
    throw NumericError("hypothesis suite training aborted: " + result.abort_reason);
  }

  TrainedDetector detector{std::move(result.best_model), 0.5};
  std::vector<double> scores;
  std::vector<int> labels;
  const auto val_predictions = detector.model.predict(val_features, 0.5);
  for (std::size_t i = 0; i < val_features.size(); ++i) {
    scores.push_back(val_predictions[i].score);
    labels.push_back(val_features[i].label);
  }
  detector.threshold = tune_score_threshold(scores, labels);
  return detector;
}

}  // namespace

HypothesisReport hypothesis_suite(const EmulatorSpec& a, const EmulatorSpec& b,
                                  const HypothesisConfig& config) {
  if (a.families.size() < 3 || b.families.size() < 3) {
    throw ValidationError("hypothesis suite needs >= 3 task families per spec");
  }
  const double distance = bias_distance(a.bias, b.bias);
  if (distance < 0.5) {
    throw ValidationError(
        "degenerate emulator pair: bias parameter distance " +
        std::to_string(distance) + " < 0.5; hypotheses 3/4 are untestable");
  }

  const auto test_a =
      featurize_all(generate(a, a.families[2].name, config.test_count,
                             derive_seed(a.seed, "probe-test")));
  const auto test_b =
      featurize_all(generate(b, b.families[2].name, config.test_count,
                             derive_seed(b.seed, "probe-test")));

  const TrainedDetector detector_a = train_on_spec(a, config);
  const TrainedDetector detector_b = train_on_spec(b, config);

  HypothesisReport report;
  report.threshold_a = detector_a.threshold;
  report.threshold_b = detector_b.threshold;
  report.a_on_a = eval_macro_f1(detector_a, test_a);
  report.a_on_b = eval_macro_f1(detector_a, test_b);
  report.b_on_b = eval_macro_f1(detector_b, test_b);
  report.b_on_a = eval_macro_f1(detector_b, test_a);
  report.gap_a = report.a_on_a - report.a_on_b;
  report.gap_b = report.b_on_b - report.b_on_a;
  return report;
}

std::string hypothesis_report_to_json(const HypothesisReport& report) {
  json j;
  j["a_on_a"] = report.a_on_a;
  j["a_on_b"] = report.a_on_b;
  j["b_on_b"] = report.b_on_b;
  j["b_on_a"] = report.b_on_a;
  j["gap_a"] = report.gap_a;
  j["gap_b"] = report.gap_b;
  j["threshold_a"] = report.threshold_a;
  j["threshold_b"] = report.threshold_b;
  return j.dump(2);
}

}  // namespace halt
