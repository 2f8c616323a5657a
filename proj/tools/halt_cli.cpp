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

// Operator surface: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 usage/config, 2 data validation, 3 numeric fault.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "halt/baselines.hpp"
#include "halt/errors.hpp"
#include "halt/features.hpp"
#include "halt/io_util.hpp"
#include "halt/metrics.hpp"
#include "halt/model.hpp"
#include "halt/rng.hpp"
#include "halt/synth.hpp"
#include "halt/trace.hpp"
#include "halt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace halt;

namespace {

struct CommonArgs {
  std::string manifest;
  std::string config_file;
  std::string model_file;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string mask_csv;
  double threshold = 0.5;
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int column_index(const std::string& name) {
  const auto& names = feature_names();
  for (int i = 0; i < kFeatureDim; ++i) {
    if (names[static_cast<std::size_t>(i)] == name) return i;
  }
  throw ConfigError("unknown feature column '" + name + "'");
}

std::array<bool, kFeatureDim> mask_from_csv(const std::string& csv) {
  auto mask = HaltConfig::all_columns();
  for (const auto& name : split_csv(csv)) {
    mask[static_cast<std::size_t>(column_index(name))] = false;
  }
  return mask;
}

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config file is not a JSON object: " + path);
  }
  return j;
}

HaltConfig halt_config_from_json(const json& j) {
  HaltConfig config;
  if (!j.contains("model")) return config;
  const json& m = j["model"];
  config.proj_dim = m.value("proj_dim", config.proj_dim);
  config.hidden_dim = m.value("hidden_dim", config.hidden_dim);
  config.num_layers = m.value("num_layers", config.num_layers);
  config.bidirectional = m.value("bidirectional", config.bidirectional);
  config.dropout_rate = m.value("dropout_rate", config.dropout_rate);
  config.top_q = m.value("top_q", config.top_q);
  config.out_norm = m.value("out_norm", config.out_norm);
  if (m.contains("mask_columns")) {
    for (const auto& name : m["mask_columns"]) {
      config.column_mask[static_cast<std::size_t>(
          column_index(name.get<std::string>()))] = false;
    }
  }
  return config;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig config;
  if (!j.contains("train")) return config;
  const json& t = j["train"];
  config.lr = t.value("lr", config.lr);
  config.weight_decay = t.value("weight_decay", config.weight_decay);
  config.weight_decay_decoupled =
      t.value("weight_decay_decoupled", config.weight_decay_decoupled);
  config.batch_size = t.value("batch_size", config.batch_size);
  config.max_epochs = t.value("max_epochs", config.max_epochs);
  config.plateau_factor = t.value("plateau_factor", config.plateau_factor);
  config.plateau_patience = t.value("plateau_patience", config.plateau_patience);
  config.early_stop_patience =
      t.value("early_stop_patience", config.early_stop_patience);
  config.clip_max_norm = t.value("clip_max_norm", config.clip_max_norm);
  config.adam_beta1 = t.value("adam_beta1", config.adam_beta1);
  config.adam_beta2 = t.value("adam_beta2", config.adam_beta2);
  config.adam_eps = t.value("adam_eps", config.adam_eps);
  config.seed = t.value("seed", config.seed);
  return config;
}

json halt_config_to_json(const HaltConfig& config) {
  json m;
  m["input_dim"] = config.input_dim;
  m["proj_dim"] = config.proj_dim;
  m["hidden_dim"] = config.hidden_dim;
  m["num_layers"] = config.num_layers;
  m["bidirectional"] = config.bidirectional;
  m["dropout_rate"] = config.dropout_rate;
  m["top_q"] = config.top_q;
  m["out_norm"] = config.out_norm;
  json masked = json::array();
  const auto& names = feature_names();
  for (int i = 0; i < kFeatureDim; ++i) {
    if (!config.column_mask[static_cast<std::size_t>(i)]) {
      masked.push_back(names[static_cast<std::size_t>(i)]);
    }
  }
  m["mask_columns"] = std::move(masked);
  return m;
}

json train_config_to_json(const TrainConfig& config) {
  json t;
  t["lr"] = config.lr;
  t["weight_decay"] = config.weight_decay;
  t["weight_decay_decoupled"] = config.weight_decay_decoupled;
  t["batch_size"] = config.batch_size;
  t["max_epochs"] = config.max_epochs;
  t["plateau_factor"] = config.plateau_factor;
  t["plateau_patience"] = config.plateau_patience;
  t["early_stop_patience"] = config.early_stop_patience;
  t["clip_max_norm"] = config.clip_max_norm;
  t["adam_beta1"] = config.adam_beta1;
  t["adam_beta2"] = config.adam_beta2;
  t["adam_eps"] = config.adam_eps;
  t["seed"] = config.seed;
  return t;
}

void echo_resolved_config(const fs::path& out_dir, const json& resolved) {
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "resolved_config.json", resolved.dump(2) + "\n");
}

DatasetManifest load_and_check_manifest(const std::string& path) {
  const DatasetManifest manifest = load_manifest(path);
  const auto diags = validate_manifest(manifest);
  if (!diags.empty()) {
    for (const auto& d : diags) std::cerr << "manifest: " << d << "\n";
    throw ValidationError("manifest validation failed with " +
                          std::to_string(diags.size()) + " diagnostic(s)");
  }
  return manifest;
}

std::string clusters_of(const std::vector<ResponseTrace>& traces) {
  std::set<std::string> clusters;
  for (const auto& trace : traces) clusters.insert(trace.cluster);
  std::string joined;
  for (const auto& c : clusters) {
    if (!joined.empty()) joined += ",";
    joined += c;
  }
  return joined;
}

int cmd_featurize(const CommonArgs& args) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  const auto mask = mask_from_csv(args.mask_csv);

  for (const auto& [split, files] : manifest.splits) {
    for (const auto& file : files) {
      const auto traces = load_traces(file);
      const auto sequences = featurize_all(traces);
      const fs::path cache_path =
          out_dir / (file.stem().string() + ".features.jsonl");
      write_feature_cache(cache_path, sequences, mask);
      std::cerr << "featurize: " << split << " " << file.filename().string()
                << " -> " << cache_path.filename().string() << " ("
                << sequences.size() << " traces)\n";
    }
  }
  json resolved;
  resolved["command"] = "featurize";
  resolved["manifest"] = args.manifest;
  resolved["mask"] = args.mask_csv;
  echo_resolved_config(out_dir, resolved);
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const json file_config = load_config_json(args.config_file);
  HaltConfig model_config = halt_config_from_json(file_config);
  TrainConfig train_config = train_config_from_json(file_config);
  if (args.seed_given) train_config.seed = args.seed;
  if (!args.mask_csv.empty()) model_config.column_mask = mask_from_csv(args.mask_csv);

  const auto train_traces = load_split(manifest, "train");
  const auto val_traces = load_split(manifest, "validation");
  if (train_traces.empty()) throw ConfigError("train split is empty");
  if (val_traces.empty()) throw ConfigError("validation split is empty");

  const auto train_features = featurize_all(train_traces);
  const auto val_features = featurize_all(val_traces);

  HaltModel model =
      HaltModel::init(model_config, derive_seed(train_config.seed, "init"));
  model.meta()["train_clusters"] = clusters_of(train_traces);
  model.meta()["weight_decay_mode"] =
      train_config.weight_decay_decoupled ? "decoupled" : "coupled";

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  json resolved;
  resolved["command"] = "train";
  resolved["manifest"] = args.manifest;
  resolved["model"] = halt_config_to_json(model_config);
  resolved["train"] = train_config_to_json(train_config);
  echo_resolved_config(out_dir, resolved);

  const TrainResult result =
      train(model, train_features, val_features, train_config);
  result.best_model.save(out_dir / "model.halt");
  write_file_atomic(out_dir / "train_log.jsonl", train_log_to_jsonl(result));

  if (result.aborted) {
    std::cerr << "training aborted by numeric fault: " << result.abort_reason
              << " (best checkpoint preserved)\n";
    return 3;
  }
  std::cerr << "best validation macro-F1 " << result.best_val_macro_f1
            << " at epoch " << result.best_epoch << " (" << result.epochs_run
            << " epochs run)\n";
  return 0;
}

int cmd_tune(const CommonArgs& args, const std::string& statistic) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const auto validation = load_split(manifest, "validation");
  if (validation.empty()) throw ConfigError("validation split is empty");
  const StatDetector detector =
      tune_threshold(statistic_from_string(statistic), validation);
  write_file_atomic(args.out, detector_to_json(detector) + "\n");
  std::cerr << "tuned " << statistic << ": threshold " << detector.threshold
            << (detector.higher_means_hallucinated ? " (higher)" : " (lower)")
            << ", validation macro-F1 " << detector.val_macro_f1 << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::vector<std::string>& detector_files,
             bool tune_on_validation) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const auto test_traces = load_split(manifest, "test");
  if (test_traces.empty()) throw ConfigError("test split is empty");

  std::vector<std::pair<std::string, EvalReport>> methods;

  if (!args.model_file.empty()) {
    const HaltModel model = HaltModel::load(args.model_file);

    // Clusters unseen during training are legitimate out-of-distribution
    // inputs; flag them, do not fail.
    const auto meta_it = model.meta().find("train_clusters");
    if (meta_it != model.meta().end()) {
      std::set<std::string> known;
      for (const auto& c : split_csv(meta_it->second)) known.insert(c);
      std::set<std::string> warned;
      for (const auto& trace : test_traces) {
        if (!known.count(trace.cluster) && warned.insert(trace.cluster).second) {
          std::cerr << "warning: cluster '" << trace.cluster
                    << "' never seen in training\n";
        }
      }
    }

    double threshold = args.threshold;
    if (tune_on_validation) {
      const auto val_traces = load_split(manifest, "validation");
      if (val_traces.empty()) throw ConfigError("validation split is empty");
      const auto val_features = featurize_all(val_traces);
      const auto val_predictions = model.predict(val_features, 0.5);
      std::vector<double> scores;
      std::vector<int> labels;
      for (std::size_t i = 0; i < val_features.size(); ++i) {
        scores.push_back(val_predictions[i].score);
        labels.push_back(val_features[i].label);
      }
      threshold = tune_score_threshold(scores, labels);
      std::cerr << "tuned model threshold on validation: " << threshold << "\n";
    }

    const auto features = featurize_all(test_traces);
    const auto predictions = model.predict(features, threshold);
    std::vector<TraceResult> results;
    for (std::size_t i = 0; i < test_traces.size(); ++i) {
      results.push_back({test_traces[i].cluster, test_traces[i].label,
                         predictions[i].label, predictions[i].score});
    }
    methods.emplace_back("halt", aggregate(results));
  }

  for (const auto& file : detector_files) {
    const StatDetector detector = detector_from_json(read_file(file));
    std::vector<TraceResult> results;
    for (const auto& trace : test_traces) {
      const double score = detector_score(detector, trace);
      results.push_back({trace.cluster, trace.label,
                         detector_predict(detector, score), score});
    }
    methods.emplace_back(statistic_to_string(detector.statistic),
                         aggregate(results));
  }

  if (methods.empty()) {
    throw ConfigError("eval needs --model and/or --detector");
  }

  json report;
  for (const auto& [name, eval_report] : methods) {
    report[name] = json::parse(report_to_json(eval_report));
  }
  const std::string table = render_comparison_table(methods);
  std::cout << table;

  if (!args.out.empty()) {
    const fs::path out_dir(args.out);
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "eval_report.json", report.dump(2) + "\n");
    write_file_atomic(out_dir / "eval_table.txt", table);
    json resolved;
    resolved["command"] = "eval";
    resolved["manifest"] = args.manifest;
    resolved["model"] = args.model_file;
    resolved["threshold"] = args.threshold;
    resolved["tuned_on_validation"] = tune_on_validation;
    resolved["detectors"] = detector_files;
    echo_resolved_config(out_dir, resolved);
  }
  return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& traces_file) {
  const HaltModel model = HaltModel::load(args.model_file);
  const auto traces = load_traces(traces_file);
  const auto features = featurize_all(traces);
  const auto predictions = model.predict(features, args.threshold);

  std::ostringstream out;
  for (const auto& p : predictions) {
    json j;
    j["id"] = p.trace_id;
    j["score"] = p.score;
    j["label"] = p.label;
    out << j.dump() << '\n';
  }
  if (args.out.empty() || args.out == "-") {
    std::cout << out.str();
  } else {
    write_file_atomic(args.out, out.str());
  }
  return 0;
}

int cmd_synth(const CommonArgs& args, const std::string& spec_file,
              const std::string& family, int n) {
  const EmulatorSpec spec = load_emulator_spec(spec_file);
  const std::uint64_t seed = args.seed_given ? args.seed : spec.seed;
  const auto traces = generate(spec, family, n, seed);
  write_traces(args.out, traces);
  std::cerr << "synth: wrote " << traces.size() << " traces (" << spec.id << "/"
            << family << ", seed " << seed << ") to " << args.out << "\n";
  return 0;
}

int cmd_hypothesis(const CommonArgs& args, const std::string& spec_a_file,
                   const std::string& spec_b_file) {
  const EmulatorSpec spec_a = load_emulator_spec(spec_a_file);
  const EmulatorSpec spec_b = load_emulator_spec(spec_b_file);

  HypothesisConfig config;
  if (!args.config_file.empty()) {
    const json j = load_config_json(args.config_file);
    if (j.contains("model")) config.model_config = halt_config_from_json(j);
    if (j.contains("train")) config.train_config = train_config_from_json(j);
    config.train_per_family = j.value("train_per_family", config.train_per_family);
    config.val_per_family = j.value("val_per_family", config.val_per_family);
    config.test_count = j.value("test_count", config.test_count);
  }

  const HypothesisReport report = hypothesis_suite(spec_a, spec_b, config);
  const std::string text = hypothesis_report_to_json(report);
  std::cout << text << "\n";
  if (!args.out.empty()) write_file_atomic(args.out, text + "\n");
  return 0;
}

int cmd_attribute(const CommonArgs& args, const std::string& split) {
  const HaltModel model = HaltModel::load(args.model_file);
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const auto traces = load_split(manifest, split);
  if (traces.empty()) throw ConfigError("split '" + split + "' is empty");
  const auto features = featurize_all(traces);
  const Batch batch = Batch::from_sequences(features);
  const Attribution attribution = model.attribute(batch);
  const std::string text = attribution_to_json(attribution);
  if (args.out.empty() || args.out == "-") {
    std::cout << text << "\n";
  } else {
    write_file_atomic(args.out, text + "\n");
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& columns_csv) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const json file_config = load_config_json(args.config_file);
  const HaltConfig base_config = halt_config_from_json(file_config);
  TrainConfig train_config = train_config_from_json(file_config);
  if (args.seed_given) train_config.seed = args.seed;

  const auto train_features = featurize_all(load_split(manifest, "train"));
  const auto val_features = featurize_all(load_split(manifest, "validation"));
  const auto test_traces = load_split(manifest, "test");
  const auto test_features = featurize_all(test_traces);
  std::vector<int> test_labels;
  for (const auto& trace : test_traces) test_labels.push_back(trace.label);

  auto run_variant = [&](const std::string& name,
                         const std::array<bool, kFeatureDim>& mask) {
    HaltConfig config = base_config;
    config.column_mask = mask;
    HaltModel model =
        HaltModel::init(config, derive_seed(train_config.seed, "init"));
    const TrainResult result =
        train(model, train_features, val_features, train_config);
    if (result.aborted) {
      throw NumericError("ablation variant '" + name + "' aborted: " +
                         result.abort_reason);
    }
    const auto predictions = result.best_model.predict(test_features, 0.5);
    std::vector<int> preds;
    for (const auto& p : predictions) preds.push_back(p.label);
    return f1_macro_f1(test_labels, preds).macro_f1;
  };

  const double full = run_variant("full", base_config.column_mask);
  json table = json::array();
  std::ostringstream text;
  text << "variant                      macro_f1     delta\n";
  {
    std::ostringstream row;
    row.setf(std::ios::fixed);
    row.precision(4);
    row << "full" << std::string(25, ' ') << full << "     -";
    text << row.str() << "\n";
  }
  json full_row;
  full_row["variant"] = "full";
  full_row["macro_f1"] = full;
  full_row["delta"] = 0.0;
  table.push_back(full_row);

  for (const auto& column : split_csv(columns_csv)) {
    auto mask = base_config.column_mask;
    mask[static_cast<std::size_t>(column_index(column))] = false;
    const double score = run_variant("w/o " + column, mask);
    json row;
    row["variant"] = "w/o " + column;
    row["macro_f1"] = score;
    row["delta"] = full - score;
    table.push_back(row);
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(4);
    const std::string label = "w/o " + column;
    line << label
         << std::string(label.size() < 29 ? 29 - label.size() : 1, ' ') << score
         << "    " << full - score;
    text << line.str() << "\n";
  }

  std::cout << text.str();
  if (!args.out.empty()) {
    write_file_atomic(args.out, table.dump(2) + "\n");
  }
  return 0;
}

int cmd_topk(const CommonArgs& args, const std::string& k_csv,
             const std::string& split) {
  const DatasetManifest manifest = load_and_check_manifest(args.manifest);
  const auto traces = load_split(manifest, split);
  if (traces.empty()) throw ConfigError("split '" + split + "' is empty");

  std::vector<int> ks;
  for (const auto& k : split_csv(k_csv)) ks.push_back(std::stoi(k));
  if (ks.empty()) ks = {1, 5, 10, 15, 20};

  json out;
  for (int k : ks) {
    double sum = 0.0;
    long count = 0;
    for (const auto& trace : traces) {
      for (const auto& step : trace.steps) {
        sum += topk_mass(step, k);
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(count);
    out[std::to_string(k)] = mean;
    std::cout << "k=" << k << " mean captured mass " << mean << "\n";
  }
  if (!args.out.empty()) write_file_atomic(args.out, out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"halt: hallucination detection from top-20 log-prob traces"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string statistic, traces_file, spec_a, spec_b, spec_file, family;
  std::string columns_csv, k_csv = "1,5,10,15,20", split = "test";
  std::vector<std::string> detector_files;
  int synth_n = 100;
  bool tune_on_validation = false;

  auto add_common = [&](CLI::App* cmd, bool needs_manifest) {
    if (needs_manifest) {
      cmd->add_option("--manifest", args.manifest, "dataset manifest JSON")
          ->required();
    }
    cmd->add_option("--config", args.config_file, "run config JSON");
    cmd->add_option("--out", args.out, "output file or directory");
    cmd->add_option("--seed", args.seed, "root seed")
        ->each([&](const std::string&) { args.seed_given = true; });
    cmd->add_option("--threshold", args.threshold, "decision threshold");
    cmd->add_option("--mask", args.mask_csv,
                    "comma-separated feature columns to zero out");
  };

  auto* featurize_cmd =
      app.add_subcommand("featurize", "trace files -> feature caches");
  add_common(featurize_cmd, true);

  auto* train_cmd = app.add_subcommand("train", "train a detector");
  add_common(train_cmd, true);

  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate detectors on the test split");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--model", args.model_file, "trained model file");
  eval_cmd->add_option("--detector", detector_files,
                       "serialized detector JSON files");
  eval_cmd->add_flag("--tune", tune_on_validation,
                     "tune the model threshold on the validation split");

  auto* tune_cmd = app.add_subcommand("tune", "tune a single-statistic detector");
  add_common(tune_cmd, true);
  tune_cmd->add_option("--statistic", statistic,
                       "ppl|h_overall|h_alts|dh_dec|rank_proxy")
      ->required();

  auto* predict_cmd = app.add_subcommand("predict", "score one trace file");
  add_common(predict_cmd, false);
  predict_cmd->add_option("--model", args.model_file, "trained model file")
      ->required();
  predict_cmd->add_option("--traces", traces_file, "trace file")->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate emulator traces");
  add_common(synth_cmd, false);
  synth_cmd->add_option("--spec", spec_file, "emulator spec JSON")->required();
  synth_cmd->add_option("--family", family, "task family name")->required();
  synth_cmd->add_option("--n", synth_n, "trace count");

  auto* hypothesis_cmd =
      app.add_subcommand("hypothesis", "cross-emulator transfer suite");
  add_common(hypothesis_cmd, false);
  hypothesis_cmd->add_option("--spec-a", spec_a, "emulator A spec")->required();
  hypothesis_cmd->add_option("--spec-b", spec_b, "emulator B spec")->required();

  auto* attribute_cmd = app.add_subcommand(
      "attribute", "gradient-times-input feature importance");
  add_common(attribute_cmd, true);
  attribute_cmd->add_option("--model", args.model_file, "trained model file")
      ->required();
  attribute_cmd->add_option("--split", split, "manifest split to attribute");

  auto* ablate_cmd = app.add_subcommand("ablate", "retrain with masked columns");
  add_common(ablate_cmd, true);
  ablate_cmd->add_option("--columns", columns_csv,
                         "columns to ablate one by one")
      ->required();

  auto* topk_cmd = app.add_subcommand("topk", "mean cumulative top-k mass");
  add_common(topk_cmd, true);
  topk_cmd->add_option("--k", k_csv, "comma-separated k prefixes");
  topk_cmd->add_option("--split", split, "manifest split to analyze");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (featurize_cmd->parsed()) {
      if (args.out.empty()) throw ConfigError("featurize needs --out");
      return cmd_featurize(args);
    }
    if (train_cmd->parsed()) {
      if (args.out.empty()) throw ConfigError("train needs --out");
      return cmd_train(args);
    }
    if (eval_cmd->parsed())
      return cmd_eval(args, detector_files, tune_on_validation);
    if (tune_cmd->parsed()) {
      if (args.out.empty()) throw ConfigError("tune needs --out");
      return cmd_tune(args, statistic);
    }
    if (predict_cmd->parsed()) return cmd_predict(args, traces_file);
    if (synth_cmd->parsed()) {
      if (args.out.empty()) throw ConfigError("synth needs --out");
      return cmd_synth(args, spec_file, family, synth_n);
    }
    if (hypothesis_cmd->parsed()) return cmd_hypothesis(args, spec_a, spec_b);
    if (attribute_cmd->parsed()) return cmd_attribute(args, split);
    if (ablate_cmd->parsed()) return cmd_ablate(args, columns_csv);
    if (topk_cmd->parsed()) return cmd_topk(args, k_csv, split);
    throw ConfigError("no subcommand");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
