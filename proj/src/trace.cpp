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

#include "halt/trace.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/io_util.hpp"

namespace halt {

using nlohmann::json;

std::string check_step(const LogProbStep& step) {
  for (int i = 0; i < kTopK; ++i) {
    if (!std::isfinite(step.values[i])) {
      return "non-finite log-prob at position " + std::to_string(i);
    }
    if (step.values[i] > 0.0) {
      return "positive log-prob at position " + std::to_string(i);
    }
  }
  for (int i = 2; i < kTopK; ++i) {
    if (step.values[i] > step.values[i - 1]) {
      return "alternatives not sorted non-increasing at position " +
             std::to_string(i);
    }
  }
  return {};
}

std::string check_trace(const ResponseTrace& trace) {
  if (trace.steps.empty()) return "empty trace (T must be >= 1)";
  if (trace.label != 0 && trace.label != 1) return "label must be 0 or 1";
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    std::string err = check_step(trace.steps[t]);
    if (!err.empty()) return "step " + std::to_string(t) + ": " + err;
  }
  return {};
}

namespace {

ResponseTrace parse_trace(const json& j, std::size_t line_no) {
  auto fail = [&](const std::string& what) -> ResponseTrace {
    throw ValidationError("line " + std::to_string(line_no) + ": " + what);
  };

  if (!j.is_object()) return fail("record is not a JSON object");
  if (!j.contains("id") || !j["id"].is_string()) {
    return fail("missing or non-string 'id'");
  }

  ResponseTrace trace;
  trace.id = j["id"].get<std::string>();
  auto named = [&](const std::string& what) -> ResponseTrace {
    throw ValidationError("record '" + trace.id + "': " + what);
  };

  if (!j.contains("cluster") || !j["cluster"].is_string()) {
    return named("missing or non-string 'cluster'");
  }
  trace.cluster = j["cluster"].get<std::string>();

  if (!j.contains("label") || !j["label"].is_number_integer()) {
    return named("missing or non-integer 'label'");
  }
  trace.label = j["label"].get<int>();

  if (!j.contains("logprobs") || !j["logprobs"].is_array()) {
    return named("missing or non-array 'logprobs'");
  }
  for (const auto& row : j["logprobs"]) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(kTopK)) {
      return named("field 'logprobs': expected 20 entries per step, got " +
                   std::to_string(row.is_array() ? row.size() : 0));
    }
    LogProbStep step;
    for (int i = 0; i < kTopK; ++i) {
      if (!row[i].is_number()) return named("field 'logprobs': non-numeric entry");
      step.values[i] = row[i].get<double>();
    }
    trace.steps.push_back(step);
  }

  if (j.contains("meta")) {
    if (!j["meta"].is_object()) return named("field 'meta' is not an object");
    for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it) {
      if (!it.value().is_string()) return named("field 'meta': non-string value");
      trace.meta[it.key()] = it.value().get<std::string>();
    }
  }

  std::string err = check_trace(trace);
  if (!err.empty()) return named("field 'logprobs'/'label': " + err);
  return trace;
}

}  // namespace

std::vector<ResponseTrace> load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trace file: " + path.string());

  std::vector<ResponseTrace> traces;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ParseError("parse error in " + path.string() + " at line " +
                       std::to_string(line_no));
    }
    ResponseTrace trace = parse_trace(j, line_no);
    if (!seen_ids.insert(trace.id).second) {
      throw ValidationError("duplicate trace id '" + trace.id + "' in " +
                            path.string());
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

std::string trace_to_json_line(const ResponseTrace& trace) {
  json j;
  j["id"] = trace.id;
  j["cluster"] = trace.cluster;
  j["label"] = trace.label;
  json rows = json::array();
  for (const auto& step : trace.steps) {
    json row = json::array();
    for (double v : step.values) row.push_back(v);
    rows.push_back(std::move(row));
  }
  j["logprobs"] = std::move(rows);
  if (!trace.meta.empty()) {
    json m = json::object();
    for (const auto& [k, v] : trace.meta) m[k] = v;
    j["meta"] = std::move(m);
  }
  return j.dump();
}

void write_traces(const std::filesystem::path& path,
                  const std::vector<ResponseTrace>& traces) {
  std::ostringstream out;
  for (const auto& trace : traces) out << trace_to_json_line(trace) << '\n';
  write_file_atomic(path, out.str());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ParseError("manifest is not valid JSON: " + path.string());
  }
  if (!j.contains("splits") || !j["splits"].is_object()) {
    throw ValidationError("manifest missing 'splits' object: " + path.string());
  }

  DatasetManifest manifest;
  manifest.base_dir = std::filesystem::absolute(path).parent_path();
  for (auto it = j["splits"].begin(); it != j["splits"].end(); ++it) {
    if (!it.value().is_array()) {
      throw ValidationError("manifest split '" + it.key() + "' is not an array");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& p : it.value()) {
      if (!p.is_string()) {
        throw ValidationError("manifest split '" + it.key() +
                              "' has a non-string path");
      }
      files.push_back(manifest.base_dir / p.get<std::string>());
    }
    manifest.splits[it.key()] = std::move(files);
  }
  if (j.contains("clusters")) {
    if (!j["clusters"].is_object()) {
      throw ValidationError("manifest 'clusters' is not an object");
    }
    for (auto it = j["clusters"].begin(); it != j["clusters"].end(); ++it) {
      ClusterStats stats;
      stats.count = it.value().value("count", 0);
      stats.hallucination_ratio = it.value().value("hallucination_ratio", 0.0);
      manifest.clusters[it.key()] = stats;
    }
  }
  return manifest;
}

std::vector<std::string> validate_manifest(const DatasetManifest& manifest) {
  std::vector<std::string> diags;
  static const std::set<std::string> kKnown = {"train", "validation", "test"};

  for (const auto& [name, files] : manifest.splits) {
    if (!kKnown.count(name)) {
      diags.push_back("unknown split name '" + name + "'");
    }
  }
  for (const auto& name : kKnown) {
    if (!manifest.splits.count(name)) {
      diags.push_back("missing split '" + name + "'");
    }
  }

  std::map<std::string, std::pair<int, int>> recomputed;  // cluster -> (n, n_pos)
  for (const auto& [name, files] : manifest.splits) {
    for (const auto& file : files) {
      try {
        for (const auto& trace : load_traces(file)) {
          auto& [n, pos] = recomputed[trace.cluster];
          ++n;
          pos += trace.label;
        }
      } catch (const std::exception& e) {
        diags.push_back("split '" + name + "': " + e.what());
      }
    }
  }

  for (const auto& [cluster, stated] : manifest.clusters) {
    auto it = recomputed.find(cluster);
    if (it == recomputed.end()) {
      diags.push_back("cluster '" + cluster + "' stated but absent from traces");
      continue;
    }
    const auto [n, pos] = it->second;
    if (stated.count != n) {
      diags.push_back("cluster '" + cluster + "' count mismatch: stated " +
                      std::to_string(stated.count) + ", actual " +
                      std::to_string(n));
    }
    const double actual_ratio = n > 0 ? static_cast<double>(pos) / n : 0.0;
    if (std::abs(stated.hallucination_ratio - actual_ratio) > 1e-9) {
      diags.push_back("cluster '" + cluster + "' ratio mismatch: stated " +
                      std::to_string(stated.hallucination_ratio) + ", actual " +
                      std::to_string(actual_ratio));
    }
  }
  return diags;
}

std::vector<ResponseTrace> load_split(const DatasetManifest& manifest,
                                      const std::string& split) {
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end()) {
    throw ConfigError("manifest has no split '" + split + "'");
  }
  std::vector<ResponseTrace> all;
  for (const auto& file : it->second) {
    auto traces = load_traces(file);
    all.insert(all.end(), std::make_move_iterator(traces.begin()),
               std::make_move_iterator(traces.end()));
  }
  return all;
}

}  // namespace halt
