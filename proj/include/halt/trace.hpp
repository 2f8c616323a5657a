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
#include <map>
#include <string>
#include <vector>

namespace halt {

inline constexpr int kTopK = 20;

// One decoding step: natural-log probabilities of the selected token
// (position 0) followed by the top-19 alternatives sorted non-increasing.
struct LogProbStep {
  std::array<double, kTopK> values{};

  double selected() const { return values[0]; }
};

// One labeled LLM response as a log-prob time series.
struct ResponseTrace {
  std::string id;
  std::string cluster;
  int label = 0;  // 1 = hallucinated, 0 = faithful
  std::vector<LogProbStep> steps;
  std::map<std::string, std::string> meta;

  int length() const { return static_cast<int>(steps.size()); }
};

// Validates a step against the stored-trace invariants: 20 finite entries,
// none positive, alternatives sorted non-increasing. Returns an empty string
// when valid, otherwise a description of the first violation.
std::string check_step(const LogProbStep& step);

// Full-record check: step invariants plus T >= 1 and label in {0,1}.
std::string check_trace(const ResponseTrace& trace);

// Line-delimited JSON trace file I/O. load_traces throws ParseError for
// malformed lines (naming the line number) and ValidationError for records
// violating invariants (naming the record id and field); it never returns
// partial results. Duplicate ids within one file are rejected.
std::vector<ResponseTrace> load_traces(const std::filesystem::path& path);

// Canonical writer: one compact JSON object per line, keys sorted, doubles
// in shortest round-trip form. write(load(f)) is byte-identical for files
// produced by this writer.
void write_traces(const std::filesystem::path& path,
                  const std::vector<ResponseTrace>& traces);

std::string trace_to_json_line(const ResponseTrace& trace);

struct ClusterStats {
  int count = 0;
  double hallucination_ratio = 0.0;
};

struct DatasetManifest {
  // split name -> trace file paths, resolved relative to the manifest dir.
  std::map<std::string, std::vector<std::filesystem::path>> splits;
  // Optional stated inventory; validated against recomputation.
  std::map<std::string, ClusterStats> clusters;
  std::filesystem::path base_dir;
};

DatasetManifest load_manifest(const std::filesystem::path& path);

// One diagnostic per violation: unknown or missing split names, unreadable
// or invalid referenced files, stated cluster stats that do not match the
// recomputed ones. Empty result means the manifest is sound.
std::vector<std::string> validate_manifest(const DatasetManifest& manifest);

// Loads every file of one split, concatenated in manifest order.
std::vector<ResponseTrace> load_split(const DatasetManifest& manifest,
                                      const std::string& split);

}  // namespace halt
