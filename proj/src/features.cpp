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

#include "halt/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "halt/errors.hpp"
#include "halt/io_util.hpp"
#include "halt/parallel.hpp"

namespace halt {

using nlohmann::json;

namespace {

const double kLn20 = std::log(20.0);
const double kLn19 = std::log(19.0);
const double kLn2 = std::log(2.0);

inline double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

inline double clamp_unit(double x, double hi) {
  return std::min(std::max(x, 0.0), hi);
}

}  // namespace

const std::array<std::string, kFeatureDim>& feature_names() {
  static const std::array<std::string, kFeatureDim> names = [] {
    std::array<std::string, kFeatureDim> n;
    n[kColEntropyOverall] = "entropy_overall";
    n[kColEntropyAlts] = "entropy_alts";
    n[kColAvgLogProb] = "avg_logprob";
    n[kColRankProxy] = "rank_proxy";
    n[kColDecEntropyDelta] = "dec_entropy_delta";
    for (int i = 0; i < kTopK; ++i) {
      n[kColRawLogProb0 + i] = "logprob_" + std::to_string(i + 1);
    }
    return n;
  }();
  return names;
}

TruncatedDistribution trunc_softmax(const LogProbStep& step) {
  const double m = *std::max_element(step.values.begin(), step.values.end());
  TruncatedDistribution dist;
  double sum = 0.0;
  for (int i = 0; i < kTopK; ++i) {
    dist.probs[i] = std::exp(step.values[i] - m);
    sum += dist.probs[i];
  }
  for (int i = 0; i < kTopK; ++i) dist.probs[i] /= sum;
  return dist;
}

double avg_logp(const LogProbStep& step) {
  double sum = 0.0;
  for (double v : step.values) sum += v;
  return sum / kTopK;
}

int rank_proxy(const LogProbStep& step) {
  int rank = 1;
  for (int i = 1; i < kTopK; ++i) {
    if (step.values[i] > step.values[0]) ++rank;
  }
  return rank;
}

double entropy_overall(const TruncatedDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) h -= xlogx(p);
  return clamp_unit(h, kLn20);
}

double entropy_alts(const TruncatedDistribution& dist) {
  double alt_mass = 0.0;
  for (int i = 1; i < kTopK; ++i) alt_mass += dist.probs[i];
  if (alt_mass < 1e-300) return 0.0;
  double h = 0.0;
  for (int i = 1; i < kTopK; ++i) h -= xlogx(dist.probs[i] / alt_mass);
  return clamp_unit(h, kLn19);
}

double decision_entropy(const LogProbStep& step) {
  const double best_alt =
      *std::max_element(step.values.begin() + 1, step.values.end());
  // Shifted two-way softmax: p_c = exp(l0) / (exp(l0) + exp(l_alt)).
  const double m = std::max(step.values[0], best_alt);
  const double ec = std::exp(step.values[0] - m);
  const double ea = std::exp(best_alt - m);
  const double pc = ec / (ec + ea);
  return clamp_unit(-(xlogx(pc) + xlogx(1.0 - pc)), kLn2);
}

FeatureSequence featurize(const ResponseTrace& trace) {
  const int T = trace.length();
  FeatureSequence seq;
  seq.trace_id = trace.id;
  seq.label = trace.label;
  seq.rows.resize(T, kFeatureDim);

  double prev_dec = 0.0;
  for (int t = 0; t < T; ++t) {
    const LogProbStep& step = trace.steps[static_cast<std::size_t>(t)];
    const TruncatedDistribution dist = trunc_softmax(step);
    const double dec = decision_entropy(step);

    seq.rows(t, kColEntropyOverall) = entropy_overall(dist);
    seq.rows(t, kColEntropyAlts) = entropy_alts(dist);
    seq.rows(t, kColAvgLogProb) = avg_logp(step);
    seq.rows(t, kColRankProxy) = static_cast<double>(rank_proxy(step));
    seq.rows(t, kColDecEntropyDelta) = t == 0 ? 0.0 : dec - prev_dec;
    prev_dec = dec;

    for (int i = 0; i < kTopK; ++i) {
      seq.rows(t, kColRawLogProb0 + i) = step.values[i];
    }
  }
  return seq;
}

std::vector<FeatureSequence> featurize_all(
    const std::vector<ResponseTrace>& traces) {
  std::vector<FeatureSequence> out(traces.size());
  parallel_for(traces.size(),
               [&](std::size_t i) { out[i] = featurize(traces[i]); });
  return out;
}

double topk_mass(const LogProbStep& step, int k_prefix) {
  if (k_prefix < 1 || k_prefix > kTopK) {
    throw ConfigError("k_prefix must be in [1, 20], got " +
                      std::to_string(k_prefix));
  }
  std::array<double, kTopK> sorted = step.values;
  for (double v : sorted) {
    if (v > 0.0) {
      throw ValidationError(
          "topk_mass requires true log-probabilities (all entries <= 0)");
    }
  }
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double mass = 0.0;
  for (int i = 0; i < k_prefix; ++i) mass += std::exp(sorted[i]);
  return mass;
}

void write_feature_cache(const std::filesystem::path& path,
                         const std::vector<FeatureSequence>& sequences,
                         const std::array<bool, kFeatureDim>& mask) {
  std::ostringstream out;
  json header;
  header["layout_version"] = kFeatureLayoutVersion;
  header["columns"] = feature_names();
  json m = json::array();
  for (bool b : mask) m.push_back(b ? 1 : 0);
  header["mask"] = std::move(m);
  out << header.dump() << '\n';

  for (const auto& seq : sequences) {
    json j;
    j["id"] = seq.trace_id;
    j["label"] = seq.label;
    json rows = json::array();
    for (int t = 0; t < seq.length(); ++t) {
      json row = json::array();
      for (int c = 0; c < kFeatureDim; ++c) row.push_back(seq.rows(t, c));
      rows.push_back(std::move(row));
    }
    j["features"] = std::move(rows);
    out << j.dump() << '\n';
  }
  write_file_atomic(path, out.str());
}

FeatureCache read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open feature cache: " + path.string());

  FeatureCache cache;
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
    if (line_no == 1) {
      cache.layout_version = j.value("layout_version", 0);
      if (cache.layout_version != kFeatureLayoutVersion) {
        throw ValidationError("feature cache layout version " +
                              std::to_string(cache.layout_version) +
                              " unsupported");
      }
      const auto& m = j.at("mask");
      if (!m.is_array() || m.size() != static_cast<std::size_t>(kFeatureDim)) {
        throw ValidationError("feature cache header has a bad mask");
      }
      for (int i = 0; i < kFeatureDim; ++i) cache.mask[i] = m[i].get<int>() != 0;
      continue;
    }
    FeatureSequence seq;
    seq.trace_id = j.at("id").get<std::string>();
    seq.label = j.at("label").get<int>();
    const auto& rows = j.at("features");
    seq.rows.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
    Eigen::Index t = 0;
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != static_cast<std::size_t>(kFeatureDim)) {
        throw ValidationError("feature cache record '" + seq.trace_id +
                              "' has a row of wrong width");
      }
      for (int c = 0; c < kFeatureDim; ++c) seq.rows(t, c) = row[c].get<double>();
      ++t;
    }
    cache.sequences.push_back(std::move(seq));
  }
  if (line_no == 0) {
    throw ValidationError("feature cache missing header: " + path.string());
  }
  return cache;
}

}  // namespace halt
