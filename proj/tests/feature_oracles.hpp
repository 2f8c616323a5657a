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

// Test-only brute-force references in extended precision. These deliberately
// avoid the max-subtraction trick and any code sharing with the library path
// they check.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "halt/rng.hpp"
#include "halt/trace.hpp"

namespace halt::testing {

inline std::array<long double, kTopK> oracle_trunc_softmax(
    const LogProbStep& step) {
  // Naive exp-normalize; long double headroom absorbs the missing shift for
  // the value ranges random_step produces.
  std::array<long double, kTopK> probs{};
  long double sum = 0.0L;
  for (int i = 0; i < kTopK; ++i) {
    probs[static_cast<std::size_t>(i)] =
        expl(static_cast<long double>(step.values[static_cast<std::size_t>(i)]));
    sum += probs[static_cast<std::size_t>(i)];
  }
  for (auto& p : probs) p /= sum;
  return probs;
}

inline long double oracle_avg_logp(const LogProbStep& step) {
  long double sum = 0.0L;
  for (double v : step.values) sum += static_cast<long double>(v);
  return sum / static_cast<long double>(kTopK);
}

inline long double oracle_entropy_overall(const LogProbStep& step) {
  const auto probs = oracle_trunc_softmax(step);
  long double h = 0.0L;
  for (long double p : probs) {
    if (p > 0.0L) h -= p * logl(p);
  }
  return h;
}

inline long double oracle_entropy_alts(const LogProbStep& step) {
  const auto probs = oracle_trunc_softmax(step);
  long double alt_mass = 0.0L;
  for (int i = 1; i < kTopK; ++i) alt_mass += probs[static_cast<std::size_t>(i)];
  if (alt_mass < 1e-300L) return 0.0L;
  long double h = 0.0L;
  for (int i = 1; i < kTopK; ++i) {
    const long double q = probs[static_cast<std::size_t>(i)] / alt_mass;
    if (q > 0.0L) h -= q * logl(q);
  }
  return h;
}

inline long double oracle_decision_entropy(const LogProbStep& step) {
  long double best_alt = static_cast<long double>(step.values[1]);
  for (int i = 2; i < kTopK; ++i) {
    best_alt = std::max(best_alt,
                        static_cast<long double>(step.values[static_cast<std::size_t>(i)]));
  }
  const long double ec = expl(static_cast<long double>(step.values[0]));
  const long double ea = expl(best_alt);
  const long double pc = ec / (ec + ea);
  long double h = 0.0L;
  if (pc > 0.0L) h -= pc * logl(pc);
  if (pc < 1.0L) h -= (1.0L - pc) * logl(1.0L - pc);
  return h;
}

// Valid random step: selected log-prob anywhere in range, alternatives
// sorted non-increasing, everything <= 0.
inline LogProbStep random_step(Rng& rng) {
  LogProbStep step;
  step.values[0] = -rng.uniform(0.0, 8.0);
  double v = -rng.uniform(0.01, 2.0);
  for (int i = 1; i < kTopK; ++i) {
    step.values[static_cast<std::size_t>(i)] = v;
    v -= rng.uniform(0.0, 2.0);
  }
  return step;
}

// Step whose entries are true log-probabilities of one distribution over a
// 32-symbol support (exp-sum <= 1), selected token within the top 6.
inline LogProbStep random_distribution_step(Rng& rng) {
  constexpr int kSupport = 32;
  std::array<double, kSupport> weights;
  double sum = 0.0;
  for (auto& w : weights) {
    w = -std::log(1.0 - rng.uniform());  // Exp(1) draws
    sum += w;
  }
  for (auto& w : weights) w /= sum;
  std::sort(weights.begin(), weights.end(), std::greater<double>());

  const int selected = static_cast<int>(rng.uniform_int(6));
  LogProbStep step;
  step.values[0] = std::log(weights[static_cast<std::size_t>(selected)]);
  int out = 1;
  for (int i = 0; i < kTopK && out < kTopK; ++i) {
    if (i == selected) continue;
    step.values[static_cast<std::size_t>(out++)] =
        std::log(weights[static_cast<std::size_t>(i)]);
  }
  return step;
}

}  // namespace halt::testing
