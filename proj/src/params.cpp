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

#include "halt/params.hpp"

#include "halt/errors.hpp"

namespace halt {

Eigen::MatrixXd& ParamSet::add(const std::string& name, Eigen::Index rows,
                               Eigen::Index cols) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = items_.size();
  items_.push_back({name, Eigen::MatrixXd::Zero(rows, cols)});
  return items_.back().value;
}

Eigen::MatrixXd& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second].value;
}

const Eigen::MatrixXd& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return items_[it->second].value;
}

bool ParamSet::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

std::size_t ParamSet::total_coefficients() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += static_cast<std::size_t>(item.value.size());
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& item : items_) {
    out.add(item.name, item.value.rows(), item.value.cols());
  }
  return out;
}

void ParamSet::set_zero() {
  for (auto& item : items_) item.value.setZero();
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (other.items_.size() != items_.size()) {
    throw ConfigError("ParamSet schema mismatch in add_scaled");
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    items_[i].value += scale * other.items_[i].value;
  }
}

double ParamSet::squared_l2_norm() const {
  double sum = 0.0;
  for (const auto& item : items_) sum += item.value.squaredNorm();
  return sum;
}

void ParamSet::scale(double factor) {
  for (auto& item : items_) item.value *= factor;
}

bool ParamSet::all_finite() const {
  for (const auto& item : items_) {
    if (!item.value.allFinite()) return false;
  }
  return true;
}

}  // namespace halt
