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

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace halt {

// Ordered collection of named dense arrays. Iteration order is creation
// order, which fixes the summation order for global norms and makes
// serialization layout stable.
class ParamSet {
 public:
  Eigen::MatrixXd& add(const std::string& name, Eigen::Index rows,
                       Eigen::Index cols);

  Eigen::MatrixXd& at(const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return items_.size(); }
  std::size_t total_coefficients() const;

  struct Item {
    std::string name;
    Eigen::MatrixXd value;
  };

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }

  // Zero-filled copy with the same names and shapes.
  ParamSet zeros_like() const;

  void set_zero();

  // Coefficient-wise accumulate: this += other (same schema required).
  void add_scaled(const ParamSet& other, double scale);

  double squared_l2_norm() const;
  void scale(double factor);
  bool all_finite() const;

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace halt
