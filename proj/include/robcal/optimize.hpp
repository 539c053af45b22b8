/*
 * Copyright 2026 The robcal Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "robcal/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace robcal {

/// Objective returning f(x) and writing its gradient.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int max_iterations = 200;
  int memory = 7;
  double gradient_tolerance = 1e-7;  // on the projected gradient, infinity norm
  double relative_tolerance = 1e-12;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Limited-memory BFGS minimizer with box constraints handled by projection.
/// Non-finite objective values are treated as infeasible and cause backtracking.
LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const Vector& lower, const Vector& upper,
                           const LbfgsOptions& options = {});

}  // namespace robcal
