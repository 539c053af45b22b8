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
#include "robcal/kernels.hpp"
#include "robcal/model.hpp"
#include "robcal/optimize.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace robcal {

/// Simulation runs used to train a surrogate.
///
/// Scalar case: inputs hold (x, theta) per run and outputs have one column.
/// Vector case: inputs hold theta per run and each output column is one coordinate
/// (for instance one time point) of the simulator output.
struct EmulatorDesign {
  Matrix inputs;              // D x p
  Matrix outputs;             // D x k
  bool nugget = false;        // estimate a nugget; otherwise it is fixed at zero
  std::vector<int> loc_index;  // 1-based output coordinates matching the field inputs (vector case)
  Matrix coordinate_inputs;    // optional k x p_x observable input of each output coordinate (vector case)

  int runs() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
  int coordinates() const { return static_cast<int>(outputs.cols()); }
  void validate() const;
};

enum class EmulatorKind { Scalar, Vector };

struct EmulatorFitOptions {
  int restarts = 3;
  std::uint64_t seed = 1;
  LbfgsOptions optimizer;
};

/// Gaussian-process surrogate conditioned on simulation runs with a constant mean per coordinate.
class FittedEmulator {
 public:
  FittedEmulator() = default;

  /// Conditions on `design` at fixed hyperparameters (no optimization).
  static FittedEmulator condition(EmulatorDesign design, EmulatorKind kind, const RangeParams& range, double eta);

  EmulatorKind kind() const { return kind_; }
  const EmulatorDesign& design() const { return design_; }
  const KernelSpec& kernel() const { return kernel_; }
  const RangeParams& range() const { return range_; }
  double eta() const { return eta_; }
  /// Per-coordinate constant mean and variance estimates.
  const Vector& mean() const { return mean_; }
  const Vector& variance() const { return variance_; }
  double log_marginal_posterior() const { return log_post_; }
  double jitter() const { return chol_.jitter; }

  /// Full output vector at one input (length k).
  Vector predict(const Eigen::Ref<const Vector>& input) const;
  /// Selected coordinates only (0-based), at O(D |coordinates|) cost after the kernel vector.
  Vector predict(const Eigen::Ref<const Vector>& input, const std::vector<int>& coordinates) const;
  /// Predictive variance per coordinate at one input (noise-free surrogate).
  Vector predict_variance(const Eigen::Ref<const Vector>& input) const;
  /// True when the input lies outside the bounding box of the training inputs.
  bool extrapolating(const Eigen::Ref<const Vector>& input) const;

 private:
  EmulatorKind kind_ = EmulatorKind::Vector;
  EmulatorDesign design_;
  KernelSpec kernel_;
  RangeParams range_;
  double eta_ = 0.0;
  JitteredCholesky chol_;
  Vector mean_;
  Vector variance_;
  Matrix weights_;    // Rtilde^{-1} (Y - 1 mean^T)
  Vector rinv_one_;   // Rtilde^{-1} 1
  double one_rinv_one_ = 0.0;
  double log_post_ = 0.0;
};

/// Constant-mean surrogate for scalar outputs with inputs (x, theta).
FittedEmulator fit_scalar(const EmulatorDesign& design, const EmulatorFitOptions& options = {});

/// Parallel partial surrogate: one correlation over inputs shared by all k output coordinates.
FittedEmulator fit_ppgasp(const EmulatorDesign& design, const EmulatorFitOptions& options = {});

struct EmulatorPrediction {
  Vector mean;
  Vector variance;
  bool extrapolation = false;
};

/// Prediction at one input. For the vector kind `loc_index` (1-based) selects coordinates.
EmulatorPrediction emu_predict(const FittedEmulator& emulator, const Eigen::Ref<const Vector>& input,
                               const std::vector<int>& loc_index = {});

/// Log marginal posterior of (log beta, log eta) used for fitting; log eta is ignored without a nugget.
double emulator_log_posterior(const EmulatorDesign& design, const Vector& log_beta, double log_eta,
                              Vector* gradient = nullptr);

/// Replaces the simulator of `problem` by the surrogate's predictive mean.
/// Vector kind: an input row x reads the coordinate whose coordinate_inputs row equals x; without
/// coordinate_inputs, field input i reads coordinate loc_index[i].
/// Scalar kind: each field input x_i is evaluated at (x_i, theta).
CalibrationProblem bind_emulator(CalibrationProblem problem, const FittedEmulator& emulator);

void save_emulator(const FittedEmulator& emulator, const std::string& path);
FittedEmulator load_emulator(const std::string& path);
std::string emulator_to_json(const FittedEmulator& emulator);
FittedEmulator emulator_from_json(const std::string& text);

}  // namespace robcal
