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

#include "robcal/inference.hpp"
#include "robcal/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace robcal {

/// Where and how to predict.
struct PredictionRequest {
  Matrix testing_input;              // m x p_x
  std::optional<Matrix> X_testing;   // m x q trend basis; required iff the problem has a trend
  Vector testing_weights;            // w*; empty means ones
  std::vector<double> interval_probs;  // ascending in (0, 1); empty for no intervals
  bool interval_data = false;        // include observation noise in the intervals
  std::uint64_t seed = 1;            // predictive draws of the posterior path
  int max_draws = 0;                 // posterior rows used, evenly spaced; 0 uses every row
};

struct PredictionResult {
  Vector math_model_mean_no_trend;  // f^M only
  Vector math_model_mean;           // f^M + trend
  Vector mean;                      // f^M + trend + discrepancy
  Matrix bounds;                    // m x |interval_probs|
  std::vector<double> interval_probs;
  bool interval_data = false;
  Vector testing_weights;
  int used_draws = 0;
  int skipped_draws = 0;            // posterior rows whose simulator evaluation failed
};

/// Empirical quantiles per column of `draws` (rows are draws), linear interpolation between order
/// statistics at position (N - 1) p (the "type 7" rule). Returns columns x probs.
Matrix interval_quantiles(const Matrix& draws, const std::vector<double>& probs);

/// Single quantile with the same convention.
double quantile_type7(std::vector<double> values, double p);

/// Gaussian predictive distribution at point estimates.
PredictionResult predict_plugin(const CalibrationProblem& problem, const MleResult& fit,
                                const PredictionRequest& request);

/// Posterior average of per-draw conditional means; intervals from per-draw Gaussian predictive draws.
PredictionResult predict_posterior(const CalibrationProblem& problem, const PosteriorSamples& samples,
                                   const PredictionRequest& request);

/// Conditional prediction for one fixed parameter set.
struct ConditionalPrediction {
  Vector model;         // f^M(x*, theta)
  Vector trend;         // X* theta_m (zeros without trend)
  Vector discrepancy;   // conditional mean of delta(x*)
  Vector reality_var;   // variance of f + trend + delta at x*
  Vector noise_var;     // sigma_0^2 / w*
};

/// Discrepancy at `xs` given the field residual (data minus model and trend) under `cov`.
/// Variances are in units of sigma_0^2.
struct DiscrepancyConditional {
  Vector mean;
  Vector variance;
};

DiscrepancyConditional discrepancy_conditional(const Matrix& design, const KernelSpec& kernel,
                                              const FieldCovariance& cov, const Vector& residual, const Matrix& xs);

ConditionalPrediction predict_conditional(const CalibrationProblem& problem, const ModelParams& params,
                                          double lambda_z, const PredictionRequest& request);

}  // namespace robcal
