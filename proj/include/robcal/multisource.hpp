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

#include <optional>
#include <vector>

namespace robcal {

/// One data source. Without measurement bias, `discrepancy`/`kernel` describe the source's own
/// discrepancy; with measurement bias they describe the source-specific bias process.
struct SourceSpec {
  Matrix design;
  Observations observations;
  Simulator simulator;
  std::vector<int> index_theta;  // 1-based positions of this simulator's parameters in the global theta
  std::optional<Matrix> trend;
  Vector output_weights;
  Discrepancy discrepancy = Discrepancy::GaSP;
  KernelSpec kernel;
  std::optional<double> lambda_z;
};

struct MultiSourceProblem {
  std::vector<SourceSpec> sources;
  Matrix theta_range;  // p_theta x 2 for the global theta
  bool measurement_bias = false;
  std::optional<Matrix> shared_design;  // support of the shared discrepancy; required with measurement bias
  Discrepancy discrepancy = Discrepancy::SGaSP;  // shared discrepancy type (measurement bias only)
  KernelSpec kernel;                             // shared discrepancy kernel
  std::optional<double> lambda_z;                // shared scaling; automatic when empty

  int k() const { return static_cast<int>(sources.size()); }
  int p_theta() const { return static_cast<int>(theta_range.rows()); }
  void validate() const;

  /// Sub-vector of the global theta seen by source l.
  Vector source_theta(int l, const Vector& theta) const;
  /// Source l as a standalone single-source problem over its own theta coordinates.
  CalibrationProblem source_problem(int l) const;
};

/// Adds one source with matern_5_2 defaults; index_theta empty means every coordinate.
SourceSpec make_source(Matrix design, Observations observations, Simulator simulator,
                       std::vector<int> index_theta = {}, Discrepancy discrepancy = Discrepancy::GaSP);

struct SourceKernelParams {
  RangeParams range;
  double eta = 1.0;
};

/// Sum of per-source profile log-likelihoods (sources independent given theta).
double ms_loglik_no_bias(const MultiSourceProblem& problem, const Vector& theta,
                         const std::vector<SourceKernelParams>& params);

struct MsMcmcConfig {
  int samples = 10000;
  int burn_in = 2000;
  int thinning = 1;
  Vector sd_theta;   // fractions of the theta range; default 0.05
  double sd_kernel = 0.25;  // log-scale sd of per-source and shared kernel proposals
  std::optional<Vector> initial_theta;
  std::uint64_t seed = 1;
  void validate(int p_theta) const;
};

struct MsSourceChain {
  Matrix log_params;  // rows x (p_x + 1): log beta, log eta; no columns without a kernel
  Vector sigma2_0;
  Matrix theta_m;     // rows x q
  Vector lambda_z;    // S-GaSP only
};

struct MsPosterior {
  bool measurement_bias = false;
  Discrepancy discrepancy = Discrepancy::None;  // shared discrepancy
  int iterations = 0;
  Matrix theta;                       // rows x p_theta
  std::vector<MsSourceChain> sources;
  Matrix shared_log_beta;             // rows x p_x (measurement bias only)
  Vector shared_sigma2;               // variance of the shared discrepancy
  Vector shared_lambda_z;             // S-GaSP only
  double shared_eta = 0.0;            // noise-to-signal ratio frozen at the end of burn-in
  Matrix delta;                       // rows x n_shared draws of the shared discrepancy at shared_design
  std::vector<int> accept_theta;
  std::vector<int> accept_shared;

  int rows() const { return static_cast<int>(theta.rows()); }
  double theta_acceptance_rate() const;
};

/// Metropolis-within-Gibbs over the global theta and every source; handles both model variants.
MsPosterior ms_mcmc(const MultiSourceProblem& problem, const MsMcmcConfig& config);
/// Measurement-bias variant; the shared discrepancy is drawn explicitly at shared_design.
MsPosterior ms_mcmc_bias(const MultiSourceProblem& problem, const MsMcmcConfig& config);

/// Shared-discrepancy full conditional: prior N(0, K) observed through k sources with
/// residuals z_l = delta + e_l, e_l ~ N(0, C_l). One Matheron-style draw.
Vector draw_shared_discrepancy(const Matrix& K, const std::vector<Vector>& residuals,
                               const std::vector<Matrix>& noise_covariances, Rng& rng);

/// Single-source problem on the across-source average of the observations.
CalibrationProblem stack_sources(const MultiSourceProblem& problem, Discrepancy discrepancy);

struct MsPrediction {
  std::vector<Vector> model;    // per source: f_l + trend
  std::vector<Vector> reality;  // per source: model + discrepancy (shared or own)
  Vector discrepancy;           // shared discrepancy (measurement bias only)
  std::vector<Vector> bias;     // per source measurement bias (measurement bias only)
};

/// Posterior averages of conditional means at common testing inputs; X_testing per source with a trend.
MsPrediction ms_predict(const MultiSourceProblem& problem, const MsPosterior& posterior, const Matrix& testing_input,
                        const std::vector<Matrix>& X_testing = {}, int max_draws = 0);

}  // namespace robcal
