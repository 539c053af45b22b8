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
#include "robcal/model.hpp"
#include "robcal/optimize.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace robcal {

using Rng = std::mt19937_64;

double standard_normal(Rng& rng);
/// Gamma draw in the shape-rate convention (mean shape / rate).
double gamma_shape_rate(double shape, double rate, Rng& rng);

/// Jointly robust prior on (beta, eta): a log(t) - b t with t = sum_l C_l beta_l + eta.
struct JrPriorParams {
  double a = -0.5;
  double b = 1.0;
  Vector C;

  /// a = 1/2 - p_x, b = 1, C_l = n^{-1/p_x} |max x_l - min x_l|.
  static JrPriorParams defaults(const Matrix& design);
};

double jr_log_prior(const Vector& beta, double eta, const JrPriorParams& params);

/// JR prior density expressed in (log beta, log eta) coordinates, i.e. including the log Jacobian.
/// Without a nugget the last coordinate is absent and eta = 0.
double jr_log_prior_log_coords(const Vector& log_params, const JrPriorParams& params, bool with_nugget = true);

/// Draws sigma_0^{-2} ~ Gamma(count / 2, quadratic_form / 2) and returns sigma_0^2.
double gibbs_sigma0(double quadratic_form, double count, Rng& rng);
/// Convenience form: quadratic form r^T C^{-1} r from a factored covariance.
double gibbs_sigma0(const Vector& residual, const JitteredCholesky& covariance, Rng& rng);

/// Draws theta_m ~ N(GLS estimate, sigma2_0 (H^T C^{-1} H)^{-1}) for residual y - f.
Vector gibbs_trend(const Vector& residual, const JitteredCholesky& covariance, const Matrix& H, double sigma2_0,
                   Rng& rng);

struct MetropolisStep {
  Vector value;
  double loglik = 0.0;  // likelihood part only, at `value`
  bool accepted = false;
};

using LogLikelihood = std::function<double(const Vector&)>;

/// Random-walk block update of theta with a uniform prior on theta_range; sd is absolute per coordinate.
MetropolisStep metropolis_theta_block(const Vector& theta, double current_loglik, const LogLikelihood& loglik,
                                      const Matrix& theta_range, const Vector& sd, Rng& rng);

/// Random-walk block update of (log beta, log eta) targeting likelihood x JR prior in log coordinates.
MetropolisStep metropolis_range_nugget(const Vector& log_params, double current_loglik, const LogLikelihood& loglik,
                                       const JrPriorParams& prior, const Vector& sd, Rng& rng,
                                       bool with_nugget = true);

struct McmcConfig {
  int samples = 10000;   // S, including burn-in
  int burn_in = 2000;    // S_0
  int thinning = 1;
  Vector sd_proposal;    // p_theta fractions of range, then p_x + 1 log-scale sds; empty for defaults
  std::optional<Vector> initial_theta;
  std::uint64_t seed = 1;
  std::optional<double> jr_a;
  std::optional<double> jr_b;

  /// Fills defaults (0.05 per theta, 0.25 per kernel coordinate) and checks consistency.
  Vector resolved_sd(int p_theta, int p_x) const;
  void validate() const;
};

/// Retained draws; columns are theta, [log beta, log eta], sigma2_0, theta_m.
struct PosteriorSamples {
  Discrepancy discrepancy = Discrepancy::None;
  int p_theta = 0;
  int p_x = 0;
  int q = 0;
  int iterations = 0;
  Matrix draws;
  std::vector<std::string> columns;
  std::vector<int> accept_theta;   // iteration indices with an accepted theta proposal
  std::vector<int> accept_kernel;  // same for (log beta, log eta)
  Vector lambda_z;                 // per retained draw (S-GaSP only)
  double max_jitter = 0.0;         // largest diagonal jitter in a retained state's factorization

  int rows() const { return static_cast<int>(draws.rows()); }
  bool has_kernel() const { return discrepancy != Discrepancy::None; }
  Vector theta(int row) const { return draws.row(row).head(p_theta).transpose(); }
  Vector log_beta(int row) const;
  double log_eta(int row) const;
  double sigma2_0(int row) const;
  Vector theta_m(int row) const;
  double theta_acceptance_rate() const;
  double kernel_acceptance_rate() const;
};

std::vector<std::string> posterior_columns(Discrepancy discrepancy, int p_theta, int p_x, int q);

/// Picks a starting theta: the best of a small Latin-hypercube set under the no-discrepancy profile.
Vector default_initial_theta(const CalibrationProblem& problem, Rng& rng, int candidates = 20);

PosteriorSamples run_mcmc(const CalibrationProblem& problem, const McmcConfig& config);

struct MleConfig {
  int restarts = 3;
  std::vector<Vector> initial_values;  // theta only, or full (theta, log beta, log eta)
  std::uint64_t seed = 1;
  LbfgsOptions optimizer;
};

struct OptimizerTrace {
  Vector start;
  Vector end;
  double start_loglik = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool failed = false;
  std::string message;
};

struct MleResult {
  Discrepancy discrepancy = Discrepancy::None;
  Vector theta;
  RangeParams range;
  double eta = 0.0;
  double lambda_z = 0.0;
  Vector theta_m;
  double sigma2_0 = 0.0;
  double loglik = 0.0;
  std::vector<OptimizerTrace> traces;

  /// Parameter vector in optimizer coordinates (theta, log beta, log eta).
  Vector packed() const;
};

/// Box used for (log beta, log eta) during optimization.
void kernel_bounds(const CalibrationProblem& problem, Vector& lower, Vector& upper);

MleResult run_mle(const CalibrationProblem& problem, const MleConfig& config = {});

}  // namespace robcal
