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

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace robcal {

enum class Discrepancy { None, GaSP, SGaSP };

Discrepancy parse_discrepancy(const std::string& name);
std::string to_string(Discrepancy type);

/// Computer model evaluated at every row of `inputs` for one parameter vector.
using ModelFunction = std::function<Vector(const Matrix& inputs, const Vector& theta)>;
/// Jacobian d f / d theta, one row per input, one column per calibration parameter.
using ModelJacobian = std::function<Matrix(const Matrix& inputs, const Vector& theta)>;

struct Simulator {
  std::string id;
  ModelFunction evaluate;
  ModelJacobian jacobian;  // optional; numeric central differences otherwise

  Vector operator()(const Matrix& inputs, const Vector& theta) const { return evaluate(inputs, theta); }
};

/// Field observations at n inputs; each input carries k_i >= 1 replicates.
struct Observations {
  std::vector<Vector> replicates;

  static Observations from_vector(const Vector& y);
  /// One row per input, one column per replicate.
  static Observations from_matrix(const Matrix& y);
  static Observations from_ragged(std::vector<Vector> y);

  int size() const { return static_cast<int>(replicates.size()); }
  int total() const;
  bool has_replicates() const;
};

/// Sufficient statistics of replicated observations.
struct ReplicateStats {
  Vector mean;           // per-input replicate mean
  Vector counts;         // k_i
  Vector lambda_diag;    // 1 / (w_i k_i)
  double s_f2 = 0.0;     // sum_i w_i sum_j (y_ij - mean_i)^2
  int total = 0;         // sum_i k_i
  /// -1/2 (log|Lambda_full| - log|Lambda-tilde|): makes the aggregated likelihood equal the
  /// likelihood of all N observations (zero without replicates).
  double log_det_offset = 0.0;
};

ReplicateStats replicate_stats(const Observations& observations, const Vector& weights);

struct CalibrationProblem {
  Matrix design;                // n x p_x observable inputs
  Observations observations;
  std::optional<Matrix> trend;  // n x q mean basis H
  Matrix theta_range;           // p_theta x 2, lower / upper
  Vector output_weights;        // w_i; empty means all ones
  Discrepancy discrepancy = Discrepancy::SGaSP;
  KernelSpec kernel;
  Simulator simulator;
  std::optional<double> lambda_z;  // fixed scaling; automatic when empty

  int n() const { return static_cast<int>(design.rows()); }
  int p_x() const { return static_cast<int>(design.cols()); }
  int p_theta() const { return static_cast<int>(theta_range.rows()); }
  int q() const { return trend ? static_cast<int>(trend->cols()) : 0; }

  Vector weights() const;
  /// Per-coordinate extent of the design, used for lambda_z and the JR prior.
  Vector domain_lengths() const;
  bool in_range(const Vector& theta) const;
  void validate() const;
};

/// Builds a problem with defaults (matern_5_2 kernel across all inputs, S-GaSP) for quick use.
CalibrationProblem make_problem(Matrix design, Observations observations, Matrix theta_range, Simulator simulator,
                                Discrepancy discrepancy = Discrepancy::SGaSP, std::optional<Matrix> trend = std::nullopt);

struct ModelParams {
  Vector theta;
  Vector theta_m;
  double sigma2_0 = 1.0;
  RangeParams range;
  double eta = 1.0;

  double sigma2() const { return sigma2_0 / eta; }
};

/// lambda_z = (eta / n * ||gamma / L||)^{-1/2}.
double default_lambda_z(const Vector& gamma, double eta, int n, const Vector& domain_lengths);

/// Covariance of the aggregated field data divided by sigma_0^2 for fixed kernel parameters.
struct FieldCovariance {
  Discrepancy discrepancy = Discrepancy::None;
  RangeParams range;
  double eta = 1.0;
  double lambda_z = 0.0;                 // only for S-GaSP
  Matrix R;                              // raw correlation (empty without discrepancy)
  std::optional<ScaledCorrelation> scaled;
  Matrix Rtilde;                         // R_eff / eta + Lambda-tilde
  JitteredCholesky chol;

  /// R or R_z, whichever enters the discrepancy covariance.
  const Matrix& effective_R() const { return scaled ? scaled->Rz : R; }
};

/// Resolves the scaling parameter for the given kernel parameters (fixed value or default formula).
double resolve_lambda_z(const CalibrationProblem& problem, const RangeParams& range, double eta);

FieldCovariance build_field_covariance(const CalibrationProblem& problem, const ReplicateStats& stats,
                                       const RangeParams& range, double eta);
/// Lower-level variant with an explicit lambda_z (ignored unless S-GaSP).
FieldCovariance build_field_covariance(const Matrix& design, const KernelSpec& kernel, Discrepancy discrepancy,
                                       const Vector& lambda_diag, const RangeParams& range, double eta,
                                       double lambda_z);

/// (H^T Lambda^{-1} H)^{-1} H^T Lambda^{-1} r, with Lambda^{-1} = diag(weights).
Vector trend_lse(const Matrix& H, const Vector& weights, const Vector& residual);

/// Generalized least squares for the trend and the profiled quadratic form.
struct ProfileWorkspace {
  Vector residual;      // ybar - f (before removing the trend)
  Vector theta_m;       // GLS trend estimate (empty without trend)
  Vector v;             // residual - H theta_m
  Vector u;             // Rtilde^{-1} v  ( = Q (ybar - f) )
  double s_k2 = 0.0;    // v^T Rtilde^{-1} v
  Eigen::LLT<Matrix> trend_precision;  // H^T Rtilde^{-1} H
  Matrix rinv_h;        // Rtilde^{-1} H
};

ProfileWorkspace profile_workspace(const FieldCovariance& cov, const std::optional<Matrix>& H, const Vector& residual);

/// Q = Rtilde^{-1} - Rtilde^{-1} H (H^T Rtilde^{-1} H)^{-1} H^T Rtilde^{-1} (Rtilde^{-1} when H is absent).
Matrix projection_Q(const FieldCovariance& cov, const ProfileWorkspace& ws);

struct TrendSigmaEstimate {
  Vector theta_m;
  double sigma2_0 = 0.0;
};

/// MLE of the trend and noise variance for a fixed covariance: sigma2_0 = (S_K^2 + S_f^2) / N.
TrendSigmaEstimate gasp_trend_sigma_mle(const FieldCovariance& cov, const std::optional<Matrix>& H,
                                        const Vector& residual, double s_f2 = 0.0, int total = -1);

struct ProfileValue {
  double loglik = 0.0;
  bool degenerate = false;  // zero residual sum of squares; loglik holds kDegenerateLoglik
  double sigma2_0 = 0.0;
  Vector theta_m;
};

inline constexpr double kDegenerateLoglik = 1e300;

/// -(N/2) log(sum_i w_i sum_j (y_ij - f_i - h_i theta_m)^2); theta_m defaults to the weighted LSE.
ProfileValue no_disc_profile_loglik(const CalibrationProblem& problem, const Vector& theta,
                                    const std::optional<Vector>& theta_m = std::nullopt);

/// -1/2 log|Rtilde| - (N/2) log(S_K^2 + S_f^2) for the problem's discrepancy type (replicates included).
ProfileValue profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                            double eta);

double gasp_profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                           double eta);
double sgasp_profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                            double eta, double lambda_z);
double replicate_profile_loglik(const CalibrationProblem& problem, const ReplicateStats& stats, const Vector& theta,
                                const RangeParams& range, double eta, Discrepancy type);

/// Simulator Jacobian, analytic when the simulator provides one.
Matrix model_jacobian(const CalibrationProblem& problem, const Matrix& inputs, const Vector& theta);

/// Gradient of profile_loglik over (theta, log beta, log eta); theta only without a discrepancy.
Vector profile_grad(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range, double eta);

}  // namespace robcal
