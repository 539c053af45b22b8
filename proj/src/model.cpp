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

#include "robcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace robcal {

Discrepancy parse_discrepancy(const std::string& name) {
  if (name == "no-discrepancy" || name == "none") return Discrepancy::None;
  if (name == "GaSP" || name == "gasp") return Discrepancy::GaSP;
  if (name == "S-GaSP" || name == "sgasp") return Discrepancy::SGaSP;
  throw InvalidArgument("unknown discrepancy type '" + name + "'");
}

std::string to_string(Discrepancy type) {
  switch (type) {
    case Discrepancy::None: return "no-discrepancy";
    case Discrepancy::GaSP: return "GaSP";
    case Discrepancy::SGaSP: return "S-GaSP";
  }
  return "unknown";
}

Observations Observations::from_vector(const Vector& y) {
  Observations out;
  out.replicates.reserve(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) out.replicates.push_back(Vector::Constant(1, y[i]));
  return out;
}

Observations Observations::from_matrix(const Matrix& y) {
  require(y.cols() >= 1, "replicate matrix needs at least one column");
  Observations out;
  for (Eigen::Index i = 0; i < y.rows(); ++i) out.replicates.push_back(y.row(i).transpose());
  return out;
}

Observations Observations::from_ragged(std::vector<Vector> y) {
  for (const auto& reps : y) require(reps.size() >= 1, "every input needs at least one replicate");
  return Observations{std::move(y)};
}

int Observations::total() const {
  int total = 0;
  for (const auto& reps : replicates) total += static_cast<int>(reps.size());
  return total;
}

bool Observations::has_replicates() const {
  for (const auto& reps : replicates)
    if (reps.size() > 1) return true;
  return false;
}

ReplicateStats replicate_stats(const Observations& observations, const Vector& weights) {
  const int n = observations.size();
  require(n >= 1, "empty replicate list");
  require(weights.size() == 0 || weights.size() == n, "weights do not match observations");
  ReplicateStats stats;
  stats.mean.resize(n);
  stats.counts.resize(n);
  stats.lambda_diag.resize(n);
  for (int i = 0; i < n; ++i) {
    const Vector& reps = observations.replicates[static_cast<std::size_t>(i)];
    require(reps.size() >= 1, "empty replicate list at input " + std::to_string(i));
    const double w = weights.size() ? weights[i] : 1.0;
    require(w > 0.0, "output weights must be positive");
    const double k = static_cast<double>(reps.size());
    const double mean = reps.mean();
    stats.mean[i] = mean;
    stats.counts[i] = k;
    stats.lambda_diag[i] = 1.0 / (w * k);
    stats.s_f2 += w * (reps.array() - mean).square().sum();
    stats.total += static_cast<int>(reps.size());
    stats.log_det_offset -= 0.5 * (std::log(k) - (k - 1.0) * std::log(w));
  }
  return stats;
}

Vector CalibrationProblem::weights() const {
  if (output_weights.size() == 0) return Vector::Ones(n());
  return output_weights;
}

Vector CalibrationProblem::domain_lengths() const {
  Vector lengths(p_x());
  for (int l = 0; l < p_x(); ++l) lengths[l] = design.col(l).maxCoeff() - design.col(l).minCoeff();
  return lengths;
}

bool CalibrationProblem::in_range(const Vector& theta) const {
  if (theta.size() != p_theta()) return false;
  for (int i = 0; i < p_theta(); ++i)
    if (!(theta[i] >= theta_range(i, 0) && theta[i] <= theta_range(i, 1))) return false;
  return true;
}

void CalibrationProblem::validate() const {
  require(n() >= 1, "design needs at least one row");
  require(design.allFinite(), "design must be finite");
  require(observations.size() == n(), "observations must have one entry per design row");
  for (const auto& reps : observations.replicates) {
    require(reps.size() >= 1, "every input needs at least one observation");
    require(reps.allFinite(), "observations must be finite");
  }
  require(theta_range.cols() == 2 && theta_range.rows() >= 1, "theta_range must be a p_theta x 2 matrix");
  for (int i = 0; i < p_theta(); ++i)
    require(theta_range(i, 0) < theta_range(i, 1), "theta_range row " + std::to_string(i) + " is not ordered");
  if (output_weights.size()) {
    require(output_weights.size() == n(), "output_weights must have one entry per design row");
    require((output_weights.array() > 0.0).all(), "output_weights must be positive");
  }
  if (trend) {
    require(trend->rows() == n(), "trend basis must have one row per design row");
    require(trend->cols() >= 1 && trend->cols() < n(), "trend basis needs 1 <= q < n columns");
    Eigen::ColPivHouseholderQR<Matrix> qr(*trend);
    require(qr.rank() == trend->cols(), "trend basis is rank deficient");
  }
  require(static_cast<bool>(simulator.evaluate), "simulator binding is missing");
  if (discrepancy != Discrepancy::None) {
    kernel.validate();
    require(kernel.dim() == p_x(), "kernel dimension must match the design columns");
  }
  if (lambda_z) require(*lambda_z > 0.0, "lambda_z must be positive");
}

CalibrationProblem make_problem(Matrix design, Observations observations, Matrix theta_range, Simulator simulator,
                                Discrepancy discrepancy, std::optional<Matrix> trend) {
  CalibrationProblem problem;
  const int p_x = static_cast<int>(design.cols());
  problem.design = std::move(design);
  problem.observations = std::move(observations);
  problem.theta_range = std::move(theta_range);
  problem.simulator = std::move(simulator);
  problem.discrepancy = discrepancy;
  problem.trend = std::move(trend);
  problem.kernel = KernelSpec::uniform(KernelFamily::Matern52, std::max(p_x, 1));
  problem.validate();
  return problem;
}

double default_lambda_z(const Vector& gamma, double eta, int n, const Vector& domain_lengths) {
  require(gamma.size() == domain_lengths.size(), "domain lengths do not match range parameters");
  require(n >= 1 && eta > 0.0, "lambda_z needs n >= 1 and eta > 0");
  for (Eigen::Index l = 0; l < domain_lengths.size(); ++l)
    require(domain_lengths[l] > 0.0, "zero domain length in coordinate " + std::to_string(l));
  const double lambda = eta / static_cast<double>(n);
  const double norm = gamma.cwiseQuotient(domain_lengths).norm();
  return 1.0 / std::sqrt(lambda * norm);
}

double resolve_lambda_z(const CalibrationProblem& problem, const RangeParams& range, double eta) {
  if (problem.lambda_z) return *problem.lambda_z;
  return default_lambda_z(range.gamma, eta, problem.n(), problem.domain_lengths());
}

FieldCovariance build_field_covariance(const Matrix& design, const KernelSpec& kernel, Discrepancy discrepancy,
                                       const Vector& lambda_diag, const RangeParams& range, double eta,
                                       double lambda_z) {
  FieldCovariance cov;
  cov.discrepancy = discrepancy;
  cov.range = range;
  cov.eta = eta;
  if (discrepancy == Discrepancy::None) {
    cov.Rtilde = lambda_diag.asDiagonal();
  } else {
    require(eta > 0.0 && std::isfinite(eta), "nugget must be positive and finite");
    cov.R = correlation(design, kernel, range);
    if (discrepancy == Discrepancy::SGaSP) {
      cov.lambda_z = lambda_z;
      cov.scaled = scaled_corr(cov.R, lambda_z);
    }
    cov.Rtilde = cov.effective_R() / eta;
    cov.Rtilde.diagonal() += lambda_diag;
  }
  cov.chol = factor_with_jitter(cov.Rtilde);
  return cov;
}

FieldCovariance build_field_covariance(const CalibrationProblem& problem, const ReplicateStats& stats,
                                       const RangeParams& range, double eta) {
  const double lambda_z =
      problem.discrepancy == Discrepancy::SGaSP ? resolve_lambda_z(problem, range, eta) : 0.0;
  return build_field_covariance(problem.design, problem.kernel, problem.discrepancy, stats.lambda_diag, range, eta,
                                lambda_z);
}

Vector trend_lse(const Matrix& H, const Vector& weights, const Vector& residual) {
  require(H.rows() == residual.size(), "trend basis does not match residual");
  const Vector w = weights.size() ? weights : Vector::Ones(H.rows());
  require(w.size() == H.rows(), "weights do not match trend basis");
  const Vector root = w.cwiseSqrt();
  const Eigen::ColPivHouseholderQR<Matrix> qr(root.asDiagonal() * H);
  if (qr.rank() < H.cols()) throw NumericError("trend basis is rank deficient");
  return qr.solve(root.cwiseProduct(residual));
}

ProfileWorkspace profile_workspace(const FieldCovariance& cov, const std::optional<Matrix>& H, const Vector& residual) {
  ProfileWorkspace ws;
  ws.residual = residual;
  if (H && H->cols() > 0) {
    ws.rinv_h = cov.chol.solve(*H);
    ws.trend_precision.compute(H->transpose() * ws.rinv_h);
    if (ws.trend_precision.info() != Eigen::Success) throw NumericError("singular H^T Rtilde^{-1} H");
    ws.theta_m = ws.trend_precision.solve(ws.rinv_h.transpose() * residual);
    ws.v = residual - *H * ws.theta_m;
  } else {
    ws.v = residual;
  }
  ws.u = cov.chol.solve(ws.v);
  ws.s_k2 = std::max(ws.v.dot(ws.u), 0.0);
  return ws;
}

Matrix projection_Q(const FieldCovariance& cov, const ProfileWorkspace& ws) {
  Matrix Q = cov.chol.inverse();
  if (ws.rinv_h.size() > 0) Q -= ws.rinv_h * ws.trend_precision.solve(ws.rinv_h.transpose());
  return Q;
}

TrendSigmaEstimate gasp_trend_sigma_mle(const FieldCovariance& cov, const std::optional<Matrix>& H,
                                        const Vector& residual, double s_f2, int total) {
  const ProfileWorkspace ws = profile_workspace(cov, H, residual);
  const int count = total > 0 ? total : static_cast<int>(residual.size());
  return {ws.theta_m, (ws.s_k2 + s_f2) / count};
}

ProfileValue no_disc_profile_loglik(const CalibrationProblem& problem, const Vector& theta,
                                    const std::optional<Vector>& theta_m) {
  require(theta.size() == problem.p_theta(), "theta has wrong dimension");
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  const Vector f = problem.simulator(problem.design, theta);
  require(f.size() == problem.n(), "simulator returned the wrong number of outputs");
  Vector residual = stats.mean - f;
  const Vector agg_weights = stats.lambda_diag.cwiseInverse();  // w_i k_i
  ProfileValue out;
  if (problem.trend) {
    out.theta_m = theta_m ? *theta_m : trend_lse(*problem.trend, agg_weights, residual);
    residual -= *problem.trend * out.theta_m;
  }
  const double s0 = agg_weights.dot(residual.cwiseAbs2()) + stats.s_f2;
  const double total = stats.total;
  out.sigma2_0 = s0 / total;
  if (!(s0 > 0.0) || !std::isfinite(s0)) {
    out.degenerate = s0 == 0.0;
    out.loglik = out.degenerate ? kDegenerateLoglik : -std::numeric_limits<double>::infinity();
    return out;
  }
  out.loglik = -0.5 * total * std::log(s0);
  return out;
}

namespace {

ProfileValue profile_from_cov(const FieldCovariance& cov, const ReplicateStats& stats,
                              const std::optional<Matrix>& H, const Vector& f) {
  const ProfileWorkspace ws = profile_workspace(cov, H, stats.mean - f);
  ProfileValue out;
  out.theta_m = ws.theta_m;
  const double s = ws.s_k2 + stats.s_f2;
  out.sigma2_0 = s / stats.total;
  if (!(s > 0.0)) {
    out.degenerate = true;
    out.loglik = kDegenerateLoglik;
    return out;
  }
  out.loglik = -0.5 * cov.chol.log_det() - 0.5 * stats.total * std::log(s) + stats.log_det_offset;
  return out;
}

Vector evaluate_model(const CalibrationProblem& problem, const Vector& theta) {
  require(theta.size() == problem.p_theta(), "theta has wrong dimension");
  Vector f = problem.simulator(problem.design, theta);
  require(f.size() == problem.n(), "simulator returned the wrong number of outputs");
  return f;
}

}  // namespace

ProfileValue profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                            double eta) {
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  const Vector f = evaluate_model(problem, theta);
  const FieldCovariance cov = build_field_covariance(problem, stats, range, eta);
  return profile_from_cov(cov, stats, problem.trend, f);
}

double gasp_profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                           double eta) {
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  return replicate_profile_loglik(problem, stats, theta, range, eta, Discrepancy::GaSP);
}

double sgasp_profile_loglik(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range,
                            double eta, double lambda_z) {
  require(lambda_z > 0.0, "lambda_z must be positive");
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  const Vector f = evaluate_model(problem, theta);
  const FieldCovariance cov = build_field_covariance(problem.design, problem.kernel, Discrepancy::SGaSP,
                                                     stats.lambda_diag, range, eta, lambda_z);
  return profile_from_cov(cov, stats, problem.trend, f).loglik;
}

double replicate_profile_loglik(const CalibrationProblem& problem, const ReplicateStats& stats, const Vector& theta,
                                const RangeParams& range, double eta, Discrepancy type) {
  const Vector f = evaluate_model(problem, theta);
  const double lambda_z = type == Discrepancy::SGaSP ? resolve_lambda_z(problem, range, eta) : 0.0;
  const FieldCovariance cov =
      build_field_covariance(problem.design, problem.kernel, type, stats.lambda_diag, range, eta, lambda_z);
  return profile_from_cov(cov, stats, problem.trend, f).loglik;
}

Matrix model_jacobian(const CalibrationProblem& problem, const Matrix& inputs, const Vector& theta) {
  if (problem.simulator.jacobian) return problem.simulator.jacobian(inputs, theta);
  Matrix J(inputs.rows(), problem.p_theta());
  for (int i = 0; i < problem.p_theta(); ++i) {
    const double h = 1e-4 * (problem.theta_range(i, 1) - problem.theta_range(i, 0));
    Vector plus = theta;
    Vector minus = theta;
    plus[i] += h;
    minus[i] -= h;
    const Vector fp = problem.simulator(inputs, plus);
    const Vector fm = problem.simulator(inputs, minus);
    if (!fp.allFinite() || !fm.allFinite())
      throw NumericError("non-finite simulator output during numeric differentiation");
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

Vector profile_grad(const CalibrationProblem& problem, const Vector& theta, const RangeParams& range, double eta) {
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  const Vector f = evaluate_model(problem, theta);
  const FieldCovariance cov = build_field_covariance(problem, stats, range, eta);
  const ProfileWorkspace ws = profile_workspace(cov, problem.trend, stats.mean - f);
  const double s = ws.s_k2 + stats.s_f2;
  const double total = stats.total;
  const int p_theta = problem.p_theta();

  const bool has_kernel = problem.discrepancy != Discrepancy::None;
  const int p_x = has_kernel ? problem.p_x() : 0;
  Vector grad = Vector::Zero(p_theta + (has_kernel ? p_x + 1 : 0));

  // theta: d/dtheta_i [-(N/2) log S] = N (df/dtheta_i)^T Q (ybar - f) / S
  const Matrix J = model_jacobian(problem, problem.design, theta);
  if (!J.allFinite()) throw NumericError("non-finite simulator Jacobian");
  grad.head(p_theta) = total * (J.transpose() * ws.u) / s;
  if (!has_kernel) return grad;

  const Matrix Rinv = cov.chol.inverse();
  // Generic kernel-parameter derivative for dRtilde:
  //   -1/2 tr(Rtilde^{-1} dRtilde) + (N/2) u^T dRtilde u / S
  auto directional = [&](const Matrix& dRtilde) {
    return -0.5 * Rinv.cwiseProduct(dRtilde).sum() + 0.5 * total * ws.u.dot(dRtilde * ws.u) / s;
  };

  const std::vector<Matrix> dR = correlation_dgamma(problem.design, problem.kernel, range);
  const bool scaled = problem.discrepancy == Discrepancy::SGaSP;
  const bool auto_lambda = scaled && !problem.lambda_z;
  // shift c = n / lambda_z; with the default formula c = sqrt(n eta) ||gamma/L||^{1/2}
  double shift = 0.0;
  Vector gamma_tilde;
  Vector lengths;
  if (scaled) {
    shift = problem.n() / cov.lambda_z;
    if (auto_lambda) {
      lengths = problem.domain_lengths();
      gamma_tilde = range.gamma.cwiseQuotient(lengths);
    }
  }

  for (int l = 0; l < p_x; ++l) {
    Matrix dReff;
    if (scaled) {
      double d_shift = 0.0;
      if (auto_lambda) d_shift = shift * 0.5 * (gamma_tilde[l] / lengths[l]) / gamma_tilde.squaredNorm();
      dReff = scaled_corr_derivative(*cov.scaled, dR[static_cast<std::size_t>(l)], d_shift);
    } else {
      dReff = dR[static_cast<std::size_t>(l)];
    }
    const double d_gamma = directional(dReff / eta);
    grad[p_theta + l] = -range.gamma[l] * d_gamma;  // d/dlog(beta) = -gamma d/dgamma
  }

  Matrix dRtilde_eta = -cov.effective_R() / (eta * eta);
  if (auto_lambda) {
    const Matrix zero = Matrix::Zero(problem.n(), problem.n());
    dRtilde_eta += scaled_corr_derivative(*cov.scaled, zero, shift / (2.0 * eta)) / eta;
  }
  grad[p_theta + p_x] = eta * directional(dRtilde_eta);
  return grad;
}

}  // namespace robcal
