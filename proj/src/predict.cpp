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

#include "robcal/predict.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace robcal {

namespace {

void check_request(const CalibrationProblem& problem, const PredictionRequest& request) {
  require(request.testing_input.rows() >= 1, "no testing inputs");
  require(request.testing_input.cols() == problem.p_x(), "testing inputs have the wrong number of columns");
  if (problem.trend) {
    require(request.X_testing.has_value(), "X_testing is required because the fit used a trend");
    require(request.X_testing->rows() == request.testing_input.rows() && request.X_testing->cols() == problem.q(),
            "X_testing has the wrong shape");
  }
  require(request.testing_weights.size() == 0 || request.testing_weights.size() == request.testing_input.rows(),
          "testing weights do not match testing inputs");
  require(request.testing_weights.size() == 0 || (request.testing_weights.array() > 0.0).all(),
          "testing weights must be positive");
  for (std::size_t i = 0; i < request.interval_probs.size(); ++i) {
    const double p = request.interval_probs[i];
    require(p > 0.0 && p < 1.0, "interval probabilities must lie in (0, 1)");
    require(i == 0 || p > request.interval_probs[i - 1], "interval probabilities must be ascending");
  }
  require(request.max_draws >= 0, "max_draws must be non-negative");
}

Vector testing_weights(const PredictionRequest& request) {
  return request.testing_weights.size() ? request.testing_weights
                                        : Vector::Ones(request.testing_input.rows()).eval();
}

PredictionResult empty_result(const PredictionRequest& request) {
  PredictionResult out;
  out.interval_probs = request.interval_probs;
  out.interval_data = request.interval_data;
  out.testing_weights = testing_weights(request);
  return out;
}

}  // namespace

double quantile_type7(std::vector<double> values, double p) {
  require(!values.empty(), "quantile of an empty sample");
  require(p >= 0.0 && p <= 1.0, "quantile probability must lie in [0, 1]");
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

Matrix interval_quantiles(const Matrix& draws, const std::vector<double>& probs) {
  require(draws.rows() >= 1, "no draws for interval estimation");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(probs[i] > 0.0 && probs[i] < 1.0, "interval probabilities must lie in (0, 1)");
    require(i == 0 || probs[i] > probs[i - 1], "interval probabilities must be ascending");
  }
  Matrix out(draws.cols(), static_cast<Eigen::Index>(probs.size()));
  std::vector<double> column(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    for (Eigen::Index i = 0; i < draws.rows(); ++i) column[static_cast<std::size_t>(i)] = draws(i, j);
    std::sort(column.begin(), column.end());
    const double last = static_cast<double>(column.size()) - 1.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      const double h = last * probs[k];
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const std::size_t hi = std::min(lo + 1, column.size() - 1);
      out(j, static_cast<Eigen::Index>(k)) = column[lo] + (h - static_cast<double>(lo)) * (column[hi] - column[lo]);
    }
  }
  return out;
}

DiscrepancyConditional discrepancy_conditional(const Matrix& design, const KernelSpec& kernel,
                                              const FieldCovariance& cov, const Vector& residual, const Matrix& xs) {
  require(residual.size() == design.rows(), "residual does not match the design");
  require(xs.cols() == design.cols(), "testing inputs have the wrong number of columns");
  const Eigen::Index m = xs.rows();
  DiscrepancyConditional out;
  if (cov.discrepancy == Discrepancy::None) {
    out.mean = Vector::Zero(m);
    out.variance = Vector::Zero(m);
    return out;
  }
  const Vector u = cov.chol.solve(residual);
  const Matrix r = cross_correlation(design, xs, kernel, cov.range);  // n x m
  Matrix r_eff = r;
  Vector k_star = Vector::Ones(m);
  if (cov.scaled) {
    const Matrix shifted_inv_r = cov.scaled->shifted.solve(r);
    r_eff -= cov.R * shifted_inv_r;
    k_star -= (r.array() * shifted_inv_r.array()).colwise().sum().matrix().transpose();
  }
  const double eta = cov.eta;
  out.mean = r_eff.transpose() * u / eta;
  const Matrix solved = cov.chol.solve(r_eff);
  const Vector explained = (r_eff.array() * solved.array()).colwise().sum().matrix().transpose() / (eta * eta);
  out.variance = (k_star / eta - explained).cwiseMax(0.0);
  return out;
}

ConditionalPrediction predict_conditional(const CalibrationProblem& problem, const ModelParams& params,
                                          double lambda_z, const PredictionRequest& request) {
  const Matrix& xs = request.testing_input;
  const Eigen::Index m = xs.rows();
  const ReplicateStats stats = replicate_stats(problem.observations, problem.output_weights);
  ConditionalPrediction out;

  out.model = problem.simulator(xs, params.theta);
  require(out.model.size() == m, "simulator returned the wrong number of outputs");
  if (!out.model.allFinite()) throw NumericError("simulator output is not finite at the testing inputs");
  out.trend = problem.trend ? Vector(*request.X_testing * params.theta_m) : Vector::Zero(m).eval();
  out.noise_var = params.sigma2_0 * testing_weights(request).cwiseInverse();
  out.discrepancy = Vector::Zero(m);
  out.reality_var = Vector::Zero(m);
  if (problem.discrepancy == Discrepancy::None) return out;

  const Vector f = problem.simulator(problem.design, params.theta);
  if (!f.allFinite()) throw NumericError("simulator output is not finite at the field inputs");
  Vector v = stats.mean - f;
  if (problem.trend) v -= *problem.trend * params.theta_m;
  const FieldCovariance cov = build_field_covariance(problem.design, problem.kernel, problem.discrepancy,
                                                     stats.lambda_diag, params.range, params.eta, lambda_z);
  const DiscrepancyConditional d = discrepancy_conditional(problem.design, problem.kernel, cov, v, xs);
  out.discrepancy = d.mean;
  out.reality_var = params.sigma2_0 * d.variance;
  return out;
}

PredictionResult predict_plugin(const CalibrationProblem& problem, const MleResult& fit,
                                const PredictionRequest& request) {
  check_request(problem, request);
  require(fit.discrepancy == problem.discrepancy, "fit and problem use different discrepancy models");
  ModelParams params;
  params.theta = fit.theta;
  params.theta_m = fit.theta_m;
  params.sigma2_0 = fit.sigma2_0;
  params.range = fit.range;
  params.eta = fit.eta;
  const ConditionalPrediction c = predict_conditional(problem, params, fit.lambda_z, request);

  PredictionResult out = empty_result(request);
  out.used_draws = 1;
  out.math_model_mean_no_trend = c.model;
  out.math_model_mean = c.model + c.trend;
  out.mean = out.math_model_mean + c.discrepancy;
  if (!request.interval_probs.empty()) {
    // without a discrepancy the only randomness left at fixed parameters is the observation noise
    const bool noise = request.interval_data || problem.discrepancy == Discrepancy::None;
    const Vector sd = (c.reality_var + (noise ? c.noise_var : Vector::Zero(c.noise_var.size()).eval())).cwiseSqrt();
    const boost::math::normal standard;
    out.bounds.resize(out.mean.size(), static_cast<Eigen::Index>(request.interval_probs.size()));
    for (std::size_t k = 0; k < request.interval_probs.size(); ++k) {
      const double z = boost::math::quantile(standard, request.interval_probs[k]);
      out.bounds.col(static_cast<Eigen::Index>(k)) = out.mean + z * sd;
    }
  }
  return out;
}

PredictionResult predict_posterior(const CalibrationProblem& problem, const PosteriorSamples& samples,
                                   const PredictionRequest& request) {
  check_request(problem, request);
  require(samples.rows() >= 1, "posterior has no draws");
  require(samples.discrepancy == problem.discrepancy, "posterior and problem use different discrepancy models");
  require(samples.p_theta == problem.p_theta() && samples.q == problem.q(), "posterior does not match the problem");

  std::vector<int> rows;
  if (request.max_draws == 0 || request.max_draws >= samples.rows()) {
    for (int r = 0; r < samples.rows(); ++r) rows.push_back(r);
  } else {
    const double stride = static_cast<double>(samples.rows()) / request.max_draws;
    for (int i = 0; i < request.max_draws; ++i) rows.push_back(static_cast<int>(std::floor(i * stride)));
  }

  const Eigen::Index m = request.testing_input.rows();
  PredictionResult out = empty_result(request);
  out.math_model_mean_no_trend = Vector::Zero(m);
  out.math_model_mean = Vector::Zero(m);
  out.mean = Vector::Zero(m);
  const bool intervals = !request.interval_probs.empty();
  Matrix predictive(intervals ? static_cast<Eigen::Index>(rows.size()) : 0, m);
  Rng rng(request.seed);

  int used = 0;
  for (int row : rows) {
    ModelParams params;
    params.theta = samples.theta(row);
    params.theta_m = samples.theta_m(row);
    params.sigma2_0 = samples.sigma2_0(row);
    double lambda_z = 0.0;
    if (samples.has_kernel()) {
      params.range = RangeParams::from_log_beta(samples.log_beta(row));
      params.eta = std::exp(samples.log_eta(row));
      if (samples.discrepancy == Discrepancy::SGaSP) lambda_z = samples.lambda_z[row];
    }
    ConditionalPrediction c;
    try {
      c = predict_conditional(problem, params, lambda_z, request);
    } catch (const NumericError&) {
      ++out.skipped_draws;
      continue;
    }
    out.math_model_mean_no_trend += c.model;
    out.math_model_mean += c.model + c.trend;
    out.mean += c.model + c.trend + c.discrepancy;
    if (intervals) {
      Vector var = c.reality_var;
      if (request.interval_data) var += c.noise_var;
      for (Eigen::Index j = 0; j < m; ++j)
        predictive(used, j) = c.model[j] + c.trend[j] + c.discrepancy[j] + std::sqrt(var[j]) * standard_normal(rng);
    }
    ++used;
  }
  if (used == 0) throw NumericError("every posterior draw failed during prediction");
  out.used_draws = used;
  out.math_model_mean_no_trend /= used;
  out.math_model_mean /= used;
  out.mean /= used;
  if (intervals) out.bounds = interval_quantiles(predictive.topRows(used), request.interval_probs);
  return out;
}

}  // namespace robcal
