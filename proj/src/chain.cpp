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

#include "chain.hpp"

#include "robcal/testbeds.hpp"

#include <cmath>
#include <limits>

namespace robcal::detail {

FieldTerm FieldTerm::from_problem(const CalibrationProblem& problem, const JrPriorParams& prior) {
  const ReplicateStats stats = replicate_stats(problem.observations, problem.weights());
  FieldTerm term;
  term.design = problem.design;
  term.target = stats.mean;
  term.lambda_diag = stats.lambda_diag;
  term.s_f2 = stats.s_f2;
  term.total = stats.total;
  term.trend = problem.trend;
  term.discrepancy = problem.discrepancy;
  term.kernel = problem.kernel;
  term.fixed_lambda_z = problem.lambda_z;
  term.lengths = problem.domain_lengths();
  term.prior = prior;
  return term;
}

RangeParams range_of(const Vector& log_params, int p_x) {
  return RangeParams::from_log_beta(log_params.head(p_x));
}

double lambda_z_of(const FieldTerm& term, const RangeParams& range, double eta) {
  if (term.fixed_lambda_z) return *term.fixed_lambda_z;
  return default_lambda_z(range.gamma, eta, term.n(), term.lengths);
}

FieldCovariance field_covariance(const FieldTerm& term, const Vector& log_params) {
  if (!term.has_kernel()) {
    return build_field_covariance(term.design, term.kernel, Discrepancy::None, term.lambda_diag, RangeParams{}, 1.0,
                                  0.0);
  }
  const RangeParams range = range_of(log_params, term.p_x());
  const double eta = std::exp(log_params[term.p_x()]);
  const double lambda_z = term.discrepancy == Discrepancy::SGaSP ? lambda_z_of(term, range, eta) : 0.0;
  return build_field_covariance(term.design, term.kernel, term.discrepancy, term.lambda_diag, range, eta, lambda_z);
}

Vector default_log_params(const FieldTerm& term) {
  Vector out(term.p_x() + 1);
  for (int l = 0; l < term.p_x(); ++l) {
    const double length = term.lengths[l] > 0.0 ? term.lengths[l] : 1.0;
    out[l] = -std::log(0.5 * length);
  }
  out[term.p_x()] = 0.0;
  return out;
}

Vector field_residual(const FieldTerm& term, const FieldState& state, const Vector& f) {
  Vector r = term.target - f;
  if (term.trend) r -= *term.trend * state.theta_m;
  return r;
}

double field_quad(const FieldState& state, const Vector& residual) {
  return residual.dot(state.cov.chol.solve(residual));
}

double theta_conditional(const FieldTerm& term, const FieldState& state, const Vector& f) {
  if (!f.allFinite()) return -std::numeric_limits<double>::infinity();
  return -(field_quad(state, field_residual(term, state, f)) + term.s_f2) / (2.0 * state.sigma2_0);
}

FieldState initial_field_state(const FieldTerm& term, const Vector& f) {
  FieldState state;
  Vector residual = term.target - f;
  const Vector agg_weights = term.lambda_diag.cwiseInverse();
  if (term.trend) {
    state.theta_m = trend_lse(*term.trend, agg_weights, residual);
    residual -= *term.trend * state.theta_m;
  }
  const double rss = agg_weights.dot(residual.cwiseAbs2()) + term.s_f2;
  state.sigma2_0 = std::max(rss / term.total, 1e-12);
  if (term.has_kernel()) state.log_params = default_log_params(term);
  state.cov = field_covariance(term, state.log_params);
  return state;
}

bool update_kernel(const FieldTerm& term, FieldState& state, const Vector& f, const Vector& sd, Rng& rng) {
  auto gaussian_loglik = [&](const FieldCovariance& cov) {
    Vector r = term.target - f;
    if (term.trend) r -= *term.trend * state.theta_m;
    return -0.5 * cov.chol.log_det() - 0.5 * r.dot(cov.chol.solve(r)) / state.sigma2_0;
  };
  std::optional<FieldCovariance> proposed;
  const LogLikelihood loglik = [&](const Vector& log_params) {
    try {
      proposed = field_covariance(term, log_params);
    } catch (const NumericError&) {
      proposed.reset();
      return -std::numeric_limits<double>::infinity();
    }
    return gaussian_loglik(*proposed);
  };
  const MetropolisStep step = metropolis_range_nugget(state.log_params, gaussian_loglik(state.cov), loglik,
                                                      term.prior, sd, rng, true);
  if (step.accepted) {
    state.log_params = step.value;
    state.cov = std::move(*proposed);
  }
  return step.accepted;
}

void update_sigma(const FieldTerm& term, FieldState& state, const Vector& f, Rng& rng) {
  const double quad = field_quad(state, field_residual(term, state, f)) + term.s_f2;
  state.sigma2_0 = gibbs_sigma0(quad, term.total, rng);
}

void update_trend(const FieldTerm& term, FieldState& state, const Vector& f, Rng& rng) {
  if (!term.trend) return;
  state.theta_m = gibbs_trend(term.target - f, state.cov.chol, *term.trend, state.sigma2_0, rng);
}

Matrix theta_lhs(const Matrix& theta_range, int count, Rng& rng) {
  const Matrix unit = latin_hypercube(count, static_cast<int>(theta_range.rows()), rng);
  Matrix out(count, theta_range.rows());
  for (Eigen::Index j = 0; j < theta_range.rows(); ++j)
    out.col(j) = (theta_range(j, 0) + (theta_range(j, 1) - theta_range(j, 0)) * unit.col(j).array()).matrix();
  return out;
}

}  // namespace robcal::detail
