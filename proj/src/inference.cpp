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

#include "robcal/inference.hpp"

#include "chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace robcal {

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

double gamma_shape_rate(double shape, double rate, Rng& rng) {
  require(shape > 0.0 && rate > 0.0, "gamma parameters must be positive");
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(rng);
}

namespace {

double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

bool metropolis_accept(double log_ratio, Rng& rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(uniform01(rng)) < log_ratio;
}

}  // namespace

JrPriorParams JrPriorParams::defaults(const Matrix& design) {
  require(design.rows() >= 1 && design.cols() >= 1, "JR prior needs a non-empty design");
  JrPriorParams params;
  const double p_x = static_cast<double>(design.cols());
  params.a = 0.5 - p_x;
  params.b = 1.0;
  params.C.resize(design.cols());
  const double scale = std::pow(static_cast<double>(design.rows()), -1.0 / p_x);
  for (Eigen::Index l = 0; l < design.cols(); ++l) {
    const double extent = design.col(l).maxCoeff() - design.col(l).minCoeff();
    params.C[l] = scale * (extent > 0.0 ? extent : 1.0);
  }
  return params;
}

double jr_log_prior(const Vector& beta, double eta, const JrPriorParams& params) {
  require(beta.size() == params.C.size(), "JR prior dimension mismatch");
  require(params.b > 0.0, "JR prior needs b > 0");
  const double t = params.C.dot(beta) + eta;
  if (!(t > 0.0)) {
    if (params.a == 0.0) return 0.0;
    return -std::numeric_limits<double>::infinity();
  }
  return params.a * std::log(t) - params.b * t;
}

double jr_log_prior_log_coords(const Vector& log_params, const JrPriorParams& params, bool with_nugget) {
  const Eigen::Index p_x = params.C.size();
  require(log_params.size() == p_x + (with_nugget ? 1 : 0), "JR prior dimension mismatch");
  const Vector log_beta = log_params.head(p_x);
  const double eta = with_nugget ? std::exp(log_params[p_x]) : 0.0;
  const double jacobian = log_params.sum();
  return jr_log_prior(log_beta.array().exp().matrix(), eta, params) + jacobian;
}

double gibbs_sigma0(double quadratic_form, double count, Rng& rng) {
  if (!(quadratic_form > 0.0) || !std::isfinite(quadratic_form))
    throw NumericError("variance update needs a positive finite quadratic form");
  require(count > 0.0, "variance update needs at least one observation");
  return 1.0 / gamma_shape_rate(0.5 * count, 0.5 * quadratic_form, rng);
}

double gibbs_sigma0(const Vector& residual, const JitteredCholesky& covariance, Rng& rng) {
  return gibbs_sigma0(residual.dot(covariance.solve(residual)), static_cast<double>(residual.size()), rng);
}

Vector gibbs_trend(const Vector& residual, const JitteredCholesky& covariance, const Matrix& H, double sigma2_0,
                   Rng& rng) {
  require(H.rows() == residual.size(), "trend basis does not match residual");
  require(sigma2_0 >= 0.0, "variance must be non-negative");
  const Matrix cinv_h = covariance.solve(H);
  const Eigen::LLT<Matrix> precision(H.transpose() * cinv_h);
  if (precision.info() != Eigen::Success) throw NumericError("singular trend precision");
  const Vector mean = precision.solve(cinv_h.transpose() * residual);
  Vector z(H.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  const Vector offset = precision.matrixU().solve(z);  // L^{-T} z has covariance precision^{-1}
  return mean + std::sqrt(sigma2_0) * offset;
}

MetropolisStep metropolis_theta_block(const Vector& theta, double current_loglik, const LogLikelihood& loglik,
                                      const Matrix& theta_range, const Vector& sd, Rng& rng) {
  require(sd.size() == theta.size() && theta_range.rows() == theta.size(), "theta proposal dimension mismatch");
  Vector proposal(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) proposal[i] = theta[i] + sd[i] * standard_normal(rng);
  MetropolisStep out{theta, current_loglik, false};
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    if (proposal[i] < theta_range(i, 0) || proposal[i] > theta_range(i, 1)) return out;
  const double candidate = loglik(proposal);
  if (!std::isfinite(candidate)) return out;
  if (metropolis_accept(candidate - current_loglik, rng)) out = {proposal, candidate, true};
  return out;
}

MetropolisStep metropolis_range_nugget(const Vector& log_params, double current_loglik, const LogLikelihood& loglik,
                                       const JrPriorParams& prior, const Vector& sd, Rng& rng, bool with_nugget) {
  require(sd.size() == log_params.size(), "kernel proposal dimension mismatch");
  Vector proposal(log_params.size());
  for (Eigen::Index i = 0; i < log_params.size(); ++i) proposal[i] = log_params[i] + sd[i] * standard_normal(rng);
  MetropolisStep out{log_params, current_loglik, false};
  const double prior_new = jr_log_prior_log_coords(proposal, prior, with_nugget);
  if (!std::isfinite(prior_new)) return out;
  const double candidate = loglik(proposal);
  if (!std::isfinite(candidate)) return out;
  const double prior_old = jr_log_prior_log_coords(log_params, prior, with_nugget);
  if (metropolis_accept(candidate + prior_new - current_loglik - prior_old, rng)) out = {proposal, candidate, true};
  return out;
}

Vector McmcConfig::resolved_sd(int p_theta, int p_x) const {
  Vector sd(p_theta + p_x + 1);
  sd.head(p_theta).setConstant(0.05);
  sd.tail(p_x + 1).setConstant(0.25);
  if (sd_proposal.size() == 0) return sd;
  if (sd_proposal.size() == p_theta) {
    sd.head(p_theta) = sd_proposal;
  } else {
    require(sd_proposal.size() == sd.size(), "sd_proposal needs p_theta or p_theta + p_x + 1 entries");
    sd = sd_proposal;
  }
  require((sd.array() > 0.0).all(), "sd_proposal entries must be positive");
  return sd;
}

void McmcConfig::validate() const {
  require(burn_in >= 0, "burn-in must be non-negative");
  require(samples > burn_in, "number of samples must exceed the burn-in");
  require(thinning >= 1, "thinning must be at least 1");
  if (sd_proposal.size()) require((sd_proposal.array() > 0.0).all(), "sd_proposal entries must be positive");
  if (jr_b) require(*jr_b > 0.0, "JR prior needs b > 0");
}

Vector PosteriorSamples::log_beta(int row) const {
  require(has_kernel(), "chain has no kernel parameters");
  return draws.row(row).segment(p_theta, p_x).transpose();
}

double PosteriorSamples::log_eta(int row) const {
  require(has_kernel(), "chain has no kernel parameters");
  return draws(row, p_theta + p_x);
}

double PosteriorSamples::sigma2_0(int row) const {
  return draws(row, p_theta + (has_kernel() ? p_x + 1 : 0));
}

Vector PosteriorSamples::theta_m(int row) const {
  return draws.row(row).tail(q).transpose();
}

double PosteriorSamples::theta_acceptance_rate() const {
  return iterations > 0 ? static_cast<double>(accept_theta.size()) / iterations : 0.0;
}

double PosteriorSamples::kernel_acceptance_rate() const {
  return iterations > 0 ? static_cast<double>(accept_kernel.size()) / iterations : 0.0;
}

std::vector<std::string> posterior_columns(Discrepancy discrepancy, int p_theta, int p_x, int q) {
  std::vector<std::string> names;
  for (int i = 0; i < p_theta; ++i) names.push_back("theta_" + std::to_string(i + 1));
  if (discrepancy != Discrepancy::None) {
    for (int l = 0; l < p_x; ++l) names.push_back("log_beta_" + std::to_string(l + 1));
    names.emplace_back("log_eta");
  }
  names.emplace_back("sigma2_0");
  for (int j = 0; j < q; ++j) names.push_back("theta_m_" + std::to_string(j + 1));
  return names;
}

Vector default_initial_theta(const CalibrationProblem& problem, Rng& rng, int candidates) {
  const Matrix points = detail::theta_lhs(problem.theta_range, candidates, rng);
  Vector best = points.row(0).transpose();
  double best_value = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < candidates; ++i) {
    const Vector theta = points.row(i).transpose();
    double value = -std::numeric_limits<double>::infinity();
    try {
      value = no_disc_profile_loglik(problem, theta).loglik;
    } catch (const Error&) {
      continue;
    }
    if (value > best_value) {
      best_value = value;
      best = theta;
    }
  }
  return best;
}

PosteriorSamples run_mcmc(const CalibrationProblem& problem, const McmcConfig& config) {
  problem.validate();
  config.validate();
  const int p_theta = problem.p_theta();
  const int p_x = problem.p_x();
  const Vector sd = config.resolved_sd(p_theta, p_x);
  const Vector widths = problem.theta_range.col(1) - problem.theta_range.col(0);
  const Vector sd_theta = sd.head(p_theta).cwiseProduct(widths);
  const Vector sd_kernel = sd.tail(p_x + 1);

  JrPriorParams prior = JrPriorParams::defaults(problem.design);
  if (config.jr_a) prior.a = *config.jr_a;
  if (config.jr_b) prior.b = *config.jr_b;
  const detail::FieldTerm term = detail::FieldTerm::from_problem(problem, prior);

  Rng rng(config.seed);
  Vector theta = config.initial_theta ? *config.initial_theta : default_initial_theta(problem, rng);
  require(problem.in_range(theta), "initial theta lies outside theta_range");
  auto evaluate = [&](const Vector& t) {
    Vector f = problem.simulator(problem.design, t);
    require(f.size() == problem.n(), "simulator returned the wrong number of outputs");
    return f;
  };
  Vector f = evaluate(theta);
  if (!f.allFinite()) throw NumericError("simulator output is not finite at the initial theta");
  detail::FieldState state = detail::initial_field_state(term, f);

  PosteriorSamples out;
  out.discrepancy = problem.discrepancy;
  out.p_theta = p_theta;
  out.p_x = p_x;
  out.q = problem.q();
  out.iterations = config.samples;
  out.columns = posterior_columns(problem.discrepancy, p_theta, p_x, out.q);
  const int rows = (config.samples - config.burn_in) / config.thinning;
  out.draws.resize(rows, static_cast<Eigen::Index>(out.columns.size()));
  if (problem.discrepancy == Discrepancy::SGaSP) out.lambda_z.resize(rows);

  Vector f_candidate;
  const LogLikelihood theta_loglik = [&](const Vector& t) {
    try {
      f_candidate = evaluate(t);
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
    return detail::theta_conditional(term, state, f_candidate);
  };

  int row = 0;
  for (int s = 0; s < config.samples; ++s) {
    const MetropolisStep step = metropolis_theta_block(theta, detail::theta_conditional(term, state, f), theta_loglik,
                                                       problem.theta_range, sd_theta, rng);
    if (step.accepted) {
      theta = step.value;
      f = f_candidate;
      out.accept_theta.push_back(s);
    }
    if (term.has_kernel() && detail::update_kernel(term, state, f, sd_kernel, rng)) out.accept_kernel.push_back(s);
    detail::update_sigma(term, state, f, rng);
    detail::update_trend(term, state, f, rng);

    if (s >= config.burn_in && (s - config.burn_in + 1) % config.thinning == 0 && row < rows) {
      Eigen::Index c = 0;
      out.draws.row(row).head(p_theta) = theta.transpose();
      c += p_theta;
      if (term.has_kernel()) {
        out.draws.row(row).segment(c, p_x + 1) = state.log_params.transpose();
        c += p_x + 1;
      }
      out.draws(row, c++) = state.sigma2_0;
      if (out.q > 0) out.draws.row(row).tail(out.q) = state.theta_m.transpose();
      if (out.lambda_z.size()) out.lambda_z[row] = state.cov.lambda_z;
      out.max_jitter = std::max(out.max_jitter, state.cov.chol.jitter);
      ++row;
    }
  }
  return out;
}

Vector MleResult::packed() const {
  if (discrepancy == Discrepancy::None) return theta;
  Vector x(theta.size() + range.gamma.size() + 1);
  x << theta, range.log_beta(), std::log(eta);
  return x;
}

void kernel_bounds(const CalibrationProblem& problem, Vector& lower, Vector& upper) {
  const int p_x = problem.p_x();
  const Vector lengths = problem.domain_lengths();
  lower.resize(p_x + 1);
  upper.resize(p_x + 1);
  for (int l = 0; l < p_x; ++l) {
    const double length = lengths[l] > 0.0 ? lengths[l] : 1.0;
    lower[l] = -std::log(1e3 * length);
    upper[l] = -std::log(1e-3 * length);
  }
  lower[p_x] = -12.0;
  upper[p_x] = 12.0;
}

MleResult run_mle(const CalibrationProblem& problem, const MleConfig& config) {
  problem.validate();
  require(config.restarts >= 1, "MLE needs at least one start");
  const int p_theta = problem.p_theta();
  const int p_x = problem.p_x();
  const bool has_kernel = problem.discrepancy != Discrepancy::None;
  const int dim = p_theta + (has_kernel ? p_x + 1 : 0);

  Vector lower(dim);
  Vector upper(dim);
  lower.head(p_theta) = problem.theta_range.col(0);
  upper.head(p_theta) = problem.theta_range.col(1);
  Vector kernel_lower;
  Vector kernel_upper;
  if (has_kernel) {
    kernel_bounds(problem, kernel_lower, kernel_upper);
    lower.tail(p_x + 1) = kernel_lower;
    upper.tail(p_x + 1) = kernel_upper;
  }

  Rng rng(config.seed);
  const int n_starts = std::max(config.restarts, static_cast<int>(config.initial_values.size()));
  const int n_random = n_starts - static_cast<int>(config.initial_values.size());
  const Matrix theta_points = n_random > 0 ? detail::theta_lhs(problem.theta_range, n_random, rng) : Matrix();
  Matrix kernel_points;
  if (has_kernel && n_random > 0) {
    Matrix kernel_range(p_x + 1, 2);
    const Vector lengths = problem.domain_lengths();
    for (int l = 0; l < p_x; ++l) {
      const double length = lengths[l] > 0.0 ? lengths[l] : 1.0;
      kernel_range(l, 0) = -std::log(length);
      kernel_range(l, 1) = -std::log(length / std::max(problem.n(), 2));
    }
    kernel_range(p_x, 0) = -4.0;
    kernel_range(p_x, 1) = 1.0;
    kernel_points = detail::theta_lhs(kernel_range, n_random, rng);
  }

  std::vector<Vector> starts;
  for (const Vector& v : config.initial_values) {
    Vector x(dim);
    if (v.size() == p_theta) {
      x.head(p_theta) = v;
      if (has_kernel) {
        detail::FieldTerm term;
        term.design = problem.design;
        term.lengths = problem.domain_lengths();
        x.tail(p_x + 1) = detail::default_log_params(term);
      }
    } else {
      require(v.size() == dim, "initial value has the wrong dimension");
      x = v;
    }
    starts.push_back(x.cwiseMax(lower).cwiseMin(upper));
  }
  for (int i = 0; i < n_random; ++i) {
    Vector x(dim);
    x.head(p_theta) = theta_points.row(i).transpose();
    if (has_kernel) x.tail(p_x + 1) = kernel_points.row(i).transpose();
    starts.push_back(x);
  }

  const auto unpack = [&](const Vector& x, RangeParams& range, double& eta) {
    if (!has_kernel) return;
    range = RangeParams::from_log_beta(x.segment(p_theta, p_x));
    eta = std::exp(x[p_theta + p_x]);
  };
  const Objective objective = [&](const Vector& x, Vector& grad) {
    RangeParams range;
    double eta = 1.0;
    unpack(x, range, eta);
    const Vector theta = x.head(p_theta);
    try {
      const ProfileValue value = has_kernel ? profile_loglik(problem, theta, range, eta)
                                            : no_disc_profile_loglik(problem, theta);
      if (value.degenerate) {
        grad = Vector::Zero(x.size());
        return -value.loglik;
      }
      grad = -profile_grad(problem, theta, range, eta);
      return -value.loglik;
    } catch (const NumericError&) {
      grad = Vector::Zero(x.size());
      return std::numeric_limits<double>::infinity();
    }
  };

  MleResult best;
  best.discrepancy = problem.discrepancy;
  bool found = false;
  for (const Vector& start : starts) {
    OptimizerTrace trace;
    trace.start = start;
    Vector g(dim);
    const double f0 = objective(start, g);
    trace.start_loglik = -f0;
    if (!std::isfinite(f0)) {
      trace.failed = true;
      trace.message = "objective not finite at the start point";
      trace.end = start;
      trace.loglik = -f0;
      best.traces.push_back(trace);
      continue;
    }
    const LbfgsResult res = minimize_lbfgs(objective, start, lower, upper, config.optimizer);
    trace.end = res.x;
    trace.loglik = -res.value;
    trace.iterations = res.iterations;
    trace.converged = res.converged;
    trace.message = res.message;
    trace.failed = !std::isfinite(res.value);
    best.traces.push_back(trace);
    if (!trace.failed && (!found || trace.loglik > best.loglik)) {
      found = true;
      best.loglik = trace.loglik;
      best.theta = res.x.head(p_theta);
      if (has_kernel) unpack(res.x, best.range, best.eta);
    }
  }
  if (!found) {
    std::ostringstream msg;
    msg << "all " << best.traces.size() << " optimizer starts failed:";
    for (std::size_t i = 0; i < best.traces.size(); ++i) msg << " [" << i << "] " << best.traces[i].message << ';';
    throw NumericError(msg.str());
  }

  const ProfileValue value = has_kernel ? profile_loglik(problem, best.theta, best.range, best.eta)
                                        : no_disc_profile_loglik(problem, best.theta);
  best.theta_m = value.theta_m;
  best.sigma2_0 = value.sigma2_0;
  if (problem.discrepancy == Discrepancy::SGaSP) best.lambda_z = resolve_lambda_z(problem, best.range, best.eta);
  return best;
}

}  // namespace robcal
