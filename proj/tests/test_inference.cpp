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

#include <doctest.h>

#include "test_support.hpp"

#include "robcal/testbeds.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

using namespace robcal;
using robcal::test::random_matrix;
using robcal::test::random_vector;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Kolmogorov-Smirnov distance between samples and a CDF tabulated on an ascending grid.
double ks_distance(std::vector<double> samples, const std::vector<double>& grid, const std::vector<double>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double worst = 0.0;
  std::size_t g = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    while (g + 1 < grid.size() && grid[g + 1] <= samples[i]) ++g;
    double F = 0.0;
    if (samples[i] >= grid.back()) {
      F = 1.0;
    } else if (samples[i] > grid.front()) {
      const double t = (samples[i] - grid[g]) / (grid[g + 1] - grid[g]);
      F = cdf[g] + t * (cdf[g + 1] - cdf[g]);
    }
    worst = std::max({worst, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
  }
  return worst;
}

/// Normalized CDF of exp(log_density) on a uniform grid (trapezoid rule).
void tabulate(const std::function<double(double)>& log_density, double lo, double hi, int points,
              std::vector<double>& grid, std::vector<double>& cdf) {
  grid.resize(static_cast<std::size_t>(points));
  std::vector<double> dens(grid.size());
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
    dens[static_cast<std::size_t>(i)] = log_density(grid[static_cast<std::size_t>(i)]);
    peak = std::max(peak, dens[static_cast<std::size_t>(i)]);
  }
  for (double& d : dens) d = std::exp(d - peak);
  cdf.assign(grid.size(), 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i)
    cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
  for (double& c : cdf) c /= cdf.back();
}

Simulator constant_model() {
  Simulator sim;
  sim.id = "constant";
  sim.evaluate = [](const Matrix& x, const Vector& theta) { return Vector::Constant(x.rows(), theta[0]); };
  sim.jacobian = [](const Matrix& x, const Vector&) { return Matrix::Ones(x.rows(), 1); };
  return sim;
}

Simulator linear_model() {
  Simulator sim;
  sim.id = "linear";
  sim.evaluate = [](const Matrix& x, const Vector& theta) {
    return Vector(theta[0] + theta[1] * x.col(0).array());
  };
  return sim;
}

CalibrationProblem bayarri_problem(Discrepancy type) {
  const FieldData data = bayarri07_data();
  Matrix range(1, 2);
  range << 0.0, 50.0;
  return make_problem(data.design, data.observations, range, bayarri07_simulator(), type, Matrix::Ones(10, 1));
}

}  // namespace

TEST_CASE("JR prior values") {
  JrPriorParams p;
  p.a = -0.5;
  p.b = 1.0;
  p.C = Vector::Ones(1);
  const double d = jr_log_prior(Vector::Constant(1, 1.5), 0.5, p) - jr_log_prior(Vector::Constant(1, 0.5), 0.5, p);
  CHECK(d == doctest::Approx(p.a * std::log(2.0) - p.b).epsilon(1e-14));

  JrPriorParams p2;
  p2.a = -1.5;
  p2.C = Vector::LinSpaced(2, 0.3, 0.8);
  const Vector beta = Vector::LinSpaced(2, 1.0, 4.0);
  JrPriorParams doubled = p2;
  doubled.C *= 2.0;
  CHECK(jr_log_prior(beta, 0.2, p2) == doctest::Approx(jr_log_prior(beta / 2.0, 0.2, doubled)).epsilon(1e-14));
  CHECK(jr_log_prior(beta, 1e6, p2) < -1e5);
  CHECK(jr_log_prior(Vector::Zero(2), 0.0, p2) == -std::numeric_limits<double>::infinity());

  Matrix design(4, 2);
  design << 0, 0, 1, 2, 2, 1, 3, 4;
  const JrPriorParams defaults = JrPriorParams::defaults(design);
  CHECK(defaults.a == doctest::Approx(-1.5));
  CHECK(defaults.b == 1.0);
  CHECK(defaults.C[0] == doctest::Approx(0.5 * 3.0));
  CHECK(defaults.C[1] == doctest::Approx(0.5 * 4.0));
}

TEST_CASE("variance Gibbs step") {
  Rng rng(1);
  Vector residual(2);
  residual << 1.0, -1.0;
  JitteredCholesky identity = factor_with_jitter(Matrix::Identity(2, 2));
  // quadratic form 2 with n = 2 gives Gamma(1, 1) for the precision
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) sum += 1.0 / gibbs_sigma0(residual, identity, rng);
  CHECK(sum / draws == doctest::Approx(1.0).epsilon(0.02));

  Rng a(5), b(5);
  const double base = gibbs_sigma0(residual, identity, a);
  const double scaled = gibbs_sigma0(Vector(3.0 * residual), identity, b);
  CHECK(scaled == doctest::Approx(9.0 * base).epsilon(1e-12));
  CHECK_THROWS_AS(gibbs_sigma0(Vector::Zero(2), identity, rng), NumericError);
}

TEST_CASE("trend Gibbs step") {
  Rng rng(2);
  const int n = 5;
  const Vector residual = random_vector(n, rng, -1.0, 3.0);
  const Matrix H = Matrix::Ones(n, 1);
  const JitteredCholesky identity = factor_with_jitter(Matrix::Identity(n, n));
  const double sigma2 = 0.8;
  double sum = 0.0, sum2 = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const double v = gibbs_trend(residual, identity, H, sigma2, rng)[0];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  // conjugate normal: mean ybar, variance sigma2 / n
  CHECK(std::abs(mean - residual.mean()) < 4.0 * std::sqrt(sigma2 / n / draws));
  CHECK(var == doctest::Approx(sigma2 / n).epsilon(0.02));
  CHECK(gibbs_trend(residual, identity, H, 0.0, rng)[0] == doctest::Approx(residual.mean()).epsilon(1e-12));

  // correlated covariance: sample mean matches GLS
  const Matrix C = Matrix::Identity(n, n) * 0.5 + Matrix::Constant(n, n, 0.2);
  Matrix H2(n, 2);
  H2.col(0).setOnes();
  H2.col(1) = Vector::LinSpaced(n, 0.0, 1.0);
  const JitteredCholesky chol = factor_with_jitter(C);
  const Matrix Ci = C.inverse();
  const Vector gls = (H2.transpose() * Ci * H2).inverse() * H2.transpose() * Ci * residual;
  Vector acc = Vector::Zero(2);
  for (int i = 0; i < 20000; ++i) acc += gibbs_trend(residual, chol, H2, 0.3, rng);
  CHECK((acc / 20000.0 - gls).cwiseAbs().maxCoeff() < 0.03);
}

TEST_CASE("theta Metropolis step") {
  Rng rng(3);
  Matrix range(1, 2);
  range << 0.0, 1.0;
  const LogLikelihood flat = [](const Vector&) { return 0.0; };
  const Vector start = Vector::Constant(1, 0.1);
  MetropolisStep tiny = metropolis_theta_block(start, 0.0, flat, range, Vector::Constant(1, 1e-300), rng);
  CHECK(tiny.accepted);
  CHECK(tiny.value[0] == 0.1);

  int accepted = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i)
    accepted += metropolis_theta_block(start, 0.0, flat, range, Vector::Constant(1, 0.5), rng).accepted;
  const double expected = normal_cdf((1.0 - 0.1) / 0.5) - normal_cdf(-0.1 / 0.5);
  CHECK(static_cast<double>(accepted) / trials == doctest::Approx(expected).epsilon(0.01));

  const LogLikelihood nan_target = [](const Vector&) { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_FALSE(metropolis_theta_block(start, 0.0, nan_target, range, Vector::Constant(1, 0.01), rng).accepted);
}

TEST_CASE("theta chain reproduces a one-dimensional target") {
  Rng rng(4);
  Matrix range(1, 2);
  range << 0.0, 1.0;
  auto log_target = [](double t) { return std::log(0.3 * std::exp(-50 * (t - 0.25) * (t - 0.25)) +
                                                   0.7 * std::exp(-30 * (t - 0.7) * (t - 0.7))); };
  const LogLikelihood loglik = [&](const Vector& v) { return log_target(v[0]); };
  Vector theta = Vector::Constant(1, 0.5);
  double current = loglik(theta);
  std::vector<double> samples;
  for (int i = 0; i < 110000; ++i) {
    const MetropolisStep step = metropolis_theta_block(theta, current, loglik, range, Vector::Constant(1, 0.3), rng);
    theta = step.value;
    current = step.loglik;
    if (i >= 10000) samples.push_back(theta[0]);
  }
  std::vector<double> grid, cdf;
  tabulate(log_target, 0.0, 1.0, 4001, grid, cdf);
  CHECK(ks_distance(samples, grid, cdf) < 0.05);
}

TEST_CASE("kernel Metropolis step samples the transformed JR prior under a flat likelihood") {
  Rng rng(6);
  JrPriorParams prior;
  prior.a = -0.5;
  prior.b = 1.0;
  prior.C = Vector::Constant(1, 0.7);
  const LogLikelihood flat = [](const Vector&) { return 0.0; };
  Vector u = Vector::Zero(1);
  std::vector<double> samples;
  for (int i = 0; i < 110000; ++i) {
    const MetropolisStep step = metropolis_range_nugget(u, 0.0, flat, prior, Vector::Constant(1, 1.0), rng, false);
    u = step.value;
    if (i >= 10000) samples.push_back(u[0]);
  }
  auto log_density = [&](double x) { return jr_log_prior_log_coords(Vector::Constant(1, x), prior, false); };
  std::vector<double> grid, cdf;
  tabulate(log_density, -25.0, 6.0, 20001, grid, cdf);
  CHECK(ks_distance(samples, grid, cdf) < 0.05);

  const MetropolisStep still = metropolis_range_nugget(u, 0.0, flat, prior, Vector::Constant(1, 1e-300), rng, false);
  CHECK(still.accepted);
}

TEST_CASE("MCMC bookkeeping, range and determinism") {
  CalibrationProblem problem = bayarri_problem(Discrepancy::SGaSP);
  McmcConfig config;
  config.samples = 503;
  config.burn_in = 100;
  config.thinning = 4;
  config.seed = 99;
  const PosteriorSamples a = run_mcmc(problem, config);
  CHECK(a.rows() == (503 - 100) / 4);
  CHECK(a.draws.cols() == static_cast<Eigen::Index>(a.columns.size()));
  CHECK(a.columns.front() == "theta_1");
  CHECK(a.columns.back() == "theta_m_1");
  CHECK(a.lambda_z.size() == a.rows());
  for (int r = 0; r < a.rows(); ++r) {
    CHECK(a.theta(r)[0] >= 0.0);
    CHECK(a.theta(r)[0] <= 50.0);
    CHECK(a.sigma2_0(r) > 0.0);
  }
  for (std::size_t i = 1; i < a.accept_theta.size(); ++i) CHECK(a.accept_theta[i] > a.accept_theta[i - 1]);
  const PosteriorSamples b = run_mcmc(problem, config);
  CHECK(a.draws == b.draws);
  CHECK(a.accept_theta == b.accept_theta);
  config.seed = 100;
  CHECK_FALSE(run_mcmc(problem, config).draws == a.draws);

  McmcConfig bad = config;
  bad.burn_in = bad.samples;
  CHECK_THROWS_AS(run_mcmc(problem, bad), InvalidArgument);
  bad = config;
  bad.sd_proposal = Vector::Constant(3, -1.0);
  CHECK_THROWS_AS(run_mcmc(problem, bad), InvalidArgument);
}

TEST_CASE("MCMC on a conjugate location model") {
  Rng rng(8);
  const int n = 12;
  const Vector y = random_vector(n, rng, 1.0, 3.0);
  Matrix range(1, 2);
  range << -20.0, 20.0;
  const CalibrationProblem problem = make_problem(Vector::LinSpaced(n, 0.0, 1.0), Observations::from_vector(y),
                                                  range, constant_model(), Discrepancy::None);
  McmcConfig config;
  config.samples = 40000;
  config.burn_in = 2000;
  config.sd_proposal = Vector::Constant(1, 0.01);
  config.seed = 3;
  const PosteriorSamples chain = run_mcmc(problem, config);
  // marginal posterior of theta: Student t with n - 1 dof centered at the sample mean
  const double s2 = (y.array() - y.mean()).square().sum() / (n - 1);
  const double sd = std::sqrt(s2 / n * (n - 1.0) / (n - 3.0));
  const double mean = chain.draws.col(0).mean();
  CHECK(std::abs(mean - y.mean()) < 0.1 * sd);
  const double var = (chain.draws.col(0).array() - mean).square().mean();
  CHECK(std::sqrt(var) == doctest::Approx(sd).epsilon(0.1));
}

TEST_CASE("MLE on least-squares problems") {
  Rng rng(9);
  const int n = 8;
  const Vector y = random_vector(n, rng, 0.0, 2.0);
  Matrix range(1, 2);
  range << -10.0, 10.0;
  CalibrationProblem problem = make_problem(Vector::LinSpaced(n, 0.0, 1.0), Observations::from_vector(y), range,
                                            constant_model(), Discrepancy::None);
  problem.output_weights = random_vector(n, rng, 0.5, 2.0);
  MleConfig config;
  config.restarts = 4;
  const MleResult fit = run_mle(problem, config);
  const double wmean = problem.output_weights.dot(y) / problem.output_weights.sum();
  CHECK(fit.theta[0] == doctest::Approx(wmean).epsilon(1e-6));
  CHECK(fit.traces.size() == 4);
  for (const auto& trace : fit.traces) CHECK(fit.loglik >= trace.start_loglik);

  // linear model: closed-form weighted least squares
  Matrix range2(2, 2);
  range2 << -10.0, 10.0, -10.0, 10.0;
  CalibrationProblem lin = make_problem(Vector::LinSpaced(n, 0.0, 1.0), Observations::from_vector(y), range2,
                                        linear_model(), Discrepancy::None);
  Matrix X(n, 2);
  X.col(0).setOnes();
  X.col(1) = Vector::LinSpaced(n, 0.0, 1.0);
  const Vector wls = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  const MleResult lfit = run_mle(lin, config);
  CHECK((lfit.theta - wls).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("MLE with a discrepancy reaches a stationary point") {
  CalibrationProblem problem = bayarri_problem(Discrepancy::GaSP);
  MleConfig config;
  config.restarts = 3;
  config.seed = 4;
  const MleResult fit = run_mle(problem, config);
  CHECK(fit.traces.size() == 3);
  CHECK(fit.theta[0] >= 0.0);
  CHECK(fit.sigma2_0 > 0.0);
  CHECK(fit.theta_m.size() == 1);
  for (const auto& trace : fit.traces) CHECK(fit.loglik >= trace.start_loglik);
  // interior optimum: projected gradient small
  const Vector g = profile_grad(problem, fit.theta, fit.range, fit.eta);
  Vector lower, upper;
  kernel_bounds(problem, lower, upper);
  const Vector x = fit.packed();
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x[i] > lower[i - 1] + 1e-6 && x[i] < upper[i - 1] - 1e-6) CHECK(std::abs(g[i]) < 1e-3);
  }
}
