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

// Acceptance suite: one PASS/FAIL line per criterion.
//
// Monte-Carlo criteria (1, 2, 3, 7, 8, 9) get up to two retries, each with a fresh seed derived from
// the base seed, criterion id and attempt number. A criterion passes when any attempt passes; every
// attempt is printed. The base seed defaults to kBaseSeed and can be changed with ROBCAL_ACCEPTANCE_SEED.
// Arguments select criteria by number; no arguments runs all of them.

#include "test_support.hpp"

#include "robcal/emulator.hpp"
#include "robcal/multisource.hpp"
#include "robcal/predict.hpp"
#include "robcal/testbeds.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

using namespace robcal;
using robcal::test::random_matrix;
using robcal::test::random_vector;
using robcal::test::uniform;

namespace {

constexpr std::uint64_t kBaseSeed = 20261018;
constexpr int kRetries = 2;

// criterion 1
constexpr double kC1MedianLo = 2.80, kC1MedianHi = 3.10;
constexpr double kC1Lower = 2.26, kC1Upper = 3.93, kC1EndpointTol = 0.25;
constexpr double kC1Seconds = 60.0;
// criterion 2: RMSE(CM + trend), RMSE(reality), coverage targets and tolerances
constexpr double kC2CmNone = 0.250, kC2CmNoneTol = 0.05;
constexpr double kC2CmGasp = 0.253, kC2CmSgasp = 0.228, kC2CmTol = 0.07;
constexpr double kC2Gasp = 0.151, kC2Sgasp = 0.131, kC2Tol = 0.05;
constexpr double kC2CovGasp = 0.975, kC2CovSgasp = 0.955, kC2CovNone = 0.795, kC2CovTol = 0.10;
// criterion 3
constexpr double kC3Default = 0.138, kC3DefaultTol = 0.05;
constexpr double kC3Small = 0.261, kC3SmallTol = 0.07, kC3SmallSd = 0.025;
// criterion 4
constexpr double kC4RelTol = 1e-8, kC4Speedup = 10.0;
// criterion 5
constexpr double kC5RelTol = 1e-5;
// criterion 6
constexpr double kC6LoglikTol = 1e-6, kC6RzTol = 1e-6;
// criterion 7
constexpr double kC7InterpTol = 1e-6, kC7RangeFraction = 0.02, kC7MeanTol = 0.1, kC7Speedup = 2.0;
// criterion 8
constexpr double kC8Center = 8.0, kC8Tol = 0.5, kC8Width = 2.0;
// criterion 9
constexpr double kC9Margin = 0.1, kC9SgaspMax = 0.30;
constexpr int kC9Samples = 3000, kC9BurnIn = 600;

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double best_of(int repeats, const std::function<void()>& work) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    work();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

double rmse(const Vector& a, const Vector& b) { return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size())); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

std::vector<double> column(const PosteriorSamples& s, int c) {
  return {s.draws.col(c).begin(), s.draws.col(c).end()};
}

CalibrationProblem bayarri(Discrepancy type) {
  const FieldData data = bayarri07_data();
  Matrix range(1, 2);
  range << 0.0, 50.0;
  return make_problem(data.design, data.observations, range, bayarri07_simulator(), type, Matrix::Ones(10, 1));
}

// ---------------------------------------------------------------------------------------------

Verdict criterion1(std::uint64_t seed) {
  McmcConfig config;
  config.seed = seed;
  const auto t0 = Clock::now();
  const PosteriorSamples s = run_mcmc(bayarri(Discrepancy::None), config);
  const double secs = seconds_since(t0);
  const std::vector<double> theta = column(s, 0);
  const double median = quantile_type7(theta, 0.5);
  const double lo = quantile_type7(theta, 0.025);
  const double hi = quantile_type7(theta, 0.975);
  const bool pass = median >= kC1MedianLo && median <= kC1MedianHi && within(lo, kC1Lower, kC1EndpointTol) &&
                    within(hi, kC1Upper, kC1EndpointTol) && secs < kC1Seconds;
  return {pass, "median " + fmt(median) + ", 95% (" + fmt(lo) + ", " + fmt(hi) + "), " + fmt(secs, 3) + " s"};
}

Verdict criterion2(std::uint64_t seed) {
  PredictionRequest req;
  req.testing_input = Vector::LinSpaced(200, 0.0, 5.0);
  req.X_testing = Matrix::Ones(200, 1);
  req.interval_probs = {0.025, 0.975};
  req.seed = seed;
  Vector truth(200);
  for (int i = 0; i < 200; ++i) truth[i] = bayarri07_reality(req.testing_input(i, 0));
  struct Row {
    double cm, full, coverage, length;
  };
  const auto evaluate = [&](Discrepancy type, std::uint64_t s) {
    const CalibrationProblem problem = bayarri(type);
    McmcConfig config;
    config.seed = s;
    const PredictionResult r = predict_posterior(problem, run_mcmc(problem, config), req);
    Row row{rmse(r.math_model_mean, truth), rmse(r.mean, truth), 0.0, 0.0};
    for (int i = 0; i < 200; ++i) {
      row.coverage += (truth[i] >= r.bounds(i, 0) && truth[i] <= r.bounds(i, 1)) ? 1.0 / 200 : 0.0;
      row.length += (r.bounds(i, 1) - r.bounds(i, 0)) / 200;
    }
    return row;
  };
  const Row none = evaluate(Discrepancy::None, seed);
  const Row gasp = evaluate(Discrepancy::GaSP, seed + 1);
  const Row sgasp = evaluate(Discrepancy::SGaSP, seed + 2);
  const bool pass = within(none.cm, kC2CmNone, kC2CmNoneTol) && within(gasp.cm, kC2CmGasp, kC2CmTol) &&
                    within(sgasp.cm, kC2CmSgasp, kC2CmTol) && within(gasp.full, kC2Gasp, kC2Tol) &&
                    within(sgasp.full, kC2Sgasp, kC2Tol) && within(gasp.coverage, kC2CovGasp, kC2CovTol) &&
                    within(sgasp.coverage, kC2CovSgasp, kC2CovTol) && within(none.coverage, kC2CovNone, kC2CovTol);
  const auto show = [](const char* name, const Row& r) {
    return std::string(name) + " cm " + fmt(r.cm, 3) + " rmse " + fmt(r.full, 3) + " cov " + fmt(r.coverage, 3) +
           " len " + fmt(r.length, 3);
  };
  return {pass, show("none", none) + "; " + show("GaSP", gasp) + "; " + show("S-GaSP", sgasp)};
}

Verdict criterion3(std::uint64_t seed) {
  McmcConfig config;
  config.seed = seed;
  const double base = run_mcmc(bayarri(Discrepancy::None), config).theta_acceptance_rate();
  config.sd_proposal = Vector::Constant(1, kC3SmallSd);
  config.seed = seed + 1;
  const double small = run_mcmc(bayarri(Discrepancy::None), config).theta_acceptance_rate();
  return {within(base, kC3Default, kC3DefaultTol) && within(small, kC3Small, kC3SmallTol),
          "default sd " + fmt(base) + ", sd 0.025 " + fmt(small)};
}

// f(x, theta) = theta_1 sin(theta_2 x_1) + x_1
Simulator wavy() {
  Simulator sim;
  sim.id = "wavy";
  sim.evaluate = [](const Matrix& x, const Vector& theta) {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = theta[0] * std::sin(theta[1] * x(i, 0)) + x(i, 0);
    return out;
  };
  return sim;
}

CalibrationProblem random_problem(Rng& rng, int n, const std::vector<int>& counts, Discrepancy type, bool trend) {
  CalibrationProblem p;
  p.design = random_matrix(n, 1, rng);
  std::vector<Vector> reps;
  for (int i = 0; i < n; ++i) reps.push_back(random_vector(counts[static_cast<std::size_t>(i)], rng, -1.0, 2.0));
  p.observations = Observations::from_ragged(reps);
  p.theta_range.resize(2, 2);
  p.theta_range << 0.0, 2.0, 0.5, 4.0;
  p.simulator = wavy();
  p.discrepancy = type;
  p.kernel = KernelSpec::uniform(KernelFamily::Matern52, 1);
  if (trend) {
    Matrix H(n, 2);
    H.col(0).setOnes();
    H.col(1) = p.design.col(0);
    p.trend = H;
  }
  return p;
}

struct DenseInputs {
  Vector y;
  Vector f;
  Matrix H;
  std::vector<int> counts;
};

DenseInputs expand(const CalibrationProblem& p, const Vector& theta) {
  DenseInputs d;
  std::vector<double> ys, fs;
  const Vector f = p.simulator(p.design, theta);
  std::vector<Eigen::Index> owner;
  for (int i = 0; i < p.n(); ++i) {
    const Vector& r = p.observations.replicates[static_cast<std::size_t>(i)];
    d.counts.push_back(static_cast<int>(r.size()));
    for (double v : r) {
      ys.push_back(v);
      fs.push_back(f[i]);
      owner.push_back(i);
    }
  }
  d.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  d.f = Eigen::Map<Vector>(fs.data(), static_cast<Eigen::Index>(fs.size()));
  if (p.trend) {
    d.H.resize(d.y.size(), p.trend->cols());
    for (Eigen::Index a = 0; a < d.y.size(); ++a) d.H.row(a) = p.trend->row(owner[static_cast<std::size_t>(a)]);
  }
  return d;
}

Matrix effective_R(const CalibrationProblem& p, const RangeParams& range, double eta, Discrepancy type) {
  const Matrix R = robcal::test::matern52_corr_ref(p.design, p.design, range.gamma);
  if (type != Discrepancy::SGaSP) return R;
  return robcal::test::scaled_ref(R, default_lambda_z(range.gamma, eta, p.n(), p.domain_lengths()));
}

// Cholesky-based dense profile likelihood over all N observations; used for the timing comparison.
double dense_profile_llt(const Matrix& C, const Vector& r, const Matrix* H) {
  const Eigen::LLT<Matrix> llt(C);
  Vector v = r;
  if (H) {
    const Matrix CiH = llt.solve(*H);
    v = r - *H * (H->transpose() * CiH).ldlt().solve(CiH.transpose() * r);
  }
  const double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * logdet - 0.5 * static_cast<double>(r.size()) * std::log(v.dot(llt.solve(v)));
}

Verdict criterion4(std::uint64_t) {
  Rng rng(401);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> n_dist(2, 6), k_dist(1, 4);
    const int n = n_dist(rng);
    std::vector<int> counts;
    for (int i = 0; i < n; ++i) counts.push_back(k_dist(rng));
    for (Discrepancy type : {Discrepancy::GaSP, Discrepancy::SGaSP}) {
      CalibrationProblem p = random_problem(rng, n, counts, type, trial % 2 == 0 && n > 2);
      p.output_weights = random_vector(n, rng, 0.5, 2.0);
      Vector theta(2);
      theta << uniform(rng, 0.0, 2.0), uniform(rng, 0.5, 4.0);
      const RangeParams range = RangeParams::from_gamma(Vector::Constant(1, uniform(rng, 0.1, 1.0)));
      const double eta = std::exp(uniform(rng, -2.0, 2.0));
      const double fast = replicate_profile_loglik(p, replicate_stats(p.observations, p.weights()), theta, range, eta, type);
      const DenseInputs d = expand(p, theta);
      const Matrix C = robcal::test::dense_replicate_cov(effective_R(p, range, eta, type), eta, d.counts, p.weights());
      const double dense = robcal::test::dense_profile_ref(C, d.y - d.f, p.trend ? &d.H : nullptr);
      worst = std::max(worst, std::abs(fast - dense) / std::max(1.0, std::abs(dense)));
    }
  }

  const std::vector<int> counts(50, 20);
  const CalibrationProblem big = random_problem(rng, 50, counts, Discrepancy::GaSP, false);
  Vector theta(2);
  theta << 1.0, 2.0;
  const RangeParams range = RangeParams::from_gamma(Vector::Constant(1, 0.3));
  const double eta = 0.5;
  double sink = 0.0;
  const double t_fast = best_of(5, [&] {
    sink += replicate_profile_loglik(big, replicate_stats(big.observations, big.weights()), theta, range, eta,
                                     Discrepancy::GaSP);
  });
  const double t_dense = best_of(3, [&] {
    const DenseInputs d = expand(big, theta);
    const Matrix C = robcal::test::dense_replicate_cov(effective_R(big, range, eta, Discrepancy::GaSP), eta, d.counts,
                                                       big.weights());
    sink += dense_profile_llt(C, d.y - d.f, nullptr);
  });
  const double speedup = t_dense / t_fast;
  return {worst <= kC4RelTol && speedup >= kC4Speedup && std::isfinite(sink),
          "max rel diff " + fmt(worst, 3) + ", speedup " + fmt(speedup, 3) + "x at n = 50, k = 20"};
}

Verdict criterion5(std::uint64_t) {
  Rng rng(501);
  double worst = 0.0;
  for (Discrepancy type : {Discrepancy::GaSP, Discrepancy::SGaSP}) {
    for (int trial = 0; trial < 50; ++trial) {
      const CalibrationProblem p = random_problem(rng, 6, {1, 2, 1, 3, 1, 1}, type, trial % 2 == 0);
      Vector x(4);
      x << uniform(rng, 0.2, 1.8), uniform(rng, 0.7, 3.5), uniform(rng, -1.0, 1.5), uniform(rng, -2.0, 2.0);
      const auto value = [&](const Vector& z) {
        return profile_loglik(p, z.head(2), RangeParams::from_log_beta(z.segment(2, 1)), std::exp(z[3])).loglik;
      };
      const Vector grad = profile_grad(p, x.head(2), RangeParams::from_log_beta(x.segment(2, 1)), std::exp(x[3]));
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (value(xp) - value(xm)) / (2.0 * h);
        worst = std::max(worst, std::abs(grad[i] - fd) / std::max(std::abs(fd), 1.0));
      }
    }
  }
  return {worst < kC5RelTol, "max relative error " + fmt(worst, 3) + " over 2 x 50 points"};
}

Verdict criterion6(std::uint64_t) {
  Rng rng(601);
  double loglik_gap = 0.0;
  double rz_max = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const CalibrationProblem p = random_problem(rng, 8, std::vector<int>(8, 1), Discrepancy::SGaSP, trial % 2 == 0);
    Vector theta(2);
    theta << uniform(rng, 0.0, 2.0), uniform(rng, 0.5, 4.0);
    const RangeParams range = RangeParams::from_gamma(Vector::Constant(1, uniform(rng, 0.1, 1.0)));
    const double eta = std::exp(uniform(rng, -2.0, 2.0));
    loglik_gap = std::max(loglik_gap, std::abs(sgasp_profile_loglik(p, theta, range, eta, 1e-12) -
                                               gasp_profile_loglik(p, theta, range, eta)));
    const Matrix R = correlation(p.design, p.kernel, range);
    rz_max = std::max(rz_max, scaled_corr(R, 1e12).Rz.cwiseAbs().maxCoeff());
  }
  return {loglik_gap <= kC6LoglikTol && rz_max < kC6RzTol,
          "|S-GaSP(1e-12) - GaSP| " + fmt(loglik_gap, 3) + ", max |R_z(1e12)| " + fmt(rz_max, 3)};
}

EmulatorDesign box_runs(int D, Rng& rng) {
  EmulatorDesign d;
  d.inputs = maximin_lhs(D, 2, rng).array() + 0.5;
  const Vector times = Vector::LinSpaced(350, 1.0, 350.0);
  d.outputs.resize(D, 350);
  for (int i = 0; i < D; ++i) d.outputs.row(i) = box_model(times, d.inputs(i, 0), d.inputs(i, 1)).transpose();
  d.coordinate_inputs = times;
  return d;
}

Verdict criterion7(std::uint64_t seed) {
  Rng rng(seed);
  const EmulatorDesign design = box_runs(50, rng);
  FittedEmulator em;
  const double t_fit = best_of(3, [&] { em = fit_ppgasp(design); });

  double interp = 0.0;
  for (int i = 0; i < design.runs(); ++i)
    interp = std::max(interp, (em.predict(design.inputs.row(i).transpose()) - design.outputs.row(i).transpose())
                                  .cwiseAbs()
                                  .maxCoeff());
  const double scale = std::max(1.0, design.outputs.cwiseAbs().maxCoeff());

  const Vector times = Vector::LinSpaced(350, 1.0, 350.0);
  const Matrix held = random_matrix(20, 2, rng, 0.5, 1.5);
  double se = 0.0, lo = 1e300, hi = -1e300;
  for (int i = 0; i < 20; ++i) {
    const Vector truth = box_model(times, held(i, 0), held(i, 1));
    se += (em.predict(held.row(i).transpose()) - truth).squaredNorm();
    lo = std::min(lo, truth.minCoeff());
    hi = std::max(hi, truth.maxCoeff());
  }
  const double held_rmse = std::sqrt(se / (20.0 * 350.0));

  const FieldData data = box_data();
  Matrix range(2, 2);
  range << 0.5, 1.5, 0.5, 1.5;
  const CalibrationProblem solver = make_problem(data.design, data.observations, range, box_simulator(), Discrepancy::SGaSP);
  const CalibrationProblem surrogate = bind_emulator(solver, em);
  McmcConfig config;
  config.seed = seed;
  config.sd_proposal = Vector(4);
  config.sd_proposal << 0.25, 0.25, 1.0, 1.0;
  PosteriorSamples a, b;
  const double t_solver = best_of(3, [&] { a = run_mcmc(solver, config); });
  const double t_emu = best_of(3, [&] { b = run_mcmc(surrogate, config); });
  const Vector mean_a = a.draws.leftCols(2).colwise().mean();
  const Vector mean_b = b.draws.leftCols(2).colwise().mean();
  const double gap = (mean_a - mean_b).cwiseAbs().maxCoeff();
  const double speedup = t_solver / (t_fit + t_emu);
  const bool pass = interp <= kC7InterpTol * scale && held_rmse < kC7RangeFraction * (hi - lo) && gap <= kC7MeanTol &&
                    speedup > kC7Speedup;
  return {pass, "interp " + fmt(interp, 3) + " (scale " + fmt(scale, 3) + "), held-out RMSE " + fmt(held_rmse, 3) +
                    " vs range " + fmt(hi - lo, 4) + ", means (" + fmt(mean_a[0]) + ", " + fmt(mean_a[1]) + ") vs (" +
                    fmt(mean_b[0]) + ", " + fmt(mean_b[1]) + "), speedup " + fmt(speedup, 3) + " (solver " +
                    fmt(t_solver, 3) + " s, fit + emulator " + fmt(t_fit + t_emu, 3) + " s)"};
}

Verdict criterion8(std::uint64_t seed) {
  Rng rng(seed);
  const Lorenz96Data data = lorenz96_scenario(1, rng);
  Matrix range(1, 2);
  range << -20.0, 20.0;
  bool pass = true;
  std::string detail;
  for (Discrepancy type : {Discrepancy::None, Discrepancy::GaSP, Discrepancy::SGaSP}) {
    const CalibrationProblem p = make_problem(data.design, Observations::from_vector(data.observations), range,
                                              lorenz96_simulator(data.x0), type);
    McmcConfig config;
    config.seed = seed + 1;
    const PosteriorSamples s = run_mcmc(p, config);
    const std::vector<double> theta = column(s, 0);
    const double mean = s.draws.col(0).mean();
    const double width = quantile_type7(theta, 0.975) - quantile_type7(theta, 0.025);
    pass = pass && within(mean, kC8Center, kC8Tol) && width < kC8Width;
    detail += (detail.empty() ? "" : "; ") + to_string(type) + " mean " + fmt(mean) + " width " + fmt(width, 3);
  }
  return {pass, detail};
}

Verdict criterion9(std::uint64_t seed) {
  Rng rng(seed);
  const MultiSourceData data = multisource_simulate(rng);
  const Matrix X = data.x;
  double worst_individual = 0.0, best_stacked = 1e300, sgasp_individual = 0.0;
  std::string detail;
  for (Discrepancy type : {Discrepancy::GaSP, Discrepancy::SGaSP}) {
    MultiSourceProblem p;
    p.theta_range.resize(1, 2);
    p.theta_range << 0.0, 2.0 * std::numbers::pi;
    p.measurement_bias = true;
    p.shared_design = X;
    p.discrepancy = type;
    p.kernel = KernelSpec::uniform(KernelFamily::Matern52, 1);
    for (const Vector& y : data.observations) p.sources.push_back(make_source(X, Observations::from_vector(y), sine_simulator()));
    MsMcmcConfig config;
    config.samples = kC9Samples;
    config.burn_in = kC9BurnIn;
    config.seed = seed + 1;
    const MsPosterior post = ms_mcmc_bias(p, config);
    const double individual = rmse(ms_predict(p, post, X, {}, 500).reality[0], data.reality);

    const CalibrationProblem stacked = stack_sources(p, type);
    McmcConfig single;
    single.samples = kC9Samples;
    single.burn_in = kC9BurnIn;
    single.seed = seed + 2;
    PredictionRequest req;
    req.testing_input = X;
    req.max_draws = 500;
    const double pooled = rmse(predict_posterior(stacked, run_mcmc(stacked, single), req).mean, data.reality);

    worst_individual = std::max(worst_individual, individual);
    best_stacked = std::min(best_stacked, pooled);
    if (type == Discrepancy::SGaSP) sgasp_individual = individual;
    detail += (detail.empty() ? "" : "; ") + to_string(type) + " individual " + fmt(individual, 3) + " stacked " +
              fmt(pooled, 3) + " (theta " + fmt(post.theta.col(0).mean(), 3) + ")";
  }
  return {best_stacked - worst_individual >= kC9Margin && sgasp_individual <= kC9SgaspMax, detail};
}

Verdict criterion10(std::uint64_t) {
  Rng rng(1001);
  std::vector<std::string> failed;
  // kernel PSD
  double min_eig = 1e300;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix design = random_matrix(12, 2, rng);
    for (KernelFamily family : {KernelFamily::Matern52, KernelFamily::Matern32, KernelFamily::PowExp}) {
      const Matrix R = correlation(design, KernelSpec::uniform(family, 2, 1.9),
                                   RangeParams::from_gamma(random_vector(2, rng, 0.1, 2.0)));
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Matrix>(R).eigenvalues().minCoeff());
    }
  }
  if (min_eig < -1e-10) failed.push_back("kernel PSD");
  // scaled kernel: 0 <= v' R_z v <= v' R v
  bool scaled_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix design = random_matrix(8, 2, rng);
    const Matrix R = correlation(design, KernelSpec::uniform(KernelFamily::Matern52, 2),
                                 RangeParams::from_gamma(random_vector(2, rng, 0.1, 1.0)));
    const Matrix Rz = scaled_corr(R, uniform(rng, 0.1, 100.0)).Rz;
    for (int k = 0; k < 10; ++k) {
      const Vector v = random_vector(8, rng, -1.0, 1.0);
      scaled_ok = scaled_ok && v.dot(Rz * v) >= -1e-10 && v.dot(Rz * v) <= v.dot(R * v) + 1e-10;
    }
  }
  if (!scaled_ok) failed.push_back("scaled-kernel inequality");
  // MCMC determinism
  McmcConfig config;
  config.samples = 400;
  config.burn_in = 100;
  config.seed = 7;
  const CalibrationProblem p = bayarri(Discrepancy::SGaSP);
  const PosteriorSamples a = run_mcmc(p, config), b = run_mcmc(p, config);
  config.seed = 8;
  const PosteriorSamples c = run_mcmc(p, config);
  if (!(a.draws == b.draws) || a.draws == c.draws) failed.push_back("MCMC determinism");
  // RK4 order: halving the step cuts the error of y' = -y by about 2^4
  OdeSystem decay;
  decay.dimension = 1;
  decay.rhs = [](double, const Vector& y, Vector& dy) { dy = -y; };
  decay.initial = Vector::Ones(1);
  decay.times = Vector::Constant(1, 2.0);
  std::vector<double> errors;
  for (double h : {0.2, 0.1, 0.05}) errors.push_back(std::abs(rk4_solve(decay, h)(0, 0) - std::exp(-2.0)));
  double order_ratio = 0.0;
  bool order_ok = true;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    order_ratio = errors[i - 1] / errors[i];
    order_ok = order_ok && order_ratio > 14.0 && order_ratio < 18.0;
  }
  if (!order_ok) failed.push_back("RK4 order");
  // LHS stratification
  bool lhs_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix lhs = maximin_lhs(17, 3, rng);
    for (int col = 0; col < 3; ++col) {
      std::set<int> strata;
      for (int r = 0; r < 17; ++r) strata.insert(static_cast<int>(lhs(r, col) * 17));
      lhs_ok = lhs_ok && strata.size() == 17;
    }
  }
  if (!lhs_ok) failed.push_back("LHS stratification");
  std::string detail = "min eigenvalue " + fmt(min_eig, 3) + ", RK4 error ratio " + fmt(order_ratio, 4);
  for (const std::string& f : failed) detail += ", failed: " + f;
  return {failed.empty(), detail};
}

struct Entry {
  int id;
  const char* name;
  std::function<Verdict(std::uint64_t)> run;
  bool monte_carlo;
};

}  // namespace

int main(int argc, char** argv) {
  std::uint64_t base = kBaseSeed;
  if (const char* env = std::getenv("ROBCAL_ACCEPTANCE_SEED")) base = std::strtoull(env, nullptr, 10);
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  const std::vector<Entry> entries{
      {1, "Bayarri-07 no-discrepancy posterior", criterion1, true},
      {2, "Bayarri-07 prediction table", criterion2, true},
      {3, "acceptance rates", criterion3, true},
      {4, "replicate likelihood vs dense oracle and speedup", criterion4, false},
      {5, "analytic gradient vs finite differences", criterion5, false},
      {6, "S-GaSP limits", criterion6, false},
      {7, "Box emulator accuracy, agreement and speedup", criterion7, true},
      {8, "Lorenz-96 scenario 1 forcing", criterion8, true},
      {9, "multi-source vs stacked reality RMSE", criterion9, true},
      {10, "property suites", criterion10, false},
  };

  int failures = 0;
  for (const Entry& e : entries) {
    if (!selected.empty() && !selected.count(e.id)) continue;
    const int attempts = e.monte_carlo ? 1 + kRetries : 1;
    Verdict v;
    int used = 0;
    for (int attempt = 0; attempt < attempts && !v.pass; ++attempt) {
      const std::uint64_t seed = base + 1000 * static_cast<std::uint64_t>(e.id) + 100 * static_cast<std::uint64_t>(attempt);
      try {
        v = e.run(seed);
      } catch (const std::exception& ex) {
        v = {false, std::string("error: ") + ex.what()};
      }
      ++used;
      if (attempts > 1) std::cout << "    attempt " << used << " seed " << seed << ": " << v.detail << '\n';
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << e.id << ": " << e.name;
    if (attempts > 1) std::cout << " [" << used << "/" << attempts << " attempts]";
    std::cout << " -- " << v.detail << std::endl;
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
