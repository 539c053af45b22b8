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

#include "robcal/multisource.hpp"

#include "chain.hpp"
#include "robcal/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace robcal {

namespace {

bool same_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

Vector random_normal(Eigen::Index n, Rng& rng) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
  return z;
}

// Shared discrepancy prior: sigma2 * R_eff(log_beta) at the shared design, with lambda_z frozen
// through eta_ref once burn-in ends.
struct SharedTerm {
  Matrix design;
  KernelSpec kernel;
  Discrepancy discrepancy = Discrepancy::GaSP;
  std::optional<double> fixed_lambda_z;
  Vector lengths;
  JrPriorParams prior;

  int n() const { return static_cast<int>(design.rows()); }
  int p_x() const { return static_cast<int>(design.cols()); }

  double lambda_z(const RangeParams& range, double eta_ref) const {
    if (discrepancy != Discrepancy::SGaSP) return 0.0;
    if (fixed_lambda_z) return *fixed_lambda_z;
    return default_lambda_z(range.gamma, eta_ref, n(), lengths);
  }

  FieldCovariance covariance(const Vector& log_beta, double eta_ref) const {
    const RangeParams range = RangeParams::from_log_beta(log_beta);
    return build_field_covariance(design, kernel, discrepancy, Vector::Zero(n()), range, 1.0,
                                  lambda_z(range, eta_ref));
  }
};

struct SharedState {
  Vector log_beta;
  double sigma2 = 1.0;
  double eta_ref = 1.0;
  double noise_ref = 1.0;  // mean source noise variance; sets eta = noise_ref / sigma2 in the prior
  FieldCovariance cov;
  Vector delta;
};

struct SourceRuntime {
  detail::FieldTerm term;
  detail::FieldState state;
  Vector f;
  Vector f_candidate;
};

Vector evaluate_source(const MultiSourceProblem& problem, int l, const Matrix& inputs, const Vector& theta) {
  const SourceSpec& s = problem.sources[static_cast<std::size_t>(l)];
  Vector f = s.simulator(inputs, problem.source_theta(l, theta));
  require(f.size() == inputs.rows(), "simulator of source " + std::to_string(l + 1) +
                                         " returned the wrong number of outputs");
  return f;
}

Vector ms_initial_theta(const MultiSourceProblem& problem, Rng& rng, int candidates = 20) {
  const Matrix points = detail::theta_lhs(problem.theta_range, candidates, rng);
  Vector best = points.row(0).transpose();
  double best_value = -std::numeric_limits<double>::infinity();
  std::vector<CalibrationProblem> singles;
  for (int l = 0; l < problem.k(); ++l) singles.push_back(problem.source_problem(l));
  for (int i = 0; i < candidates; ++i) {
    const Vector theta = points.row(i).transpose();
    double value = 0.0;
    try {
      for (int l = 0; l < problem.k(); ++l)
        value += no_disc_profile_loglik(singles[static_cast<std::size_t>(l)], problem.source_theta(l, theta)).loglik;
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

}  // namespace

SourceSpec make_source(Matrix design, Observations observations, Simulator simulator, std::vector<int> index_theta,
                       Discrepancy discrepancy) {
  SourceSpec s;
  s.kernel = KernelSpec::uniform(KernelFamily::Matern52, std::max<int>(static_cast<int>(design.cols()), 1));
  s.design = std::move(design);
  s.observations = std::move(observations);
  s.simulator = std::move(simulator);
  s.index_theta = std::move(index_theta);
  s.discrepancy = discrepancy;
  return s;
}

void MultiSourceProblem::validate() const {
  require(k() >= 1, "at least one source is required");
  require(theta_range.cols() == 2 && theta_range.rows() >= 1, "theta_range must be a p_theta x 2 matrix");
  for (int l = 0; l < k(); ++l) {
    const SourceSpec& s = sources[static_cast<std::size_t>(l)];
    const std::string name = "source " + std::to_string(l + 1);
    std::set<int> seen;
    for (int i : s.index_theta) {
      require(i >= 1 && i <= p_theta(), name + ": index_theta entries must lie in 1.." + std::to_string(p_theta()));
      require(seen.insert(i).second, name + ": index_theta has duplicate entries");
    }
    try {
      source_problem(l).validate();
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(name + ": " + e.what());
    }
  }
  if (measurement_bias) {
    require(shared_design.has_value(), "shared_design is required with measurement bias");
    require(discrepancy != Discrepancy::None, "the shared discrepancy needs a GaSP or S-GaSP model");
    kernel.validate();
    require(kernel.dim() == shared_design->cols(), "shared kernel dimension must match shared_design");
    for (int l = 0; l < k(); ++l)
      require(same_matrix(sources[static_cast<std::size_t>(l)].design, *shared_design),
              "with measurement bias every source design must equal shared_design (source " + std::to_string(l + 1) +
                  " differs)");
    if (lambda_z) require(*lambda_z > 0.0, "lambda_z must be positive");
  }
}

Vector MultiSourceProblem::source_theta(int l, const Vector& theta) const {
  require(theta.size() == p_theta(), "theta has the wrong dimension");
  const SourceSpec& s = sources.at(static_cast<std::size_t>(l));
  if (s.index_theta.empty()) return theta;
  Vector out(static_cast<Eigen::Index>(s.index_theta.size()));
  for (std::size_t i = 0; i < s.index_theta.size(); ++i) out[static_cast<Eigen::Index>(i)] = theta[s.index_theta[i] - 1];
  return out;
}

CalibrationProblem MultiSourceProblem::source_problem(int l) const {
  const SourceSpec& s = sources.at(static_cast<std::size_t>(l));
  CalibrationProblem p;
  p.design = s.design;
  p.observations = s.observations;
  p.trend = s.trend;
  p.output_weights = s.output_weights;
  p.discrepancy = s.discrepancy;
  p.kernel = s.kernel.dim() ? s.kernel : KernelSpec::uniform(KernelFamily::Matern52, std::max<int>(p.p_x(), 1));
  p.simulator = s.simulator;
  p.lambda_z = s.lambda_z;
  if (s.index_theta.empty()) {
    p.theta_range = theta_range;
  } else {
    p.theta_range.resize(static_cast<Eigen::Index>(s.index_theta.size()), 2);
    for (std::size_t i = 0; i < s.index_theta.size(); ++i) {
      const int idx = s.index_theta[i];
      require(idx >= 1 && idx <= p_theta(), "index_theta entry out of range");
      p.theta_range.row(static_cast<Eigen::Index>(i)) = theta_range.row(idx - 1);
    }
  }
  return p;
}

double ms_loglik_no_bias(const MultiSourceProblem& problem, const Vector& theta,
                         const std::vector<SourceKernelParams>& params) {
  require(!problem.measurement_bias, "the summed likelihood applies without measurement bias");
  problem.validate();
  require(static_cast<int>(params.size()) == problem.k(), "one kernel parameter set per source is required");
  double total = 0.0;
  for (int l = 0; l < problem.k(); ++l) {
    const CalibrationProblem single = problem.source_problem(l);
    const Vector theta_l = problem.source_theta(l, theta);
    const SourceKernelParams& kp = params[static_cast<std::size_t>(l)];
    total += single.discrepancy == Discrepancy::None ? no_disc_profile_loglik(single, theta_l).loglik
                                                     : profile_loglik(single, theta_l, kp.range, kp.eta).loglik;
  }
  return total;
}

void MsMcmcConfig::validate(int p_theta) const {
  require(burn_in >= 0, "burn-in must be non-negative");
  require(samples > burn_in, "number of samples must exceed the burn-in");
  require(thinning >= 1, "thinning must be at least 1");
  require(sd_kernel > 0.0, "kernel proposal sd must be positive");
  if (sd_theta.size()) {
    require(sd_theta.size() == p_theta, "sd_theta needs one entry per theta coordinate");
    require((sd_theta.array() > 0.0).all(), "sd_theta entries must be positive");
  }
}

double MsPosterior::theta_acceptance_rate() const {
  return iterations > 0 ? static_cast<double>(accept_theta.size()) / iterations : 0.0;
}

namespace {

// Sources observe the shared discrepancy through z_l = delta + e_l, e_l ~ N(0, C_l). Everything needed
// for the collapsed theta likelihood and the delta draw, built once per iteration.
struct SharedSystem {
  std::vector<JitteredCholesky> noise;
  Matrix K;
  Matrix C_bar;  // (sum_l C_l^{-1})^{-1}
  JitteredCholesky C_bar_chol;
  JitteredCholesky K_chol;
  JitteredCholesky sum;  // K + C_bar
};

SharedSystem shared_system(const Matrix& K, const std::vector<Matrix>& noise_covariances) {
  SharedSystem sys;
  sys.K = K;
  for (const Matrix& C : noise_covariances) sys.noise.push_back(factor_with_jitter(C));
  if (sys.noise.size() == 1) {
    sys.C_bar = noise_covariances[0];
  } else {
    Matrix precision = Matrix::Zero(K.rows(), K.cols());
    for (const JitteredCholesky& c : sys.noise) precision += c.inverse();
    sys.C_bar = factor_with_jitter(precision).inverse();
    sys.C_bar = 0.5 * (sys.C_bar + sys.C_bar.transpose()).eval();
  }
  sys.C_bar_chol = factor_with_jitter(sys.C_bar);
  sys.K_chol = factor_with_jitter(K);
  sys.sum = factor_with_jitter(K + sys.C_bar);
  return sys;
}

// b^T (K^{-1} + sum_l C_l^{-1})^{-1} b
double explained(const Matrix& K, const JitteredCholesky& sum, const Vector& b) {
  const Vector kb = K * b;
  return b.dot(kb) - kb.dot(sum.solve(kb));
}

// sum_l r_l^T C_l^{-1} r_l and b = sum_l C_l^{-1} r_l
double precision_terms(const SharedSystem& sys, const std::vector<Vector>& residuals, Vector& b) {
  double quad = 0.0;
  b = Vector::Zero(sys.K.rows());
  for (std::size_t l = 0; l < residuals.size(); ++l) {
    const Vector solved = sys.noise[l].solve(residuals[l]);
    quad += residuals[l].dot(solved);
    b += solved;
  }
  return quad;
}

// log N(z_1..z_k; 1 x delta, blockdiag(C_l)) with delta ~ N(0, K) integrated out, up to theta-free terms.
double collapsed_loglik(const SharedSystem& sys, const std::vector<Vector>& residuals) {
  Vector b;
  const double quad = precision_terms(sys, residuals, b);
  return -0.5 * (quad - explained(sys.K, sys.sum, b));
}

Vector draw_from_system(const SharedSystem& sys, const std::vector<Vector>& residuals, Rng& rng) {
  const Eigen::Index n = sys.K.rows();
  Vector z_bar;
  if (residuals.size() == 1) {
    z_bar = residuals[0];
  } else {
    Vector b = Vector::Zero(n);
    for (std::size_t l = 0; l < residuals.size(); ++l) b += sys.noise[l].solve(residuals[l]);
    z_bar = sys.C_bar * b;
  }
  const Vector prior_draw = sys.K_chol.llt.matrixL() * random_normal(n, rng);
  const Vector noise_draw = sys.C_bar_chol.llt.matrixL() * random_normal(n, rng);
  return prior_draw + sys.K * sys.sum.solve(Vector(z_bar - prior_draw - noise_draw));
}

}  // namespace

Vector draw_shared_discrepancy(const Matrix& K, const std::vector<Vector>& residuals,
                               const std::vector<Matrix>& noise_covariances, Rng& rng) {
  require(!residuals.empty() && residuals.size() == noise_covariances.size(), "one noise covariance per residual");
  return draw_from_system(shared_system(K, noise_covariances), residuals, rng);
}

MsPosterior ms_mcmc(const MultiSourceProblem& problem, const MsMcmcConfig& config) {
  problem.validate();
  config.validate(problem.p_theta());
  const int k = problem.k();
  const bool bias = problem.measurement_bias;
  const Vector widths = problem.theta_range.col(1) - problem.theta_range.col(0);
  const Vector sd_theta =
      (config.sd_theta.size() ? config.sd_theta : Vector::Constant(problem.p_theta(), 0.05)).cwiseProduct(widths);

  Rng rng(config.seed);
  Vector theta = config.initial_theta ? *config.initial_theta : ms_initial_theta(problem, rng);
  require(theta.size() == problem.p_theta(), "initial theta has the wrong dimension");
  for (int i = 0; i < problem.p_theta(); ++i)
    require(theta[i] >= problem.theta_range(i, 0) && theta[i] <= problem.theta_range(i, 1),
            "initial theta lies outside theta_range");

  std::vector<SourceRuntime> src(static_cast<std::size_t>(k));
  for (int l = 0; l < k; ++l) {
    const CalibrationProblem single = problem.source_problem(l);
    SourceRuntime& s = src[static_cast<std::size_t>(l)];
    s.term = detail::FieldTerm::from_problem(single, JrPriorParams::defaults(single.design));
    s.f = evaluate_source(problem, l, single.design, theta);
    if (!s.f.allFinite()) throw NumericError("simulator output is not finite at the initial theta");
    s.state = detail::initial_field_state(s.term, s.f);
  }

  SharedTerm shared;
  SharedState sh;
  if (bias) {
    shared.design = *problem.shared_design;
    shared.kernel = problem.kernel;
    shared.discrepancy = problem.discrepancy;
    shared.fixed_lambda_z = problem.lambda_z;
    shared.lengths = (shared.design.colwise().maxCoeff() - shared.design.colwise().minCoeff()).transpose();
    shared.prior = JrPriorParams::defaults(shared.design);
    detail::FieldTerm probe;
    probe.design = shared.design;
    probe.lengths = shared.lengths;
    sh.log_beta = detail::default_log_params(probe).head(shared.p_x());
    Vector mean_residual = Vector::Zero(shared.n());
    for (const SourceRuntime& s : src) mean_residual += detail::field_residual(s.term, s.state, s.f) / k;
    sh.sigma2 = std::max(0.5 * (mean_residual.array() - mean_residual.mean()).square().mean(), 1e-8);
    sh.delta = Vector::Zero(shared.n());
  }
  const auto refresh_eta_ref = [&] {
    double noise = 0.0;
    for (const SourceRuntime& s : src) noise += s.state.sigma2_0 / k;
    sh.noise_ref = noise;
    sh.eta_ref = noise / sh.sigma2;
  };
  // JR prior on (beta, eta) with eta = noise_ref / sigma2, in (log beta, log sigma2) coordinates
  const auto shared_log_prior = [&](const Vector& log_beta, double log_sigma2) {
    Vector coords(log_beta.size() + 1);
    coords << log_beta, std::log(sh.noise_ref) - log_sigma2;
    return jr_log_prior_log_coords(coords, shared.prior, true);
  };
  if (bias) {
    refresh_eta_ref();
    sh.cov = shared.covariance(sh.log_beta, sh.eta_ref);
  }
  // the offset each source sees from the shared discrepancy
  const auto offset = [&](const Vector& f) { return bias ? Vector(f + sh.delta) : f; };

  MsPosterior out;
  out.measurement_bias = bias;
  out.discrepancy = bias ? problem.discrepancy : Discrepancy::None;
  out.iterations = config.samples;
  const int rows = (config.samples - config.burn_in) / config.thinning;
  out.theta.resize(rows, problem.p_theta());
  out.sources.resize(static_cast<std::size_t>(k));
  for (int l = 0; l < k; ++l) {
    const detail::FieldTerm& term = src[static_cast<std::size_t>(l)].term;
    MsSourceChain& c = out.sources[static_cast<std::size_t>(l)];
    c.log_params.resize(rows, term.has_kernel() ? term.p_x() + 1 : 0);
    c.sigma2_0.resize(rows);
    c.theta_m.resize(rows, term.trend ? term.trend->cols() : 0);
    if (term.discrepancy == Discrepancy::SGaSP) c.lambda_z.resize(rows);
  }
  if (bias) {
    out.shared_log_beta.resize(rows, shared.p_x());
    out.shared_sigma2.resize(rows);
    if (shared.discrepancy == Discrepancy::SGaSP) out.shared_lambda_z.resize(rows);
    out.delta.resize(rows, shared.n());
  }

  const LogLikelihood theta_loglik = [&](const Vector& t) {
    double total = 0.0;
    for (int l = 0; l < k; ++l) {
      SourceRuntime& s = src[static_cast<std::size_t>(l)];
      try {
        s.f_candidate = evaluate_source(problem, l, s.term.design, t);
      } catch (const NumericError&) {
        return -std::numeric_limits<double>::infinity();
      }
      total += detail::theta_conditional(s.term, s.state, s.f_candidate);
    }
    return total;
  };

  int row = 0;
  for (int it = 0; it < config.samples; ++it) {
    if (!bias) {
      double current = 0.0;
      for (const SourceRuntime& s : src) current += detail::theta_conditional(s.term, s.state, s.f);
      const MetropolisStep step =
          metropolis_theta_block(theta, current, theta_loglik, problem.theta_range, sd_theta, rng);
      if (step.accepted) {
        theta = step.value;
        for (SourceRuntime& s : src) s.f = s.f_candidate;
        out.accept_theta.push_back(it);
      }
    } else {
      if (it < config.burn_in && !problem.lambda_z) {
        refresh_eta_ref();
        sh.cov = shared.covariance(sh.log_beta, sh.eta_ref);
      }
      // theta with the shared discrepancy integrated out, then delta from its conditional
      std::vector<Matrix> covariances;
      for (const SourceRuntime& s : src) covariances.push_back(s.state.sigma2_0 * s.state.cov.Rtilde);
      SharedSystem sys = shared_system(sh.sigma2 * sh.cov.effective_R(), covariances);
      const auto residuals_at = [&](bool candidate) {
        std::vector<Vector> r;
        for (const SourceRuntime& s : src) r.push_back(detail::field_residual(s.term, s.state, candidate ? s.f_candidate : s.f));
        return r;
      };
      const LogLikelihood collapsed = [&](const Vector& t) {
        for (int l = 0; l < k; ++l) {
          SourceRuntime& s = src[static_cast<std::size_t>(l)];
          try {
            s.f_candidate = evaluate_source(problem, l, s.term.design, t);
          } catch (const NumericError&) {
            return -std::numeric_limits<double>::infinity();
          }
          if (!s.f_candidate.allFinite()) return -std::numeric_limits<double>::infinity();
        }
        return collapsed_loglik(sys, residuals_at(true));
      };
      const MetropolisStep step = metropolis_theta_block(theta, collapsed_loglik(sys, residuals_at(false)), collapsed,
                                                         problem.theta_range, sd_theta, rng);
      if (step.accepted) {
        theta = step.value;
        for (SourceRuntime& s : src) s.f = s.f_candidate;
        out.accept_theta.push_back(it);
      }

      // (log beta, log sigma2) of the shared discrepancy, also with delta integrated out
      const std::vector<Vector> residuals = residuals_at(false);
      Vector b;
      precision_terms(sys, residuals, b);
      const auto marginal = [&](const Matrix& K, const JitteredCholesky& sum) {
        return -0.5 * sum.log_det() + 0.5 * explained(K, sum, b);
      };
      Vector proposal(shared.p_x() + 1);
      for (int j = 0; j < shared.p_x(); ++j) proposal[j] = sh.log_beta[j] + config.sd_kernel * standard_normal(rng);
      proposal[shared.p_x()] = std::log(sh.sigma2) + config.sd_kernel * standard_normal(rng);
      const Vector new_beta = proposal.head(shared.p_x());
      const double prior_new = shared_log_prior(new_beta, proposal[shared.p_x()]);
      if (std::isfinite(prior_new)) {
        try {
          FieldCovariance cov = shared.covariance(new_beta, sh.eta_ref);
          const Matrix K = std::exp(proposal[shared.p_x()]) * cov.effective_R();
          JitteredCholesky sum = factor_with_jitter(K + sys.C_bar);
          const double log_ratio = marginal(K, sum) + prior_new - marginal(sys.K, sys.sum) -
                                   shared_log_prior(sh.log_beta, std::log(sh.sigma2));
          std::uniform_real_distribution<double> uniform(0.0, 1.0);
          if (log_ratio >= 0.0 || std::log(uniform(rng)) < log_ratio) {
            sh.log_beta = new_beta;
            sh.sigma2 = std::exp(proposal[shared.p_x()]);
            sh.cov = std::move(cov);
            sys.K = K;
            sys.K_chol = factor_with_jitter(K);
            sys.sum = std::move(sum);
            out.accept_shared.push_back(it);
          }
        } catch (const NumericError&) {
        }
      }
      sh.delta = draw_from_system(sys, residuals, rng);
    }

    for (SourceRuntime& s : src) {
      const Vector f_eff = offset(s.f);
      if (s.term.has_kernel()) {
        const Vector sd = Vector::Constant(s.term.p_x() + 1, config.sd_kernel);
        detail::update_kernel(s.term, s.state, f_eff, sd, rng);
      }
      detail::update_sigma(s.term, s.state, f_eff, rng);
      detail::update_trend(s.term, s.state, f_eff, rng);
    }

    if (it >= config.burn_in && (it - config.burn_in + 1) % config.thinning == 0 && row < rows) {
      out.theta.row(row) = theta.transpose();
      for (int l = 0; l < k; ++l) {
        const SourceRuntime& s = src[static_cast<std::size_t>(l)];
        MsSourceChain& c = out.sources[static_cast<std::size_t>(l)];
        if (c.log_params.cols()) c.log_params.row(row) = s.state.log_params.transpose();
        c.sigma2_0[row] = s.state.sigma2_0;
        if (c.theta_m.cols()) c.theta_m.row(row) = s.state.theta_m.transpose();
        if (c.lambda_z.size()) c.lambda_z[row] = s.state.cov.lambda_z;
      }
      if (bias) {
        out.shared_log_beta.row(row) = sh.log_beta.transpose();
        out.shared_sigma2[row] = sh.sigma2;
        if (out.shared_lambda_z.size()) out.shared_lambda_z[row] = sh.cov.lambda_z;
        out.delta.row(row) = sh.delta.transpose();
      }
      ++row;
    }
  }
  out.shared_eta = bias ? sh.eta_ref : 0.0;
  return out;
}

MsPosterior ms_mcmc_bias(const MultiSourceProblem& problem, const MsMcmcConfig& config) {
  require(problem.measurement_bias, "measurement_bias must be enabled");
  return ms_mcmc(problem, config);
}

CalibrationProblem stack_sources(const MultiSourceProblem& problem, Discrepancy discrepancy) {
  problem.validate();
  const int k = problem.k();
  const SourceSpec& first = problem.sources.front();
  Vector sum = Vector::Zero(first.design.rows());
  Vector lambda_sum = Vector::Zero(first.design.rows());
  for (int l = 0; l < k; ++l) {
    const SourceSpec& s = problem.sources[static_cast<std::size_t>(l)];
    require(same_matrix(s.design, first.design), "stacking needs equal designs (source " + std::to_string(l + 1) +
                                                     " differs)");
    require(s.trend.has_value() == first.trend.has_value() && (!s.trend || same_matrix(*s.trend, *first.trend)),
            "stacking needs identical trend bases");
    const ReplicateStats stats = replicate_stats(s.observations, problem.source_problem(l).weights());
    sum += stats.mean;
    lambda_sum += stats.lambda_diag;
  }
  CalibrationProblem p;
  p.design = first.design;
  p.observations = Observations::from_vector(sum / k);
  const Vector weights = (k / lambda_sum.array()).matrix();
  if (!(weights.array() == 1.0).all()) p.output_weights = weights;
  p.trend = first.trend;
  p.theta_range = problem.theta_range;
  p.discrepancy = discrepancy;
  p.kernel = KernelSpec::uniform(KernelFamily::Matern52, std::max<int>(static_cast<int>(first.design.cols()), 1));
  p.lambda_z = problem.lambda_z;
  if (k == 1 && first.index_theta.empty()) {
    p.simulator = first.simulator;
  } else {
    p.simulator.id = "stack";
    p.simulator.evaluate = [problem](const Matrix& inputs, const Vector& theta) {
      Vector total = Vector::Zero(inputs.rows());
      for (int l = 0; l < problem.k(); ++l) total += evaluate_source(problem, l, inputs, theta);
      return Vector(total / problem.k());
    };
  }
  p.validate();
  return p;
}

MsPrediction ms_predict(const MultiSourceProblem& problem, const MsPosterior& posterior, const Matrix& testing_input,
                        const std::vector<Matrix>& X_testing, int max_draws) {
  problem.validate();
  const int k = problem.k();
  require(posterior.rows() >= 1, "posterior has no draws");
  require(posterior.measurement_bias == problem.measurement_bias, "posterior and problem disagree on measurement bias");
  require(static_cast<int>(posterior.sources.size()) == k, "posterior and problem have different source counts");
  require(posterior.theta.cols() == problem.p_theta(), "posterior theta has the wrong dimension");
  require(testing_input.rows() >= 1, "no testing inputs");
  require(max_draws >= 0, "max_draws must be non-negative");
  require(X_testing.empty() || static_cast<int>(X_testing.size()) == k, "X_testing needs one matrix per source");

  std::vector<detail::FieldTerm> terms;
  for (int l = 0; l < k; ++l) {
    const CalibrationProblem single = problem.source_problem(l);
    require(testing_input.cols() == single.p_x(), "testing inputs have the wrong number of columns");
    if (single.trend) {
      require(!X_testing.empty(), "X_testing is required for source " + std::to_string(l + 1));
      const Matrix& xt = X_testing[static_cast<std::size_t>(l)];
      require(xt.rows() == testing_input.rows() && xt.cols() == single.q(), "X_testing has the wrong shape");
    }
    terms.push_back(detail::FieldTerm::from_problem(single, JrPriorParams::defaults(single.design)));
  }
  const bool bias = problem.measurement_bias;
  SharedTerm shared;
  if (bias) {
    shared.design = *problem.shared_design;
    shared.kernel = problem.kernel;
    shared.discrepancy = problem.discrepancy;
    shared.fixed_lambda_z = problem.lambda_z;
    shared.lengths = (shared.design.colwise().maxCoeff() - shared.design.colwise().minCoeff()).transpose();
  }

  std::vector<int> rows;
  if (max_draws == 0 || max_draws >= posterior.rows()) {
    for (int r = 0; r < posterior.rows(); ++r) rows.push_back(r);
  } else {
    const double stride = static_cast<double>(posterior.rows()) / max_draws;
    for (int i = 0; i < max_draws; ++i) rows.push_back(static_cast<int>(std::floor(i * stride)));
  }

  const Eigen::Index m = testing_input.rows();
  MsPrediction out;
  out.model.assign(static_cast<std::size_t>(k), Vector::Zero(m));
  out.reality.assign(static_cast<std::size_t>(k), Vector::Zero(m));
  out.bias.assign(static_cast<std::size_t>(k), Vector::Zero(m));
  if (bias) out.discrepancy = Vector::Zero(m);

  for (int row : rows) {
    const Vector theta = posterior.theta.row(row).transpose();
    Vector delta_x = Vector::Zero(m);
    Vector delta_design;
    if (bias) {
      delta_design = posterior.delta.row(row).transpose();
      const RangeParams range = RangeParams::from_log_beta(posterior.shared_log_beta.row(row).transpose());
      const double lambda_z = posterior.shared_lambda_z.size() ? posterior.shared_lambda_z[row] : 0.0;
      const FieldCovariance cov = build_field_covariance(shared.design, shared.kernel, shared.discrepancy,
                                                         Vector::Zero(shared.n()), range, 1.0, lambda_z);
      delta_x = discrepancy_conditional(shared.design, shared.kernel, cov, delta_design, testing_input).mean;
      out.discrepancy += delta_x;
    }
    for (int l = 0; l < k; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      const detail::FieldTerm& term = terms[ul];
      const MsSourceChain& chain = posterior.sources[ul];
      Vector model = evaluate_source(problem, l, testing_input, theta);
      if (term.trend) model += X_testing[ul] * chain.theta_m.row(row).transpose();
      Vector own = Vector::Zero(m);
      if (term.has_kernel()) {
        detail::FieldState state;
        state.theta_m = chain.theta_m.cols() ? Vector(chain.theta_m.row(row).transpose()) : Vector();
        state.log_params = chain.log_params.row(row).transpose();
        const RangeParams range = detail::range_of(state.log_params, term.p_x());
        const double eta = std::exp(state.log_params[term.p_x()]);
        const double lambda_z = chain.lambda_z.size() ? chain.lambda_z[row] : 0.0;
        const FieldCovariance cov =
            build_field_covariance(term.design, term.kernel, term.discrepancy, term.lambda_diag, range, eta, lambda_z);
        Vector f = evaluate_source(problem, l, term.design, theta);
        if (bias) f += delta_design;
        own = discrepancy_conditional(term.design, term.kernel, cov, detail::field_residual(term, state, f),
                                      testing_input)
                  .mean;
      }
      out.model[ul] += model;
      out.bias[ul] += own;
      out.reality[ul] += bias ? Vector(model + delta_x) : Vector(model + own);
    }
  }
  const double count = static_cast<double>(rows.size());
  for (int l = 0; l < k; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    out.model[ul] /= count;
    out.reality[ul] /= count;
    out.bias[ul] /= count;
  }
  if (bias) out.discrepancy /= count;
  return out;
}

}  // namespace robcal
