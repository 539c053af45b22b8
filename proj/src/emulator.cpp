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

#include "robcal/emulator.hpp"

#include "robcal/inference.hpp"
#include "robcal/testbeds.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace robcal {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "robcal-emulator";

Vector extents(const Matrix& inputs) {
  return (inputs.colwise().maxCoeff() - inputs.colwise().minCoeff()).transpose();
}

/// Smallest positive gap between sorted values of each input column.
Vector min_spacing(const Matrix& inputs) {
  Vector out(inputs.cols());
  for (Eigen::Index l = 0; l < inputs.cols(); ++l) {
    std::vector<double> v(inputs.col(l).data(), inputs.col(l).data() + inputs.rows());
    std::sort(v.begin(), v.end());
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[i - 1]) gap = std::min(gap, v[i] - v[i - 1]);
    out[l] = gap;
  }
  return out;
}

/// Output columns with any spread; constant columns carry no information about the correlation.
std::vector<int> active_columns(const Matrix& outputs) {
  std::vector<int> active;
  for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
    const double lo = outputs.col(j).minCoeff(), hi = outputs.col(j).maxCoeff();
    if (hi - lo > 1e-12 * (1.0 + std::max(std::abs(lo), std::abs(hi)))) active.push_back(static_cast<int>(j));
  }
  return active;
}

JrPriorParams emulator_prior(const Matrix& inputs) {
  const double D = static_cast<double>(inputs.rows());
  const double p = static_cast<double>(inputs.cols());
  const double scale = std::pow(D, -1.0 / p);
  JrPriorParams prior;
  prior.a = 0.2;
  prior.b = scale * (prior.a + p);
  prior.C = scale * extents(inputs);
  return prior;
}

/// Shared pieces of the conditioned surrogate at fixed hyperparameters.
struct Conditioned {
  JitteredCholesky chol;
  Vector rinv_one;
  double one_rinv_one = 0.0;
  Vector mean;
  Matrix resid;
  Matrix weights;
  Vector s2;
};

Conditioned condition_on(const EmulatorDesign& design, const KernelSpec& kernel, const RangeParams& range,
                         double eta) {
  Conditioned c;
  const Eigen::Index D = design.inputs.rows();
  Matrix Rt = correlation(design.inputs, kernel, range);
  Rt.diagonal().array() += eta;
  c.chol = factor_with_jitter(Rt);
  c.rinv_one = c.chol.solve(Vector(Vector::Ones(D)));
  c.one_rinv_one = c.rinv_one.sum();
  if (!(c.one_rinv_one > 0.0)) throw NumericError("emulator correlation is not positive definite");
  c.mean = (c.rinv_one.transpose() * design.outputs).transpose() / c.one_rinv_one;
  c.resid = design.outputs.rowwise() - c.mean.transpose();
  c.weights = c.chol.solve(c.resid);
  c.s2 = (c.resid.array() * c.weights.array()).colwise().sum().transpose();
  return c;
}

double log_posterior_impl(const EmulatorDesign& design, const KernelSpec& kernel, const Vector& log_beta,
                          double log_eta, const std::vector<int>& active, Vector* gradient) {
  const RangeParams range = RangeParams::from_log_beta(log_beta);
  const double eta = design.nugget ? std::exp(log_eta) : 0.0;
  const Conditioned c = condition_on(design, kernel, range, eta);
  const double D = static_cast<double>(design.runs());
  const double ka = static_cast<double>(active.size());

  double value = -0.5 * ka * (c.chol.log_det() + std::log(c.one_rinv_one));
  for (int j : active) {
    if (!(c.s2[j] > 0.0)) throw NumericError("emulator profile variance is not positive");
    value -= 0.5 * (D - 1.0) * std::log(c.s2[j]);
  }

  const JrPriorParams prior = emulator_prior(design.inputs);
  // mode of the density in (beta, eta) itself, searched over log coordinates
  value += jr_log_prior(range.beta(), eta, prior);

  if (gradient) {
    const Eigen::Index p = log_beta.size();
    gradient->setZero(p + (design.nugget ? 1 : 0));
    // Q = Rtilde^{-1} - Rtilde^{-1} 1 1^T Rtilde^{-1} / (1^T Rtilde^{-1} 1)
    const Matrix Q = c.chol.inverse() - c.rinv_one * c.rinv_one.transpose() / c.one_rinv_one;
    Matrix scaled(design.runs(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t a = 0; a < active.size(); ++a)
      scaled.col(static_cast<Eigen::Index>(a)) = c.weights.col(active[a]) / std::sqrt(c.s2[active[a]]);
    const Matrix M = scaled * scaled.transpose();
    const Matrix A = -0.5 * ka * Q + 0.5 * (D - 1.0) * M;
    const std::vector<Matrix> dR = correlation_dgamma(design.inputs, kernel, range);
    const Vector beta = range.beta();
    const double t = prior.C.dot(beta) + eta;
    const double slope = prior.a / t - prior.b;
    for (Eigen::Index l = 0; l < p; ++l) {
      // d gamma / d log beta = -gamma
      (*gradient)[l] = -range.gamma[l] * (A.array() * dR[static_cast<std::size_t>(l)].array()).sum() +
                       slope * prior.C[l] * beta[l];
    }
    if (design.nugget) (*gradient)[p] = eta * A.trace() + slope * eta;
  }
  return value;
}

FittedEmulator fit_impl(const EmulatorDesign& design, EmulatorKind kind, const EmulatorFitOptions& options) {
  design.validate();
  require(options.restarts >= 1, "emulator fit needs at least one start");
  const int p = design.dim();
  const KernelSpec kernel = KernelSpec::uniform(KernelFamily::Matern52, p);
  const Vector L = extents(design.inputs);
  const std::vector<int> active = active_columns(design.outputs);

  if (active.empty()) return FittedEmulator::condition(design, kind, RangeParams::from_gamma(0.5 * L), 0.0);

  const int dim = p + (design.nugget ? 1 : 0);
  Vector lower(dim), upper(dim);
  lower.head(p) = -(1e3 * L).array().log();
  upper.head(p) = -(1e-3 * L).array().log();
  if (design.nugget) {
    lower[p] = -20.0;
    upper[p] = 2.0;
  }
  const Vector spacing = min_spacing(design.inputs);

  Rng rng(options.seed);
  const Matrix unit = latin_hypercube(options.restarts, dim, rng);
  Objective objective = [&](const Vector& x, Vector& grad) {
    try {
      Vector g;
      const double v =
          log_posterior_impl(design, kernel, x.head(p), design.nugget ? x[p] : 0.0, active, &g);
      grad = -g;
      return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      grad = Vector::Zero(x.size());
      return std::numeric_limits<double>::infinity();
    }
  };

  double best_value = std::numeric_limits<double>::infinity();
  Vector best;
  std::ostringstream failures;
  for (int s = 0; s < options.restarts; ++s) {
    // log gamma between the finest input spacing and the full extent
    Vector x0(dim);
    for (int l = 0; l < p; ++l) {
      const double lo = std::log(std::min(spacing[l], L[l])), hi = std::log(L[l]);
      x0[l] = -(lo + unit(s, l) * (hi - lo));
    }
    if (design.nugget) x0[p] = -8.0 + 6.0 * unit(s, p);
    x0 = x0.cwiseMax(lower).cwiseMin(upper);
    const LbfgsResult result = minimize_lbfgs(objective, x0, lower, upper, options.optimizer);
    if (std::isfinite(result.value) && result.value < best_value) {
      best_value = result.value;
      best = result.x;
    } else if (!std::isfinite(result.value)) {
      failures << " start " << s << ": " << result.message << ";";
    }
  }
  if (best.size() == 0) throw NumericError("emulator fit failed at every start:" + failures.str());
  return FittedEmulator::condition(design, kind, RangeParams::from_log_beta(best.head(p)),
                                   design.nugget ? std::exp(best[p]) : 0.0);
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& rows, const char* name) {
  if (!rows.is_array()) throw IoError(std::string("emulator field '") + name + "' must be an array of rows");
  if (rows.empty()) return Matrix();
  const std::size_t cols = rows[0].size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || rows[i].size() != cols)
      throw IoError(std::string("emulator field '") + name + "' has ragged rows");
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j].get<double>();
  }
  return m;
}

}  // namespace

void EmulatorDesign::validate() const {
  require(inputs.rows() == outputs.rows(), "emulator inputs and outputs need the same number of runs");
  require(inputs.cols() >= 1 && outputs.cols() >= 1, "emulator needs at least one input and one output");
  require(inputs.rows() >= inputs.cols() + 2, "emulator needs at least p + 2 runs");
  require(inputs.allFinite() && outputs.allFinite(), "emulator runs must be finite");
  require((extents(inputs).array() > 0.0).all(), "every emulator input must vary across runs");
  for (int idx : loc_index)
    require(idx >= 1 && idx <= outputs.cols(), "loc_index entries must lie in 1..k");
  require(coordinate_inputs.size() == 0 || coordinate_inputs.rows() == outputs.cols(),
          "coordinate_inputs needs one row per output coordinate");
}

FittedEmulator FittedEmulator::condition(EmulatorDesign design, EmulatorKind kind, const RangeParams& range,
                                         double eta) {
  design.validate();
  require(range.dim() == design.dim(), "range dimension does not match the emulator inputs");
  require(eta >= 0.0 && std::isfinite(eta), "emulator nugget must be non-negative");
  require(kind == EmulatorKind::Vector || design.coordinates() == 1, "scalar emulator needs one output column");
  FittedEmulator em;
  em.kind_ = kind;
  em.kernel_ = KernelSpec::uniform(KernelFamily::Matern52, design.dim());
  em.range_ = range;
  em.eta_ = design.nugget ? eta : 0.0;
  Conditioned c = condition_on(design, em.kernel_, range, em.eta_);
  em.chol_ = std::move(c.chol);
  em.mean_ = std::move(c.mean);
  em.weights_ = std::move(c.weights);
  em.rinv_one_ = std::move(c.rinv_one);
  em.one_rinv_one_ = c.one_rinv_one;
  const double D = static_cast<double>(design.runs());
  em.variance_ = (c.s2 / (D - 1.0)).cwiseMax(0.0);
  const std::vector<int> active = active_columns(design.outputs);
  em.log_post_ = active.empty() ? 0.0
                                : log_posterior_impl(design, em.kernel_, range.log_beta(),
                                                     em.eta_ > 0.0 ? std::log(em.eta_) : 0.0, active, nullptr);
  em.design_ = std::move(design);
  return em;
}

Vector FittedEmulator::predict(const Eigen::Ref<const Vector>& input) const {
  require(input.size() == design_.dim(), "emulator input has the wrong dimension");
  const Vector r = cross_corr(design_.inputs, input, kernel_, range_);
  return mean_ + weights_.transpose() * r;
}

Vector FittedEmulator::predict(const Eigen::Ref<const Vector>& input, const std::vector<int>& coordinates) const {
  require(input.size() == design_.dim(), "emulator input has the wrong dimension");
  const Vector r = cross_corr(design_.inputs, input, kernel_, range_);
  Vector out(static_cast<Eigen::Index>(coordinates.size()));
  for (std::size_t i = 0; i < coordinates.size(); ++i) {
    const int c = coordinates[i];
    require(c >= 0 && c < weights_.cols(), "emulator coordinate out of range");
    out[static_cast<Eigen::Index>(i)] = mean_[c] + weights_.col(c).dot(r);
  }
  return out;
}

Vector FittedEmulator::predict_variance(const Eigen::Ref<const Vector>& input) const {
  require(input.size() == design_.dim(), "emulator input has the wrong dimension");
  const Vector r = cross_corr(design_.inputs, input, kernel_, range_);
  const Vector rinv_r = chol_.solve(r);
  const double lift = 1.0 - rinv_one_.dot(r);
  const double c = std::max(0.0, 1.0 - r.dot(rinv_r) + lift * lift / one_rinv_one_);
  return variance_ * c;
}

bool FittedEmulator::extrapolating(const Eigen::Ref<const Vector>& input) const {
  const Vector lo = design_.inputs.colwise().minCoeff().transpose();
  const Vector hi = design_.inputs.colwise().maxCoeff().transpose();
  return (input.array() < lo.array()).any() || (input.array() > hi.array()).any();
}

FittedEmulator fit_scalar(const EmulatorDesign& design, const EmulatorFitOptions& options) {
  require(design.coordinates() == 1, "scalar emulator needs one output column");
  return fit_impl(design, EmulatorKind::Scalar, options);
}

FittedEmulator fit_ppgasp(const EmulatorDesign& design, const EmulatorFitOptions& options) {
  return fit_impl(design, EmulatorKind::Vector, options);
}

double emulator_log_posterior(const EmulatorDesign& design, const Vector& log_beta, double log_eta,
                              Vector* gradient) {
  design.validate();
  require(log_beta.size() == design.dim(), "log_beta dimension does not match the emulator inputs");
  const KernelSpec kernel = KernelSpec::uniform(KernelFamily::Matern52, design.dim());
  return log_posterior_impl(design, kernel, log_beta, log_eta, active_columns(design.outputs), gradient);
}

EmulatorPrediction emu_predict(const FittedEmulator& emulator, const Eigen::Ref<const Vector>& input,
                               const std::vector<int>& loc_index) {
  EmulatorPrediction out;
  const Vector mean = emulator.predict(input);
  const Vector var = emulator.predict_variance(input);
  out.extrapolation = emulator.extrapolating(input);
  if (loc_index.empty()) {
    out.mean = mean;
    out.variance = var;
    return out;
  }
  out.mean.resize(static_cast<Eigen::Index>(loc_index.size()));
  out.variance.resize(out.mean.size());
  for (std::size_t i = 0; i < loc_index.size(); ++i) {
    const int idx = loc_index[i];
    require(idx >= 1 && idx <= mean.size(), "loc_index entries must lie in 1..k");
    out.mean[static_cast<Eigen::Index>(i)] = mean[idx - 1];
    out.variance[static_cast<Eigen::Index>(i)] = var[idx - 1];
  }
  return out;
}

CalibrationProblem bind_emulator(CalibrationProblem problem, const FittedEmulator& emulator) {
  const EmulatorDesign& design = emulator.design();
  Simulator sim;
  sim.id = "emulator";
  if (emulator.kind() == EmulatorKind::Scalar) {
    require(design.dim() == problem.p_x() + problem.p_theta(),
            "scalar emulator inputs must be (x, theta) with matching dimensions");
    sim.evaluate = [emulator](const Matrix& x, const Vector& theta) {
      Vector out(x.rows());
      Vector row(x.cols() + theta.size());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        row << x.row(i).transpose(), theta;
        out[i] = emulator.predict(row)[0];
      }
      return out;
    };
  } else {
    require(design.dim() == problem.p_theta(), "vector emulator inputs must be the calibration parameters");
    if (design.coordinate_inputs.size() > 0) {
      require(design.coordinate_inputs.cols() == problem.p_x(), "coordinate_inputs do not match the field inputs");
      auto lookup = [coords = design.coordinate_inputs](const Matrix& x) {
        std::vector<int> index(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          Eigen::Index hit = -1;
          const double tol = 1e-9 * (1.0 + x.row(i).cwiseAbs().maxCoeff());
          for (Eigen::Index c = 0; c < coords.rows() && hit < 0; ++c)
            if ((coords.row(c) - x.row(i)).cwiseAbs().maxCoeff() <= tol) hit = c;
          require(hit >= 0, "input is not one of the emulator's output coordinates");
          index[static_cast<std::size_t>(i)] = static_cast<int>(hit);
        }
        return index;
      };
      // the field inputs are looked up once; other inputs on every call
      sim.evaluate = [emulator, lookup, field = problem.design, field_index = lookup(problem.design)](
                         const Matrix& x, const Vector& theta) {
        if (x.rows() == field.rows() && x.cols() == field.cols() && x == field)
          return emulator.predict(theta, field_index);
        return emulator.predict(theta, lookup(x));
      };
    } else {
      require(static_cast<int>(design.loc_index.size()) == problem.n(),
              "loc_index needs one entry per field input");
      std::vector<int> zero_based(design.loc_index.size());
      std::transform(design.loc_index.begin(), design.loc_index.end(), zero_based.begin(),
                     [](int i) { return i - 1; });
      sim.evaluate = [emulator, zero_based](const Matrix& x, const Vector& theta) {
        require(x.rows() == static_cast<Eigen::Index>(zero_based.size()),
                "without coordinate_inputs the emulator only evaluates at the field inputs");
        return emulator.predict(theta, zero_based);
      };
    }
  }
  problem.simulator = std::move(sim);
  return problem;
}

std::string emulator_to_json(const FittedEmulator& emulator) {
  const EmulatorDesign& d = emulator.design();
  nlohmann::json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["kind"] = emulator.kind() == EmulatorKind::Scalar ? "scalar" : "vector";
  j["kernel"] = "matern_5_2";
  j["nugget"] = d.nugget;
  j["gamma"] = std::vector<double>(emulator.range().gamma.data(),
                                   emulator.range().gamma.data() + emulator.range().gamma.size());
  j["eta"] = emulator.eta();
  j["log_marginal_posterior"] = emulator.log_marginal_posterior();
  j["inputs"] = matrix_to_json(d.inputs);
  j["outputs"] = matrix_to_json(d.outputs);
  j["loc_index"] = d.loc_index;
  j["coordinate_inputs"] = matrix_to_json(d.coordinate_inputs);
  return j.dump();
}

FittedEmulator emulator_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("emulator file version mismatch or corrupt content (not valid JSON): ") + e.what());
  }
  try {
    if (!j.is_object() || j.value("format", std::string()) != kFormatName)
      throw IoError("emulator file version mismatch: missing or unknown format tag");
    const int version = j.value("version", -1);
    if (version != kFormatVersion)
      throw IoError("emulator file version mismatch: found " + std::to_string(version) + ", expected " +
                    std::to_string(kFormatVersion));
    EmulatorDesign d;
    d.nugget = j.at("nugget").get<bool>();
    d.inputs = matrix_from_json(j.at("inputs"), "inputs");
    d.outputs = matrix_from_json(j.at("outputs"), "outputs");
    d.loc_index = j.at("loc_index").get<std::vector<int>>();
    d.coordinate_inputs = matrix_from_json(j.at("coordinate_inputs"), "coordinate_inputs");
    const std::vector<double> gamma = j.at("gamma").get<std::vector<double>>();
    const EmulatorKind kind = j.at("kind").get<std::string>() == "scalar" ? EmulatorKind::Scalar : EmulatorKind::Vector;
    return FittedEmulator::condition(std::move(d), kind,
                                     RangeParams::from_gamma(Eigen::Map<const Vector>(gamma.data(),
                                                                                      static_cast<Eigen::Index>(gamma.size()))),
                                     j.at("eta").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("emulator file version mismatch or corrupt content: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("emulator file version mismatch or corrupt content: ") + e.what());
  }
}

void save_emulator(const FittedEmulator& emulator, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write emulator file " + path);
  out << emulator_to_json(emulator) << '\n';
  if (!out) throw IoError("failed writing emulator file " + path);
}

FittedEmulator load_emulator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open emulator file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return emulator_from_json(buffer.str());
}

}  // namespace robcal
