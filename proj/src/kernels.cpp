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

#include "robcal/kernels.hpp"

#include <cmath>
#include <sstream>

namespace robcal {

namespace {

const double kSqrt5 = std::sqrt(5.0);
const double kSqrt3 = std::sqrt(3.0);

void check_range(const KernelSpec& spec, const RangeParams& range) {
  if (spec.dim() != range.dim()) {
    std::ostringstream msg;
    msg << "kernel dimension " << spec.dim() << " does not match " << range.dim() << " range parameters";
    throw InvalidArgument(msg.str());
  }
  for (int l = 0; l < range.dim(); ++l) {
    if (!(range.gamma[l] > 0.0) || !std::isfinite(range.gamma[l]))
      throw InvalidArgument("range parameters must be positive and finite");
  }
}

bool factor_ok(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto diag = llt.matrixLLT().diagonal();
  return diag.allFinite() && (diag.array() > 0.0).all();
}

}  // namespace

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "matern_5_2") return KernelFamily::Matern52;
  if (name == "matern_3_2") return KernelFamily::Matern32;
  if (name == "pow_exp") return KernelFamily::PowExp;
  throw InvalidArgument("unknown kernel family '" + name + "'");
}

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Matern52: return "matern_5_2";
    case KernelFamily::Matern32: return "matern_3_2";
    case KernelFamily::PowExp: return "pow_exp";
  }
  return "unknown";
}

KernelSpec KernelSpec::uniform(KernelFamily family, int dim, double alpha) {
  KernelSpec spec;
  spec.families.assign(static_cast<std::size_t>(dim), family);
  spec.alpha.assign(static_cast<std::size_t>(dim), alpha);
  spec.validate();
  return spec;
}

void KernelSpec::validate() const {
  require(dim() >= 1, "kernel needs at least one input dimension");
  require(alpha.size() == families.size(), "kernel roughness list must match the number of dimensions");
  for (std::size_t l = 0; l < families.size(); ++l) {
    if (families[l] == KernelFamily::PowExp)
      require(alpha[l] > 0.0 && alpha[l] <= 2.0, "pow_exp roughness must lie in (0, 2]");
  }
}

RangeParams RangeParams::from_gamma(Vector gamma) {
  RangeParams range{std::move(gamma)};
  for (int l = 0; l < range.dim(); ++l)
    require(range.gamma[l] > 0.0 && std::isfinite(range.gamma[l]), "range parameters must be positive and finite");
  return range;
}

RangeParams RangeParams::from_log_beta(const Vector& log_beta) {
  return RangeParams{(-log_beta.array()).exp().matrix()};
}

double kernel_1d(KernelFamily family, double alpha, double d, double gamma) {
  d = std::abs(d);
  switch (family) {
    case KernelFamily::Matern52: {
      const double s = kSqrt5 * d / gamma;
      return (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    case KernelFamily::Matern32: {
      const double s = kSqrt3 * d / gamma;
      return (1.0 + s) * std::exp(-s);
    }
    case KernelFamily::PowExp:
      return std::exp(-std::pow(d / gamma, alpha));
  }
  return 0.0;
}

double kernel_1d_dgamma(KernelFamily family, double alpha, double d, double gamma) {
  d = std::abs(d);
  switch (family) {
    case KernelFamily::Matern52: {
      const double s = kSqrt5 * d / gamma;
      return s * s * (1.0 + s) / (3.0 * gamma) * std::exp(-s);
    }
    case KernelFamily::Matern32: {
      const double s = kSqrt3 * d / gamma;
      return s * s / gamma * std::exp(-s);
    }
    case KernelFamily::PowExp: {
      if (d == 0.0) return 0.0;
      const double u = std::pow(d / gamma, alpha);
      return std::exp(-u) * alpha * u / gamma;
    }
  }
  return 0.0;
}

double kernel_eval(const KernelSpec& spec, const RangeParams& range, const Eigen::Ref<const Vector>& d) {
  check_range(spec, range);
  if (d.size() != spec.dim()) throw InvalidArgument("displacement has wrong dimension");
  if (!d.allFinite()) throw InvalidArgument("displacement must be finite");
  double value = 1.0;
  for (int l = 0; l < spec.dim(); ++l)
    value *= kernel_1d(spec.families[l], spec.alpha[l], d[l], range.gamma[l]);
  return value;
}

double JitteredCholesky::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix JitteredCholesky::inverse() const {
  const auto n = llt.matrixLLT().rows();
  return llt.solve(Matrix::Identity(n, n));
}

JitteredCholesky factor_with_jitter(const Matrix& a) {
  require(a.rows() == a.cols(), "Cholesky needs a square matrix");
  JitteredCholesky out;
  if (a.rows() == 0) {
    out.llt.compute(a);
    return out;
  }
  out.llt.compute(a);
  if (factor_ok(out.llt)) return out;

  const double scale = a.diagonal().mean();
  const auto n = a.rows();
  for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    const double jitter = rel * scale;
    out.llt.compute(a + jitter * Matrix::Identity(n, n));
    if (factor_ok(out.llt)) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NumericError("singular correlation: Cholesky failed after maximal jitter");
}

Matrix correlation(const Matrix& design, const KernelSpec& spec, const RangeParams& range) {
  check_range(spec, range);
  require(design.cols() == spec.dim(), "design columns do not match kernel dimension");
  require(design.allFinite(), "design must be finite");
  const auto n = design.rows();
  Matrix R(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    R(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      double value = 1.0;
      for (int l = 0; l < spec.dim(); ++l)
        value *= kernel_1d(spec.families[l], spec.alpha[l], design(i, l) - design(j, l), range.gamma[l]);
      R(i, j) = value;
      R(j, i) = value;
    }
  }
  return R;
}

Matrix cross_correlation(const Matrix& a, const Matrix& b, const KernelSpec& spec, const RangeParams& range) {
  check_range(spec, range);
  require(a.cols() == spec.dim() && b.cols() == spec.dim(), "inputs do not match kernel dimension");
  require(a.allFinite() && b.allFinite(), "inputs must be finite");
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double value = 1.0;
      for (int l = 0; l < spec.dim(); ++l)
        value *= kernel_1d(spec.families[l], spec.alpha[l], a(i, l) - b(j, l), range.gamma[l]);
      out(i, j) = value;
    }
  }
  return out;
}

std::vector<Matrix> correlation_dgamma(const Matrix& design, const KernelSpec& spec, const RangeParams& range) {
  check_range(spec, range);
  require(design.cols() == spec.dim(), "design columns do not match kernel dimension");
  const auto n = design.rows();
  const int p = spec.dim();
  std::vector<Matrix> out(static_cast<std::size_t>(p), Matrix::Zero(n, n));
  std::vector<double> k(static_cast<std::size_t>(p));
  std::vector<double> dk(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      for (int l = 0; l < p; ++l) {
        const double d = design(i, l) - design(j, l);
        k[l] = kernel_1d(spec.families[l], spec.alpha[l], d, range.gamma[l]);
        dk[l] = kernel_1d_dgamma(spec.families[l], spec.alpha[l], d, range.gamma[l]);
      }
      for (int l = 0; l < p; ++l) {
        double value = dk[l];
        for (int m = 0; m < p; ++m)
          if (m != l) value *= k[m];
        out[l](i, j) = value;
        out[l](j, i) = value;
      }
    }
  }
  return out;
}

CorrelationMatrix corr_matrix(const Matrix& design, const KernelSpec& spec, const RangeParams& range) {
  require(design.rows() >= 1, "correlation matrix needs at least one design point");
  CorrelationMatrix out;
  out.R = correlation(design, spec, range);
  out.chol = factor_with_jitter(out.R);
  return out;
}

Vector cross_corr(const Matrix& design, const Eigen::Ref<const Vector>& x_star, const KernelSpec& spec,
                  const RangeParams& range) {
  require(x_star.size() == spec.dim(), "test input has wrong dimension");
  if (design.rows() == 0) return Vector(0);
  return cross_correlation(design, x_star.transpose(), spec, range).col(0);
}

ScaledCorrelation scaled_corr(const Matrix& R, double lambda_z) {
  require(lambda_z > 0.0 && std::isfinite(lambda_z), "lambda_z must be positive");
  const auto n = R.rows();
  ScaledCorrelation out;
  out.lambda_z = lambda_z;
  const double shift = static_cast<double>(n) / lambda_z;
  out.shifted = factor_with_jitter(R + shift * Matrix::Identity(n, n)).llt;
  out.shifted_inv_R = out.shifted.solve(R);
  out.Rz = R - R * out.shifted_inv_R;
  out.Rz = 0.5 * (out.Rz + out.Rz.transpose()).eval();
  return out;
}

Matrix scaled_corr_derivative(const ScaledCorrelation& scaled, const Matrix& dR, double d_shift) {
  // With A = M^{-1} R and M = R + c I:
  // dR_z = dR - dR A - A^T dR + A^T (dR + dc I) A.
  const Matrix& A = scaled.shifted_inv_R;
  Matrix dRA = dR * A;
  Matrix out = dR - dRA - dRA.transpose() + A.transpose() * dRA + d_shift * (A.transpose() * A);
  return 0.5 * (out + out.transpose());
}

double scaled_cross(const Eigen::Ref<const Vector>& x_a, const Eigen::Ref<const Vector>& x_b, const Matrix& R,
                    double lambda_z, const Matrix& design, const KernelSpec& spec, const RangeParams& range) {
  require(lambda_z > 0.0 && std::isfinite(lambda_z), "lambda_z must be positive");
  require(R.rows() == design.rows(), "correlation matrix does not match design");
  const Vector d = x_a - x_b;
  const double k_ab = kernel_eval(spec, range, d);
  if (design.rows() == 0) return k_ab;
  const auto n = R.rows();
  const auto shifted = factor_with_jitter(R + static_cast<double>(n) / lambda_z * Matrix::Identity(n, n));
  const Vector r_a = cross_corr(design, x_a, spec, range);
  const Vector r_b = cross_corr(design, x_b, spec, range);
  return k_ab - r_a.dot(shifted.solve(r_b));
}

}  // namespace robcal
