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

#include <Eigen/Cholesky>

#include <string>
#include <vector>

namespace robcal {

enum class KernelFamily { Matern52, Matern32, PowExp };

KernelFamily parse_kernel_family(const std::string& name);
std::string to_string(KernelFamily family);

/// Separable product kernel: one family (and roughness, for pow_exp) per input dimension.
struct KernelSpec {
  std::vector<KernelFamily> families;
  std::vector<double> alpha;  // roughness, only read for PowExp dimensions

  static KernelSpec uniform(KernelFamily family, int dim, double alpha = 1.9);

  int dim() const { return static_cast<int>(families.size()); }
  void validate() const;
};

/// Per-dimension range parameters gamma_l > 0 (inverse range beta_l = 1/gamma_l).
struct RangeParams {
  Vector gamma;

  static RangeParams from_gamma(Vector gamma);
  static RangeParams from_log_beta(const Vector& log_beta);

  int dim() const { return static_cast<int>(gamma.size()); }
  Vector beta() const { return gamma.cwiseInverse(); }
  Vector log_beta() const { return -gamma.array().log().matrix(); }
};

/// One-dimensional correlation K_l(d) for |d| and range gamma.
double kernel_1d(KernelFamily family, double alpha, double d, double gamma);
/// d K_l / d gamma.
double kernel_1d_dgamma(KernelFamily family, double alpha, double d, double gamma);

/// Product kernel at displacement d.
double kernel_eval(const KernelSpec& spec, const RangeParams& range, const Eigen::Ref<const Vector>& d);

/// Result of a Cholesky factorization that may have needed diagonal jitter.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;  // absolute amount added to the diagonal

  double log_det() const;
  Vector solve(const Vector& b) const { return llt.solve(b); }
  Matrix solve(const Matrix& b) const { return llt.solve(b); }
  Matrix inverse() const;
};

/// Factor a symmetric matrix, escalating jitter 0, 1e-10, ..., 1e-4 times mean(diag).
/// Throws NumericError when the largest jitter still fails.
JitteredCholesky factor_with_jitter(const Matrix& a);

/// Correlation matrix with its cached (possibly jittered) Cholesky factor.
struct CorrelationMatrix {
  Matrix R;  // without jitter; unit diagonal
  JitteredCholesky chol;

  int size() const { return static_cast<int>(R.rows()); }
  double jitter() const { return chol.jitter; }
};

/// Dense R with R(i,j) = K(x_i - x_j); no factorization.
Matrix correlation(const Matrix& design, const KernelSpec& spec, const RangeParams& range);

/// Dense K(a_i - b_j), rows of a by rows of b.
Matrix cross_correlation(const Matrix& a, const Matrix& b, const KernelSpec& spec, const RangeParams& range);

/// dR/dgamma_l for every dimension l.
std::vector<Matrix> correlation_dgamma(const Matrix& design, const KernelSpec& spec, const RangeParams& range);

CorrelationMatrix corr_matrix(const Matrix& design, const KernelSpec& spec, const RangeParams& range);

/// r(x*) = (K(x* - x_1), ..., K(x* - x_n)).
Vector cross_corr(const Matrix& design, const Eigen::Ref<const Vector>& x_star, const KernelSpec& spec,
                  const RangeParams& range);

/// Discretized scaled correlation R_z = R - R (R + n I / lambda_z)^{-1} R.
struct ScaledCorrelation {
  Matrix Rz;
  double lambda_z = 0.0;
  Eigen::LLT<Matrix> shifted;  // Cholesky of R + n I / lambda_z
  Matrix shifted_inv_R;        // (R + n I / lambda_z)^{-1} R

  int size() const { return static_cast<int>(Rz.rows()); }
};

ScaledCorrelation scaled_corr(const Matrix& R, double lambda_z);

/// dR_z for a perturbation dR of R and dc of the shift c = n / lambda_z.
Matrix scaled_corr_derivative(const ScaledCorrelation& scaled, const Matrix& dR, double d_shift);

/// Scaled kernel K(x_a, x_b) - r(x_a)^T (R + n I / lambda_z)^{-1} r(x_b).
double scaled_cross(const Eigen::Ref<const Vector>& x_a, const Eigen::Ref<const Vector>& x_b, const Matrix& R,
                    double lambda_z, const Matrix& design, const KernelSpec& spec, const RangeParams& range);

}  // namespace robcal
