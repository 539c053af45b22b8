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

// Shared building blocks of the Metropolis-within-Gibbs samplers (single and multiple sources).

#pragma once

#include "robcal/inference.hpp"
#include "robcal/model.hpp"

#include <optional>

namespace robcal::detail {

/// One Gaussian field likelihood: target = f + H theta_m + discrepancy + noise.
struct FieldTerm {
  Matrix design;
  Vector target;       // replicate means, offsets already removed
  Vector lambda_diag;  // 1 / (w_i k_i)
  double s_f2 = 0.0;
  double total = 0.0;
  std::optional<Matrix> trend;
  Discrepancy discrepancy = Discrepancy::None;
  KernelSpec kernel;
  std::optional<double> fixed_lambda_z;
  Vector lengths;
  JrPriorParams prior;

  int n() const { return static_cast<int>(design.rows()); }
  int p_x() const { return static_cast<int>(design.cols()); }
  bool has_kernel() const { return discrepancy != Discrepancy::None; }

  static FieldTerm from_problem(const CalibrationProblem& problem, const JrPriorParams& prior);
};

struct FieldState {
  Vector log_params;  // log beta then log eta; empty without a discrepancy
  double sigma2_0 = 1.0;
  Vector theta_m;
  FieldCovariance cov;
};

RangeParams range_of(const Vector& log_params, int p_x);
double lambda_z_of(const FieldTerm& term, const RangeParams& range, double eta);
FieldCovariance field_covariance(const FieldTerm& term, const Vector& log_params);
Vector default_log_params(const FieldTerm& term);

/// target - f - H theta_m
Vector field_residual(const FieldTerm& term, const FieldState& state, const Vector& f);
double field_quad(const FieldState& state, const Vector& residual);

/// Log-likelihood in theta with sigma_0^2 and theta_m held fixed.
double theta_conditional(const FieldTerm& term, const FieldState& state, const Vector& f);

FieldState initial_field_state(const FieldTerm& term, const Vector& f);

bool update_kernel(const FieldTerm& term, FieldState& state, const Vector& f, const Vector& sd, Rng& rng);
void update_sigma(const FieldTerm& term, FieldState& state, const Vector& f, Rng& rng);
void update_trend(const FieldTerm& term, FieldState& state, const Vector& f, Rng& rng);

/// Latin hypercube over theta_range.
Matrix theta_lhs(const Matrix& theta_range, int count, Rng& rng);

}  // namespace robcal::detail
