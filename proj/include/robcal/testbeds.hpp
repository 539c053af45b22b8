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
#include "robcal/inference.hpp"
#include "robcal/model.hpp"

#include <functional>
#include <vector>

namespace robcal {

// ---- closed-form exponential decay example ----

double bayarri07(double x, double theta);
double bayarri07_reality(double x);
Simulator bayarri07_simulator();

struct FieldData {
  Matrix design;
  Observations observations;
};

/// Ten inputs on [0.11, 3.01] with three replicates each.
FieldData bayarri07_data();

// ---- ODE integration ----

struct OdeSystem {
  int dimension = 0;
  std::function<void(double t, const Vector& state, Vector& derivative)> rhs;
  Vector initial;
  double t0 = 0.0;
  Vector times;  // ascending output times >= t0
};

/// Classical fourth-order Runge-Kutta with a fixed step, landing exactly on each output time.
/// Returns one row per output time.
Matrix rk4_solve(const OdeSystem& system, double step);

/// Second species of the two-species decay chain with k_i = 10^{theta_i - 3}, y(0) = (100, 0).
Vector box_model(const Vector& times, double theta1, double theta2, double step = 0.5);
double box_model_exact(double t, double theta1, double theta2);
Simulator box_simulator(double step = 0.5);

/// Six times, two replicates.
FieldData box_data();

// ---- Lorenz-96 ----

Vector lorenz96_rhs(const Vector& x, double forcing);

/// States at t = h, 2h, ..., steps * h (one row per time).
Matrix lorenz96_simulate(const Vector& x0, double forcing, int steps = 40, double h = 0.05);

/// Inputs are (state index j in 1..k, time t); t must lie on the integration grid.
Simulator lorenz96_simulator(Vector x0, int steps = 40, double h = 0.05);

struct Lorenz96Data {
  Vector x0;
  Matrix reality;       // steps x k
  Matrix full_observations;
  Matrix design;        // (j, t) of the observed entries
  Vector observations;
};

/// Scenario 1: y = x + N(0, 1); scenario 2 adds 2 t sin(2 pi j / k).
/// Initial state ~ N(0, W) with W ~ Wishart(k, I); `per_time` states observed at each time.
Lorenz96Data lorenz96_scenario(int scenario, Rng& rng, double forcing = 8.0, int k = 40, int steps = 40,
                               double h = 0.05, int per_time = 2);

// ---- designs ----

/// Random Latin hypercube in [0, 1]^p.
Matrix latin_hypercube(int D, int p, Rng& rng);
double min_pairwise_distance(const Matrix& points);
/// Best of `candidates` random Latin hypercubes by minimum pairwise distance.
Matrix maximin_lhs(int D, int p, Rng& rng, int candidates = 100);

// ---- multiple sources ----

struct MultiSourceData {
  Vector x;
  std::vector<Vector> observations;
  Vector reality;
  Vector delta;
  std::vector<Vector> bias;
  double theta = 0.0;
};

double sine_model(double x, double theta);
Simulator sine_simulator();

/// y_l = sin(pi x) + delta(x) + delta_l(x) + eps_l on n equally spaced points of [0, 1].
/// delta ~ GP(0, sigma^2 K), gamma = 1/30; delta_l ~ GP(0, sigma_l^2 K_l), gamma = 1/10,
/// sigma_l^2 = 0.5 + (l - 1) 0.5 / (k - 1); Matern 5/2 kernels.
MultiSourceData multisource_simulate(Rng& rng, int n = 100, int k = 5, double sigma = 0.2, double noise_sd = 0.05);

/// Zero-mean Gaussian process draw with variance * Matern 5/2(gamma) at `x`.
Vector gp_draw(const Matrix& x, double variance, double gamma, Rng& rng);

}  // namespace robcal
