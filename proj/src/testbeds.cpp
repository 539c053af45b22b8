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

#include "robcal/testbeds.hpp"

#include "robcal/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace robcal {

double bayarri07(double x, double theta) { return 5.0 * std::exp(-theta * x); }

double bayarri07_reality(double x) { return 3.5 * std::exp(-1.7 * x) + 1.5; }

Simulator bayarri07_simulator() {
  Simulator sim;
  sim.id = "bayarri07";
  sim.evaluate = [](const Matrix& inputs, const Vector& theta) {
    require(theta.size() == 1 && inputs.cols() == 1, "bayarri07 expects one input and one parameter");
    Vector out(inputs.rows());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) out[i] = bayarri07(inputs(i, 0), theta[0]);
    return out;
  };
  sim.jacobian = [](const Matrix& inputs, const Vector& theta) {
    Matrix J(inputs.rows(), 1);
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) J(i, 0) = -inputs(i, 0) * bayarri07(inputs(i, 0), theta[0]);
    return J;
  };
  return sim;
}

FieldData bayarri07_data() {
  const double x[] = {.110, .432, .754, 1.077, 1.399, 1.721, 2.043, 2.366, 2.688, 3.010};
  const double y[] = {4.730, 4.720, 4.234, 3.177, 2.966, 3.653, 1.970, 2.267, 2.084, 2.079,
                      2.409, 2.371, 1.908, 1.665, 1.685, 1.773, 1.603, 1.922, 1.370, 1.661,
                      1.757, 1.868, 1.505, 1.638, 1.390, 1.275, 1.679, 1.461, 1.157, 1.530};
  FieldData data;
  data.design.resize(10, 1);
  Matrix out(10, 3);
  for (int i = 0; i < 10; ++i) {
    data.design(i, 0) = x[i];
    for (int j = 0; j < 3; ++j) out(i, j) = y[3 * i + j];
  }
  data.observations = Observations::from_matrix(out);
  return data;
}

Matrix rk4_solve(const OdeSystem& system, double step) {
  require(step > 0.0, "integration step must be positive");
  require(system.dimension >= 1 && system.initial.size() == system.dimension, "initial state has wrong dimension");
  require(static_cast<bool>(system.rhs), "ODE right-hand side is missing");
  Matrix out(system.times.size(), system.dimension);
  Vector y = system.initial;
  double t = system.t0;
  Vector k1(system.dimension), k2(system.dimension), k3(system.dimension), k4(system.dimension);
  Vector tmp(system.dimension);
  for (Eigen::Index i = 0; i < system.times.size(); ++i) {
    const double target = system.times[i];
    require(target >= t, "output times must be ascending and not before t0");
    while (t < target) {
      const double h = std::min(step, target - t);
      system.rhs(t, y, k1);
      tmp = y + 0.5 * h * k1;
      system.rhs(t + 0.5 * h, tmp, k2);
      tmp = y + 0.5 * h * k2;
      system.rhs(t + 0.5 * h, tmp, k3);
      tmp = y + h * k3;
      system.rhs(t + h, tmp, k4);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      // guard against floating drift leaving a sliver step
      t = (target - (t + h) < 1e-12 * std::max(1.0, std::abs(target))) ? target : t + h;
      if (!y.allFinite()) {
        std::ostringstream msg;
        msg << "ODE trajectory diverged at t = " << t;
        throw NumericError(msg.str());
      }
    }
    out.row(i) = y.transpose();
  }
  return out;
}

Vector box_model(const Vector& times, double theta1, double theta2, double step) {
  const double k1 = std::pow(10.0, theta1 - 3.0);
  const double k2 = std::pow(10.0, theta2 - 3.0);
  OdeSystem system;
  system.dimension = 2;
  system.initial = Vector::Zero(2);
  system.initial[0] = 100.0;
  system.times = times;
  system.rhs = [k1, k2](double, const Vector& y, Vector& dy) {
    dy[0] = -k1 * y[0];
    dy[1] = k1 * y[0] - k2 * y[1];
  };
  return rk4_solve(system, step).col(1);
}

double box_model_exact(double t, double theta1, double theta2) {
  const double k1 = std::pow(10.0, theta1 - 3.0);
  const double k2 = std::pow(10.0, theta2 - 3.0);
  if (std::abs(k1 - k2) < 1e-14) return 100.0 * k1 * t * std::exp(-k1 * t);
  return 100.0 * k1 / (k2 - k1) * (std::exp(-k1 * t) - std::exp(-k2 * t));
}

Simulator box_simulator(double step) {
  Simulator sim;
  sim.id = "box";
  sim.evaluate = [step](const Matrix& inputs, const Vector& theta) {
    require(theta.size() == 2 && inputs.cols() == 1, "box model expects one input (time) and two parameters");
    // integrate once over the sorted times, then scatter back
    std::vector<Eigen::Index> order(static_cast<std::size_t>(inputs.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return inputs(a, 0) < inputs(b, 0); });
    Vector sorted(inputs.rows());
    for (std::size_t i = 0; i < order.size(); ++i) sorted[static_cast<Eigen::Index>(i)] = inputs(order[i], 0);
    const Vector values = box_model(sorted, theta[0], theta[1], step);
    Vector out(inputs.rows());
    for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = values[static_cast<Eigen::Index>(i)];
    return out;
  };
  return sim;
}

FieldData box_data() {
  FieldData data;
  data.design.resize(6, 1);
  data.design << 10, 20, 40, 80, 160, 320;
  Matrix y(6, 2);
  y << 19.2, 42.1, 14, 40.5, 14.4, 40.7, 24, 46.4, 42.3, 27.1, 30.8, 22.3;
  data.observations = Observations::from_matrix(y);
  return data;
}

Vector lorenz96_rhs(const Vector& x, double forcing) {
  const Eigen::Index k = x.size();
  require(k >= 4, "Lorenz-96 needs at least four states");
  Vector dx(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double next = x[(j + 1) % k];
    const double prev = x[(j + k - 1) % k];
    const double prev2 = x[(j + k - 2) % k];
    dx[j] = (next - prev2) * prev - x[j] + forcing;
  }
  return dx;
}

Matrix lorenz96_simulate(const Vector& x0, double forcing, int steps, double h) {
  require(steps >= 1 && h > 0.0, "Lorenz-96 needs steps >= 1 and h > 0");
  OdeSystem system;
  system.dimension = static_cast<int>(x0.size());
  system.initial = x0;
  system.times = Vector::LinSpaced(steps, h, h * steps);
  system.rhs = [forcing](double, const Vector& x, Vector& dx) { dx = lorenz96_rhs(x, forcing); };
  return rk4_solve(system, h);
}

Simulator lorenz96_simulator(Vector x0, int steps, double h) {
  Simulator sim;
  sim.id = "lorenz96";
  sim.evaluate = [x0 = std::move(x0), steps, h](const Matrix& inputs, const Vector& theta) {
    require(theta.size() == 1 && inputs.cols() == 2, "lorenz96 expects inputs (j, t) and one parameter");
    const Matrix states = lorenz96_simulate(x0, theta[0], steps, h);
    Vector out(inputs.rows());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
      const auto j = static_cast<Eigen::Index>(std::lround(inputs(i, 0))) - 1;
      const auto step = static_cast<Eigen::Index>(std::lround(inputs(i, 1) / h)) - 1;
      require(j >= 0 && j < states.cols() && step >= 0 && step < states.rows(),
              "lorenz96 input outside the simulated grid");
      out[i] = states(step, j);
    }
    return out;
  };
  return sim;
}

namespace {

Vector normal_vector(Eigen::Index n, Rng& rng) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = standard_normal(rng);
  return z;
}

}  // namespace

Lorenz96Data lorenz96_scenario(int scenario, Rng& rng, double forcing, int k, int steps, double h, int per_time) {
  require(scenario == 1 || scenario == 2, "Lorenz-96 scenario must be 1 or 2");
  require(per_time >= 1 && per_time <= k, "observations per time must lie in 1..k");
  // Wishart(k, I) covariance for the initial state
  Matrix W = Matrix::Zero(k, k);
  for (int m = 0; m < k; ++m) {
    const Vector z = normal_vector(k, rng);
    W += z * z.transpose();
  }
  const JitteredCholesky chol = factor_with_jitter(W);
  Lorenz96Data data;
  data.x0 = chol.llt.matrixL() * normal_vector(k, rng);
  const Matrix states = lorenz96_simulate(data.x0, forcing, steps, h);
  data.reality = states;
  if (scenario == 2) {
    for (int i = 0; i < steps; ++i) {
      const double t = h * (i + 1);
      for (int j = 0; j < k; ++j)
        data.reality(i, j) += 2.0 * t * std::sin(2.0 * std::numbers::pi * (j + 1) / k);
    }
  }
  data.full_observations = data.reality;
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < k; ++j) data.full_observations(i, j) += standard_normal(rng);

  data.design.resize(steps * per_time, 2);
  data.observations.resize(steps * per_time);
  std::vector<int> index(static_cast<std::size_t>(k));
  int row = 0;
  for (int i = 0; i < steps; ++i) {
    std::iota(index.begin(), index.end(), 0);
    for (int m = 0; m < per_time; ++m) {
      std::uniform_int_distribution<int> pick(m, k - 1);
      std::swap(index[static_cast<std::size_t>(m)], index[static_cast<std::size_t>(pick(rng))]);
    }
    std::sort(index.begin(), index.begin() + per_time);
    for (int m = 0; m < per_time; ++m) {
      const int j = index[static_cast<std::size_t>(m)];
      data.design(row, 0) = j + 1;
      data.design(row, 1) = h * (i + 1);
      data.observations[row] = data.full_observations(i, j);
      ++row;
    }
  }
  return data;
}

Matrix latin_hypercube(int D, int p, Rng& rng) {
  require(D >= 1 && p >= 1, "Latin hypercube needs D >= 1 and p >= 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix out(D, p);
  std::vector<int> perm(static_cast<std::size_t>(D));
  for (int j = 0; j < p; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < D; ++i) out(i, j) = (perm[static_cast<std::size_t>(i)] + unif(rng)) / D;
  }
  return out;
}

double min_pairwise_distance(const Matrix& points) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = i + 1; j < points.rows(); ++j)
      best = std::min(best, (points.row(i) - points.row(j)).norm());
  return best;
}

Matrix maximin_lhs(int D, int p, Rng& rng, int candidates) {
  require(D >= 2, "maximin design needs D >= 2");
  require(candidates >= 1, "maximin design needs at least one candidate");
  Matrix best = latin_hypercube(D, p, rng);
  double best_distance = min_pairwise_distance(best);
  for (int c = 1; c < candidates; ++c) {
    Matrix trial = latin_hypercube(D, p, rng);
    const double distance = min_pairwise_distance(trial);
    if (distance > best_distance) {
      best_distance = distance;
      best = std::move(trial);
    }
  }
  return best;
}

double sine_model(double x, double theta) { return std::sin(theta * x); }

Simulator sine_simulator() {
  Simulator sim;
  sim.id = "sine";
  sim.evaluate = [](const Matrix& inputs, const Vector& theta) {
    require(theta.size() == 1 && inputs.cols() == 1, "sine model expects one input and one parameter");
    return Vector(inputs.col(0).unaryExpr([&](double x) { return sine_model(x, theta[0]); }));
  };
  sim.jacobian = [](const Matrix& inputs, const Vector& theta) {
    Matrix J(inputs.rows(), 1);
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) J(i, 0) = inputs(i, 0) * std::cos(theta[0] * inputs(i, 0));
    return J;
  };
  return sim;
}

Vector gp_draw(const Matrix& x, double variance, double gamma, Rng& rng) {
  const KernelSpec spec = KernelSpec::uniform(KernelFamily::Matern52, static_cast<int>(x.cols()));
  const RangeParams range = RangeParams::from_gamma(Vector::Constant(x.cols(), gamma));
  const JitteredCholesky chol = factor_with_jitter(correlation(x, spec, range));
  const Vector draw = chol.llt.matrixL() * normal_vector(x.rows(), rng);
  return std::sqrt(variance) * draw;
}

MultiSourceData multisource_simulate(Rng& rng, int n, int k, double sigma, double noise_sd) {
  require(n >= 2 && k >= 1, "multi-source simulation needs n >= 2 and k >= 1");
  MultiSourceData data;
  data.theta = std::numbers::pi;
  data.x = Vector::LinSpaced(n, 0.0, 1.0);
  const Matrix design = data.x;
  data.delta = gp_draw(design, sigma * sigma, 1.0 / 30.0, rng);
  data.reality = data.x.unaryExpr([](double x) { return std::sin(std::numbers::pi * x); }) + data.delta;
  for (int l = 0; l < k; ++l) {
    const double var_l = k > 1 ? 0.5 + l * 0.5 / (k - 1) : 0.5;
    Vector bias = gp_draw(design, var_l, 0.1, rng);
    Vector y = data.reality + bias;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += noise_sd * standard_normal(rng);
    data.bias.push_back(std::move(bias));
    data.observations.push_back(std::move(y));
  }
  return data;
}

}  // namespace robcal
