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

#include "robcal/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace robcal {

namespace {

Vector project(const Vector& x, const Vector& lower, const Vector& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

double projected_gradient_norm(const Vector& x, const Vector& g, const Vector& lower, const Vector& upper) {
  return (project(x - g, lower, upper) - x).cwiseAbs().maxCoeff();
}

struct Pair {
  Vector s;
  Vector y;
  double rho;
};

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& objective, Vector x0, const Vector& lower, const Vector& upper,
                           const LbfgsOptions& options) {
  require(x0.size() == lower.size() && x0.size() == upper.size(), "optimizer bounds do not match start point");
  require((lower.array() <= upper.array()).all(), "optimizer bounds are not ordered");

  LbfgsResult result;
  Vector x = project(x0, lower, upper);
  Vector g(x.size());
  double f = objective(x, g);
  ++result.evaluations;
  if (!std::isfinite(f) || !g.allFinite()) {
    result.x = x;
    result.value = f;
    result.gradient = g;
    result.message = "objective not finite at the start point";
    return result;
  }

  std::deque<Pair> memory;
  const double c1 = 1e-4;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    if (projected_gradient_norm(x, g, lower, upper) < options.gradient_tolerance) {
      result.converged = true;
      result.message = "projected gradient below tolerance";
      break;
    }

    // Variables pinned at a bound with the gradient pushing outward stay fixed this step.
    Eigen::Array<bool, Eigen::Dynamic, 1> free = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(x.size(), true);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if ((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)) free[i] = false;
    }
    auto mask = [&](Vector v) {
      for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!free[i]) v[i] = 0.0;
      return v;
    };

    // two-loop recursion
    Vector q = mask(g);
    std::vector<double> alpha(memory.size());
    for (int k = static_cast<int>(memory.size()) - 1; k >= 0; --k) {
      alpha[static_cast<std::size_t>(k)] = memory[k].rho * memory[k].s.dot(q);
      q -= alpha[static_cast<std::size_t>(k)] * memory[k].y;
    }
    if (!memory.empty()) {
      const Pair& last = memory.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const double beta = memory[k].rho * memory[k].y.dot(q);
      q += (alpha[k] - beta) * memory[k].s;
    }
    Vector direction = mask(-q);
    if (direction.dot(g) >= 0.0) {
      memory.clear();
      direction = mask(-g);
    }
    if (direction.squaredNorm() == 0.0) {
      result.converged = true;
      result.message = "no feasible descent direction";
      break;
    }

    double step = memory.empty() ? std::min(1.0, 1.0 / direction.cwiseAbs().maxCoeff()) : 1.0;
    Vector x_new;
    Vector g_new(x.size());
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = project(x + step * direction, lower, upper);
      f_new = objective(x_new, g_new);
      ++result.evaluations;
      const double slope = g.dot(x_new - x);
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f + c1 * slope) {
        accepted = true;
        break;
      }
      // safeguarded minimizer of the quadratic through f, the slope and f_new
      double shrink = 0.5;
      if (std::isfinite(f_new) && slope < 0.0) {
        const double denom = 2.0 * (f_new - f - slope);
        if (denom > 0.0) shrink = std::clamp(-slope / denom, 0.1, 0.5);
      }
      step *= shrink;
    }
    if (!accepted) {
      result.message = "line search failed";
      result.converged = projected_gradient_norm(x, g, lower, upper) < 1e3 * options.gradient_tolerance;
      break;
    }

    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    const double f_old = f;
    x = x_new;
    f = f_new;
    g = g_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      memory.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
    }
    if (std::abs(f_old - f) <= options.relative_tolerance * std::max({std::abs(f_old), std::abs(f), 1.0})) {
      result.converged = true;
      result.message = "relative function change below tolerance";
      break;
    }
    if (iter + 1 == options.max_iterations) result.message = "maximum iterations reached";
  }
  result.x = x;
  result.value = f;
  result.gradient = g;
  return result;
}

}  // namespace robcal
