/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "wheelcal/errors.hpp"

namespace wheelcal {

/// Real roots of a quartic, found as eigenvalues of the companion matrix of
/// the monic polynomial. Near-real eigenvalues are accepted to tolerate
/// double roots.
inline std::array<double, 4> quartic_real_roots(double a4, double a3, double a2, double a1,
                                                double a0, int* count) {
  *count = 0;
  std::array<double, 4> roots{};
  if (std::abs(a4) < 1e-300) throw ConditioningError("quartic_real_roots: degenerate quartic");
  Eigen::Matrix4d comp = Eigen::Matrix4d::Zero();
  comp(0, 3) = -a0 / a4;
  comp(1, 3) = -a1 / a4;
  comp(2, 3) = -a2 / a4;
  comp(3, 3) = -a3 / a4;
  comp(1, 0) = comp(2, 1) = comp(3, 2) = 1.0;
  Eigen::EigenSolver<Eigen::Matrix4d> es(comp, false);
  const auto ev = es.eigenvalues();
  for (int i = 0; i < 4; ++i) {
    const double re = ev[i].real(), im = ev[i].imag();
    if (std::abs(im) <= 1e-5 * (1.0 + std::abs(re))) roots[(*count)++] = re;
  }
  return roots;
}

/// Global minimizer of x' M x + x' g over the unit circle ||x|| = 1, M
/// symmetric 2x2. Stationary points satisfy x = -(M + lambda I)^-1 g / 2
/// with lambda a real root of the quartic obtained from ||x|| = 1; the root
/// with the smallest objective wins. A vanishing linear term reduces to the
/// smallest-eigenvalue direction.
inline Eigen::Vector2d solve_constrained_quadratic(const Eigen::Matrix2d& M_in,
                                                   const Eigen::Vector2d& g) {
  const Eigen::Matrix2d M = 0.5 * (M_in + M_in.transpose());
  const double scale = std::max({M.cwiseAbs().maxCoeff(), g.cwiseAbs().maxCoeff(), 1e-30});

  const auto objective = [&](const Eigen::Vector2d& x) { return x.dot(M * x) + x.dot(g); };

  double best_val = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best = Eigen::Vector2d::Zero();
  const auto consider = [&](Eigen::Vector2d x) {
    const double n = x.norm();
    if (n < 1e-12 || !std::isfinite(n)) return;
    x /= n;
    const double v = objective(x);
    if (v < best_val) {
      best_val = v;
      best = x;
    }
  };

  const double m11 = M(0, 0), m12 = M(0, 1), m22 = M(1, 1);

  if (g.norm() > 1e-14 * scale) {
    // Constraint ||adj(M+lI) g||^2 = 4 det(M+lI)^2, expanded in l.
    const double p = m11 + m22;
    const double q = m11 * m22 - m12 * m12;
    const double c1 = m22 * g[0] - m12 * g[1];
    const double c2 = m11 * g[1] - m12 * g[0];
    const double A = g.squaredNorm();
    const double B = 2.0 * (g[0] * c1 + g[1] * c2);
    const double C = c1 * c1 + c2 * c2;
    // 4 (l^2 + p l + q)^2 - (A l^2 + B l + C) = 0
    int nroots = 0;
    const auto roots = quartic_real_roots(4.0, 8.0 * p, 4.0 * (p * p + 2.0 * q) - A,
                                          8.0 * p * q - B, 4.0 * q * q - C, &nroots);
    for (int i = 0; i < nroots; ++i) {
      const double l = roots[i];
      const double det = (m11 + l) * (m22 + l) - m12 * m12;
      if (std::abs(det) > 1e-14 * scale * scale) {
        consider({-0.5 * ((m22 + l) * g[0] - m12 * g[1]) / det,
                  -0.5 * ((m11 + l) * g[1] - m12 * g[0]) / det});
      }
    }
    // Exact optimum when M is (near-)spherical; also covers root clusters
    // the companion matrix resolves poorly.
    consider(-g);
  }

  // Eigenvector candidates: exact when g vanishes, safety net otherwise.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(M);
  consider(es.eigenvectors().col(0));
  consider(-es.eigenvectors().col(0));
  consider(es.eigenvectors().col(1));
  consider(-es.eigenvectors().col(1));

  if (!std::isfinite(best_val))
    throw ConditioningError("solve_constrained_quadratic: no admissible stationary point");
  return best;
}

}  // namespace wheelcal
