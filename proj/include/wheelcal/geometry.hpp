/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace wheelcal {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

/// Planar rotation, kept as (cos, sin) so the matrix is orthonormal by
/// construction.
class Rot2 {
 public:
  Rot2() : c_(1.0), s_(0.0) {}
  explicit Rot2(double angle) : c_(std::cos(angle)), s_(std::sin(angle)) {}

  double angle() const { return std::atan2(s_, c_); }
  double cos_a() const { return c_; }
  double sin_a() const { return s_; }

  Mat2 matrix() const {
    Mat2 m;
    m << c_, -s_, s_, c_;
    return m;
  }

  /// d/da of R(a), useful for analytic Jacobians.
  Mat2 dmatrix() const {
    Mat2 m;
    m << -s_, -c_, c_, -s_;
    return m;
  }

  Vec2 apply(const Vec2& v) const { return {c_ * v.x() - s_ * v.y(), s_ * v.x() + c_ * v.y()}; }
  Rot2 inverse() const { return Rot2(c_, -s_); }
  Rot2 compose(const Rot2& o) const {
    return Rot2(c_ * o.c_ - s_ * o.s_, s_ * o.c_ + c_ * o.s_);
  }

 private:
  Rot2(double c, double s) : c_(c), s_(s) {}
  double c_, s_;
};

/// SE(2) element (x, y, theta), theta wrapped to (-pi, pi].
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2D() = default;
  Pose2D(double px, double py, double ptheta) : x(px), y(py), theta(wrap_angle(ptheta)) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(theta))
      throw std::invalid_argument("Pose2D: non-finite component");
  }

  Vec2 translation() const { return {x, y}; }
  Rot2 rotation() const { return Rot2(theta); }

  /// Transforms a point from this pose's frame into the parent frame.
  Vec2 transform(const Vec2& p) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {x + c * p.x() - s * p.y(), y + s * p.x() + c * p.y()};
  }
};

/// Roto-translation composition a (+) b.
inline Pose2D oplus(const Pose2D& a, const Pose2D& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return Pose2D(a.x + b.x * c - b.y * s, a.y + b.x * s + b.y * c, a.theta + b.theta);
}

/// Inverse element: ominus(a) (+) a = identity.
inline Pose2D ominus(const Pose2D& a) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return Pose2D(-a.x * c - a.y * s, a.x * s - a.y * c, -a.theta);
}

/// Pose of b expressed in the frame of a: ominus(a) (+) b.
inline Pose2D relative_pose(const Pose2D& a, const Pose2D& b) { return oplus(ominus(a), b); }

inline bool approx_equal(const Pose2D& a, const Pose2D& b, double tol) {
  return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol &&
         std::abs(wrap_angle(a.theta - b.theta)) <= tol;
}

}  // namespace wheelcal
