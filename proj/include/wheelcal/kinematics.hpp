/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"

namespace wheelcal {

/// Two-wheel differential drive: left/right wheel radii and axle length,
/// all in meters and positive.
struct DiffDriveParams {
  double r_left = 0.0;
  double r_right = 0.0;
  double axle = 0.0;
};

/// Four-wheel Mecanum drive: common wheel radius and the half axle lengths
/// along the body x/y axes. Only axle_x + axle_y enters the kinematics.
struct MecanumParams {
  double radius = 0.0;
  double axle_x = 0.0;
  double axle_y = 0.0;

  double axle_sum() const { return axle_x + axle_y; }
};

using DriveParams = std::variant<DiffDriveParams, MecanumParams>;

/// Body-frame velocities (v_x, v_y, omega).
struct Twist2D {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

/// Wheel angular velocities (rad/s) sampled at a time instant.
struct WheelRates {
  double timestamp = 0.0;
  Eigen::VectorXd omega;
};

inline int wheel_count(const DriveParams& p) {
  return std::holds_alternative<DiffDriveParams>(p) ? 2 : 4;
}

inline std::string drive_name(const DriveParams& p) {
  return std::holds_alternative<DiffDriveParams>(p) ? "diffdrive" : "mecanum";
}

/// v = r_L w_L / 2 + r_R w_R / 2,  omega = (-r_L w_L + r_R w_R) / b.
inline Twist2D diffdrive_twist(const DiffDriveParams& p, const WheelRates& d) {
  if (d.omega.size() != 2)
    throw std::invalid_argument("diffdrive_twist: expected 2 wheel rates, got " +
                                std::to_string(d.omega.size()));
  const double wl = d.omega[0], wr = d.omega[1];
  Twist2D t;
  t.vx = 0.5 * p.r_left * wl + 0.5 * p.r_right * wr;
  t.vy = 0.0;
  t.omega = (-p.r_left * wl + p.r_right * wr) / p.axle;
  return t;
}

/// Mecanum twist with wheels ordered (left-rear, right-rear, left-front,
/// right-front). The matrix is applied verbatim, without a 1/4 averaging
/// factor; calibration absorbs the scale into the estimated radius.
inline Twist2D mecanum_twist(const MecanumParams& p, const WheelRates& d) {
  if (d.omega.size() != 4)
    throw std::invalid_argument("mecanum_twist: expected 4 wheel rates, got " +
                                std::to_string(d.omega.size()));
  const double w1 = d.omega[0], w2 = d.omega[1], w3 = d.omega[2], w4 = d.omega[3];
  const double ls = p.axle_sum();
  Twist2D t;
  t.vx = p.radius * (w1 + w2 + w3 + w4);
  t.vy = p.radius * (-w1 + w2 + w3 - w4);
  t.omega = p.radius * (-w1 + w2 - w3 + w4) / ls;
  return t;
}

inline Twist2D drive_twist(const DriveParams& p, const WheelRates& d) {
  if (const auto* dd = std::get_if<DiffDriveParams>(&p)) return diffdrive_twist(*dd, d);
  return mecanum_twist(std::get<MecanumParams>(p), d);
}

/// Integrates a constant twist over dt. With vy == 0 this is the exact arc
/// formula (sinc terms switch to a Taylor expansion below |omega*dt| = 1e-8);
/// with vy != 0 the body velocity is treated as constant over dt.
inline Pose2D integrate_twist(const Twist2D& t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate_twist: dt must be > 0");
  const double u = t.omega * dt;
  if (t.vy != 0.0) return Pose2D(t.vx * dt, t.vy * dt, u);
  double sinc_u, versine_u;
  if (std::abs(u) < 1e-8) {
    sinc_u = 1.0 - u * u / 6.0;
    versine_u = 0.5 * u - u * u * u / 24.0;
  } else {
    sinc_u = std::sin(u) / u;
    versine_u = (1.0 - std::cos(u)) / u;
  }
  const double vdt = t.vx * dt;
  return Pose2D(vdt * sinc_u, vdt * versine_u, u);
}

/// Relative robot pose over [t_j, t_k) assuming constant wheel rates. The
/// Mecanum drive keeps the straight-segment model even when v_y happens to
/// vanish; the diff drive integrates the exact arc.
inline Pose2D robot_relative_pose(const DriveParams& p, const WheelRates& d, double dt) {
  const Twist2D t = drive_twist(p, d);
  if (std::holds_alternative<MecanumParams>(p))
    return Pose2D(t.vx * dt, t.vy * dt, wrap_angle(t.omega * dt));
  return integrate_twist(t, dt);
}

/// s_jk = ominus(l) (+) q_jk (+) l: displacement of a sensor mounted at l.
inline Pose2D sensor_displacement(const Pose2D& l, const Pose2D& q_jk) {
  return oplus(ominus(l), oplus(q_jk, l));
}

/// Drive parameters plus sensor extrinsic; the full sensor motion model.
struct SensorModel {
  DriveParams drive;
  Pose2D extrinsic;

  Pose2D robot_pose(const WheelRates& d, double dt) const {
    return robot_relative_pose(drive, d, dt);
  }
  Pose2D predict(const WheelRates& d, double dt) const {
    return sensor_displacement(extrinsic, robot_pose(d, dt));
  }
};

// Solver parameterization. Diff drive packs all six parameters. For the
// Mecanum drive only axle_x + axle_y is identifiable, so the solver sees
// (radius, axle_sum) and unpacking preserves the initial axle split ratio.
inline Eigen::VectorXd pack_params(const SensorModel& m) {
  Eigen::VectorXd p;
  if (const auto* dd = std::get_if<DiffDriveParams>(&m.drive)) {
    p.resize(6);
    p << dd->r_left, dd->r_right, dd->axle, m.extrinsic.x, m.extrinsic.y, m.extrinsic.theta;
  } else {
    const auto& mp = std::get<MecanumParams>(m.drive);
    p.resize(5);
    p << mp.radius, mp.axle_sum(), m.extrinsic.x, m.extrinsic.y, m.extrinsic.theta;
  }
  return p;
}

inline SensorModel unpack_params(const SensorModel& base, const Eigen::VectorXd& p) {
  SensorModel m = base;
  if (const auto* dd = std::get_if<DiffDriveParams>(&base.drive)) {
    m.drive = DiffDriveParams{p[0], p[1], p[2]};
    m.extrinsic = Pose2D(p[3], p[4], p[5]);
  } else {
    const auto& mp = std::get<MecanumParams>(base.drive);
    const double sum0 = mp.axle_sum();
    const double ratio = sum0 > 0.0 ? mp.axle_x / sum0 : 0.5;
    m.drive = MecanumParams{p[0], ratio * p[1], (1.0 - ratio) * p[1]};
    m.extrinsic = Pose2D(p[2], p[3], p[4]);
  }
  return m;
}

inline std::vector<std::string> param_names(const DriveParams& p) {
  if (std::holds_alternative<DiffDriveParams>(p))
    return {"r_L", "r_R", "b", "l_x", "l_y", "l_theta"};
  return {"r", "L_sum", "l_x", "l_y", "l_theta"};
}

/// d s_jk / d p by central finite differences, step max(1e-6, 1e-6 |p_i|).
/// Accuracy O(h^2). The theta row is wrapped before differencing.
inline Eigen::MatrixXd param_jacobian(const SensorModel& m, const WheelRates& d, double dt) {
  const Eigen::VectorXd p0 = pack_params(m);
  const int n = static_cast<int>(p0.size());
  Eigen::MatrixXd J(3, n);
  for (int i = 0; i < n; ++i) {
    const double h = std::max(1e-6, 1e-6 * std::abs(p0[i]));
    Eigen::VectorXd pp = p0, pm = p0;
    pp[i] += h;
    pm[i] -= h;
    const Pose2D sp = unpack_params(m, pp).predict(d, dt);
    const Pose2D sm = unpack_params(m, pm).predict(d, dt);
    if (!std::isfinite(sp.x) || !std::isfinite(sm.x))
      throw ConditioningError("param_jacobian: non-finite model output");
    J(0, i) = (sp.x - sm.x) / (2.0 * h);
    J(1, i) = (sp.y - sm.y) / (2.0 * h);
    J(2, i) = wrap_angle(sp.theta - sm.theta) / (2.0 * h);
  }
  return J;
}

/// Analytic Jacobian for the differential drive, same contract as
/// param_jacobian. Columns ordered (r_L, r_R, b, l_x, l_y, l_theta).
inline Eigen::MatrixXd diffdrive_param_jacobian(const SensorModel& m, const WheelRates& d,
                                                double dt) {
  const auto& dd = std::get<DiffDriveParams>(m.drive);
  const double wl = d.omega[0], wr = d.omega[1];
  const double v = 0.5 * (dd.r_left * wl + dd.r_right * wr);
  const double om = (-dd.r_left * wl + dd.r_right * wr) / dd.axle;
  const double u = om * dt;

  double S, C, dS, dC;  // sinc, versine and their derivatives in u
  if (std::abs(u) < 1e-6) {
    S = 1.0 - u * u / 6.0;
    C = 0.5 * u - u * u * u / 24.0;
    dS = -u / 3.0 + u * u * u / 30.0;
    dC = 0.5 - u * u / 8.0;
  } else {
    S = std::sin(u) / u;
    C = (1.0 - std::cos(u)) / u;
    dS = (u * std::cos(u) - std::sin(u)) / (u * u);
    dC = (u * std::sin(u) - (1.0 - std::cos(u))) / (u * u);
  }

  // q = (v dt S(u), v dt C(u), u) with v, om linear in (r_L, r_R, b).
  const Eigen::Vector3d dv(0.5 * wl, 0.5 * wr, 0.0);
  const Eigen::Vector3d dom(-wl / dd.axle, wr / dd.axle, -om / dd.axle);
  Eigen::Matrix3d dq;  // rows qx,qy,qt; cols rL,rR,b
  for (int i = 0; i < 3; ++i) {
    dq(0, i) = dt * S * dv[i] + v * dt * dS * dt * dom[i];
    dq(1, i) = dt * C * dv[i] + v * dt * dC * dt * dom[i];
    dq(2, i) = dt * dom[i];
  }

  const Pose2D q(v * dt * S, v * dt * C, u);
  const Rot2 Rl(m.extrinsic.theta);
  const Rot2 Rli = Rl.inverse();
  const Rot2 Rq(q.theta);
  const Rot2 Rdiff = Rli.compose(Rq);  // R(q_theta - l_theta)
  const Vec2 tl = m.extrinsic.translation();
  const Vec2 qt = q.translation();

  Eigen::MatrixXd J(3, 6);
  // Intrinsic columns: s_t = R(-lt) (q_t - t_l) + R(qt - lt) t_l, s_th = q_th.
  for (int i = 0; i < 3; ++i) {
    const Vec2 dqt(dq(0, i), dq(1, i));
    const Vec2 ds = Rli.apply(dqt) + dq(2, i) * (Rdiff.dmatrix() * tl);
    J(0, i) = ds.x();
    J(1, i) = ds.y();
    J(2, i) = dq(2, i);
  }
  // d/d t_l.
  const Mat2 dtl = -Rli.matrix() + Rdiff.matrix();
  J.block<2, 2>(0, 3) = dtl;
  J(2, 3) = J(2, 4) = 0.0;
  // d/d l_theta: both rotation angles shift by -1.
  const Vec2 dlth = -(Rli.dmatrix() * (qt - tl)) - (Rdiff.dmatrix() * tl);
  J(0, 5) = dlth.x();
  J(1, 5) = dlth.y();
  J(2, 5) = 0.0;
  return J;
}

/// Wheel angles (rad) over an interval from integer tick counts.
inline Eigen::VectorXd ticks_to_angles(const Eigen::VectorXd& ticks, double ticks_per_rev) {
  return ticks * (2.0 * kPi / ticks_per_rev);
}

/// Constant rates over dt from tick counts.
inline WheelRates ticks_to_rates(double timestamp, const Eigen::VectorXd& ticks,
                                 double ticks_per_rev, double dt) {
  WheelRates r;
  r.timestamp = timestamp;
  r.omega = ticks_to_angles(ticks, ticks_per_rev) / dt;
  return r;
}

}  // namespace wheelcal
