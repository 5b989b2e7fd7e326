/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"
#include "wheelcal/kinematics.hpp"
#include "wheelcal/scanmatch.hpp"

namespace wheelcal {

enum class ProfileMode { kMixed, kPureRotation, kPureTranslation, kStraightLine };

struct SimConfig {
  SensorModel truth{DriveParams(DiffDriveParams{0.035, 0.035, 0.238}), Pose2D(0.02, 0.046, 3.13)};
  double duration = 210.0;      // seconds
  double sample_period = 0.7;   // scan spacing T
  Eigen::Vector3d noise_sigma{0.0, 0.0, 0.0};
  double outlier_fraction = 0.0;
  double outlier_lo = 10.0;     // gross error magnitude range, in sigmas
  double outlier_hi = 50.0;
  double ticks_per_rev = 2578.33;
  double scan_range_sigma = 0.005;
  double scan_dropout = 0.05;
  std::uint64_t seed = 1;
  ProfileMode profile = ProfileMode::kMixed;
  // Per-interval rotation budget. The default matches the reliable
  // scan-matching window; displacement-only runs may raise it.
  double max_step_rotation = 0.12;
};

struct World {
  std::vector<Vec2> landmarks;
  double max_range = 6.0;
  double angular_resolution_deg = 1.0;
};

inline World make_default_world(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  World w;
  w.landmarks.reserve(300);
  for (int i = 0; i < 300; ++i) w.landmarks.emplace_back(u(rng), u(rng));
  return w;
}

/// Landmarks covering a whole trajectory at the default 12m x 12m density,
/// for runs long enough to leave the default box.
inline World make_world_covering(const std::vector<Pose2D>& sensor_traj,
                                 std::uint64_t seed = 7, double max_range = 6.0) {
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (const auto& p : sensor_traj) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  lo_x -= max_range;
  hi_x += max_range;
  lo_y -= max_range;
  hi_y += max_range;
  const double density = 300.0 / 144.0;
  const int count =
      std::max(300, static_cast<int>(density * (hi_x - lo_x) * (hi_y - lo_y)) + 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(lo_x, hi_x), uy(lo_y, hi_y);
  World w;
  w.max_range = max_range;
  w.landmarks.reserve(count);
  for (int i = 0; i < count; ++i) w.landmarks.emplace_back(ux(rng), uy(rng));
  return w;
}

struct Simulation {
  std::vector<double> times;                   // t_0 .. t_n
  std::vector<Eigen::VectorXd> ticks;          // integer tick counts per interval
  std::vector<Pose2D> robot_traj;              // q_0 .. q_n
  std::vector<Pose2D> sensor_traj;             // q_i (+) l
  std::vector<Pose2D> s_true;                  // noiseless sensor displacement per interval
  std::vector<DisplacementObs> displacements;  // noisy observations per interval
  std::vector<int> outlier_indices;            // diagnostics only
};

namespace detail {

// Snaps a wheel rate to an integer tick count over one interval.
inline double snap_rate(double rate, double tpr, double T) {
  const double rad_per_tick = 2.0 * kPi / tpr;
  const double ticks = std::round(rate * T / rad_per_tick);
  return ticks * rad_per_tick / T;
}

}  // namespace detail

/// Piecewise-constant wheel-rate timeline, one entry per sample interval.
/// Rates are snapped to the tick grid so recorded tick counts are exact
/// integers. The mixed mode guarantees at least 30% of intervals with
/// |q_theta| >= 1 degree and at least 30% with translation >= 2 cm.
inline std::vector<Eigen::VectorXd> gen_profile(const SimConfig& cfg) {
  const int n = std::max(1, static_cast<int>(std::lround(cfg.duration / cfg.sample_period)));
  const double T = cfg.sample_period;
  const int m = wheel_count(cfg.truth.drive);
  const bool diff = (m == 2);

  for (std::uint64_t salt = 0; salt < 100; ++salt) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + salt);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // Per-step motion targets kept inside the reliable scan-matching window
    // (max ~12 cm translation and ~7 degrees rotation per interval); wheel
    // rates follow by inverting the true kinematics.
    const auto sgn = [&] { return u01(rng) < 0.5 ? -1.0 : 1.0; };
    const auto rates_for = [&](double vx, double vy, double om) {
      Eigen::VectorXd w(m);
      if (diff) {
        const auto& dd = std::get<DiffDriveParams>(cfg.truth.drive);
        w << (vx - 0.5 * om * dd.axle) / dd.r_left, (vx + 0.5 * om * dd.axle) / dd.r_right;
      } else {
        const auto& mp = std::get<MecanumParams>(cfg.truth.drive);
        const double A = vx / (4.0 * mp.radius), B = vy / (4.0 * mp.radius);
        const double C = mp.axle_sum() * om / (4.0 * mp.radius);
        w << A - B - C, A + B + C, A + B - C, A - B + C;
      }
      return w;
    };

    std::vector<Eigen::VectorXd> rates;
    rates.reserve(n);
    const double rot_scale = cfg.max_step_rotation / 0.12;
    while (static_cast<int>(rates.size()) < n) {
      const int seg = 1 + static_cast<int>(rng() % 3);
      const double kind = u01(rng);
      double vx = 0.0, vy = 0.0, om = 0.0;
      switch (cfg.profile) {
        case ProfileMode::kPureRotation:
          om = sgn() * rot_scale * (0.04 + 0.08 * u01(rng)) / T;
          break;
        case ProfileMode::kPureTranslation:
        case ProfileMode::kStraightLine:
          vx = (0.03 + 0.09 * u01(rng)) / T;
          break;
        case ProfileMode::kMixed:
          if (kind < 0.6) {  // arc: translation plus rotation
            vx = (0.03 + 0.09 * u01(rng)) / T;
            om = sgn() * rot_scale * (0.025 + 0.095 * u01(rng)) / T;
            if (!diff && u01(rng) < 0.4) vy = sgn() * (0.02 + 0.06 * u01(rng)) / T;
          } else if (kind < 0.8) {  // near-spin
            vx = 0.01 * u01(rng) / T;
            om = sgn() * rot_scale * (0.05 + 0.07 * u01(rng)) / T;
          } else {  // straight-ish
            vx = (0.03 + 0.08 * u01(rng)) / T;
            if (!diff && u01(rng) < 0.5) {
              vy = vx * sgn();
              vx *= u01(rng);
            }
          }
          break;
      }
      Eigen::VectorXd w = rates_for(vx, vy, om);
      for (int i = 0; i < m; ++i) w[i] = detail::snap_rate(w[i], cfg.ticks_per_rev, T);
      for (int s = 0; s < seg && static_cast<int>(rates.size()) < n; ++s) rates.push_back(w);
    }

    if (cfg.profile != ProfileMode::kMixed) return rates;

    int rot = 0, trans = 0;
    for (const auto& w : rates) {
      WheelRates wr;
      wr.omega = w;
      const Pose2D q = robot_relative_pose(cfg.truth.drive, wr, T);
      if (std::abs(q.theta) >= kPi / 180.0) ++rot;
      if (q.translation().norm() >= 0.02) ++trans;
    }
    if (rot >= (3 * n) / 10 && trans >= (3 * n) / 10) return rates;
  }
  throw ConvergenceError("gen_profile: could not satisfy excitation constraints");
}

/// Odometry, noisy displacement observations and the ground-truth
/// trajectories for the configured drive. Displacement noise is Gaussian
/// per component; a seeded fraction of observations is replaced by gross
/// errors of outlier_lo..outlier_hi sigmas. Reported sigmas are the nominal
/// noise levels, floored at 1e-6 to stay positive in noiseless runs.
inline Simulation synth_displacements(const SimConfig& cfg) {
  const std::vector<Eigen::VectorXd> rates = gen_profile(cfg);
  const int n = static_cast<int>(rates.size());
  const double T = cfg.sample_period;
  const double rad_per_tick = 2.0 * kPi / cfg.ticks_per_rev;

  Simulation sim;
  sim.times.resize(n + 1);
  for (int i = 0; i <= n; ++i) sim.times[i] = T * i;
  sim.ticks.resize(n);
  sim.robot_traj.assign(1, Pose2D());
  sim.s_true.resize(n);

  for (int i = 0; i < n; ++i) {
    sim.ticks[i] = (rates[i] * T / rad_per_tick).array().round();
    WheelRates wr;
    wr.timestamp = sim.times[i];
    wr.omega = rates[i];
    const Pose2D q_step = robot_relative_pose(cfg.truth.drive, wr, T);
    sim.robot_traj.push_back(oplus(sim.robot_traj.back(), q_step));
    sim.s_true[i] = sensor_displacement(cfg.truth.extrinsic, q_step);
  }
  sim.sensor_traj.resize(n + 1);
  for (int i = 0; i <= n; ++i)
    sim.sensor_traj[i] = oplus(sim.robot_traj[i], cfg.truth.extrinsic);

  Eigen::Vector3d sigma = cfg.noise_sigma.cwiseMax(1e-6);
  std::mt19937_64 rng(cfg.seed * 7919ULL + 13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  sim.displacements.resize(n);
  for (int i = 0; i < n; ++i) {
    DisplacementObs o;
    o.j = i;
    o.k = i + 1;
    o.tj = sim.times[i];
    o.tk = sim.times[i + 1];
    o.sigma = sigma;
    Eigen::Vector3d v(sim.s_true[i].x, sim.s_true[i].y, sim.s_true[i].theta);
    if (cfg.noise_sigma.maxCoeff() > 0.0)
      for (int c = 0; c < 3; ++c) v[c] += cfg.noise_sigma[c] * gauss(rng);
    o.s_hat = Pose2D(v[0], v[1], v[2]);
    sim.displacements[i] = o;
  }

  if (cfg.outlier_fraction > 0.0) {
    const int n_out = static_cast<int>(std::lround(cfg.outlier_fraction * n));
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n_out);
    std::sort(idx.begin(), idx.end());
    for (int i : idx) {
      Eigen::Vector3d v(sim.s_true[i].x, sim.s_true[i].y, sim.s_true[i].theta);
      for (int c = 0; c < 3; ++c) {
        const double magnitude =
            cfg.outlier_lo + (cfg.outlier_hi - cfg.outlier_lo) * u01(rng);
        const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
        v[c] += sign * magnitude * sigma[c];
      }
      sim.displacements[i].s_hat = Pose2D(v[0], v[1], v[2]);
    }
    sim.outlier_indices = idx;
  }
  return sim;
}

/// Scans along the simulated trajectory: landmarks inside the sensor range,
/// expressed in the sensor frame, with radial noise and random dropout.
inline std::vector<Scan> synth_scans(const SimConfig& cfg, const World& world,
                                     const Simulation& sim) {
  std::mt19937_64 rng(cfg.seed * 104729ULL + 29);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<Scan> scans;
  scans.reserve(sim.sensor_traj.size());
  for (size_t i = 0; i < sim.sensor_traj.size(); ++i) {
    const Pose2D inv = ominus(sim.sensor_traj[i]);
    Scan s;
    s.timestamp = sim.times[i];
    for (const auto& lm : world.landmarks) {
      const Vec2 z = inv.transform(lm);
      const double r = z.norm();
      if (r > world.max_range || r < 1e-6) continue;
      if (cfg.scan_dropout > 0.0 && u01(rng) < cfg.scan_dropout) continue;
      double r_noisy = r;
      if (cfg.scan_range_sigma > 0.0) r_noisy += cfg.scan_range_sigma * gauss(rng);
      s.points.push_back(z * (r_noisy / r));
    }
    if (static_cast<int>(s.points.size()) < 10)
      throw ConditioningError("synth_scans: fewer than 10 visible landmarks at pose " +
                              std::to_string(i));
    scans.push_back(std::move(s));
  }
  return scans;
}

// ---------------------------------------------------------------------------
// Model-free datasets: a drive with a hardware defect the nominal kinematic
// model cannot express.

enum class Distortion { kNone, kRadiusScale, kPeriodicRadius, kAxisSkew };

struct DistortionSpec {
  Distortion kind = Distortion::kNone;
  double scale_left = 1.15;   // kRadiusScale: per-wheel radius factors
  double scale_right = 1.0;
  double lobe_amplitude = 0.12;  // kPeriodicRadius: r_L(phi) = r_L (1 + a cos phi)
  double skew = 0.08;            // kAxisSkew: v_y = skew * v_x cross-coupling
};

struct ModelFreeSplit {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> ticks;
  std::vector<Pose2D> s_true;
  std::vector<DisplacementObs> obs;
  std::vector<Pose2D> sensor_traj;
};

struct ModelFreeDataset {
  ModelFreeSplit train;
  ModelFreeSplit test;
};

namespace detail {

// Robot step under a distorted diff drive, integrated with fine Euler steps.
// phi_left tracks the cumulative left-wheel angle for the periodic defect.
inline Pose2D distorted_step(const SimConfig& cfg, const DistortionSpec& d,
                             const Eigen::VectorXd& rates, double T, double* phi_left) {
  const auto& dd = std::get<DiffDriveParams>(cfg.truth.drive);
  const double wl = rates[0], wr = rates[1];
  const int steps = 2000;
  const double h = T / steps;
  double x = 0, y = 0, th = 0, phi = *phi_left;
  for (int i = 0; i < steps; ++i) {
    double rl = dd.r_left, rr = dd.r_right;
    switch (d.kind) {
      case Distortion::kNone:
        break;
      case Distortion::kRadiusScale:
        rl *= d.scale_left;
        rr *= d.scale_right;
        break;
      case Distortion::kPeriodicRadius:
        rl *= 1.0 + d.lobe_amplitude * std::cos(phi);
        break;
      case Distortion::kAxisSkew:
        break;
    }
    const double v = 0.5 * (rl * wl + rr * wr);
    const double om = (-rl * wl + rr * wr) / dd.axle;
    const double vy = d.kind == Distortion::kAxisSkew ? d.skew * v : 0.0;
    const double c = std::cos(th), s = std::sin(th);
    x += h * (v * c - vy * s);
    y += h * (v * s + vy * c);
    th += h * om;
    phi += h * wl;
  }
  *phi_left = phi;
  return Pose2D(x, y, th);
}

inline ModelFreeSplit synth_split(const SimConfig& cfg, const DistortionSpec& d,
                                  std::mt19937_64& rng) {
  const std::vector<Eigen::VectorXd> rates = gen_profile(cfg);
  const int n = static_cast<int>(rates.size());
  const double T = cfg.sample_period;
  const double rad_per_tick = 2.0 * kPi / cfg.ticks_per_rev;
  const Eigen::Vector3d sigma = cfg.noise_sigma.cwiseMax(1e-6);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ModelFreeSplit out;
  out.times.resize(n + 1);
  for (int i = 0; i <= n; ++i) out.times[i] = T * i;
  double phi = 0.0;
  Pose2D q_acc;
  out.sensor_traj.push_back(oplus(q_acc, cfg.truth.extrinsic));
  for (int i = 0; i < n; ++i) {
    out.ticks.push_back((rates[i] * T / rad_per_tick).array().round());
    Pose2D q_step;
    if (d.kind == Distortion::kNone) {
      WheelRates wr;
      wr.omega = rates[i];
      q_step = robot_relative_pose(cfg.truth.drive, wr, T);
    } else {
      q_step = distorted_step(cfg, d, rates[i], T, &phi);
    }
    q_acc = oplus(q_acc, q_step);
    out.sensor_traj.push_back(oplus(q_acc, cfg.truth.extrinsic));
    const Pose2D s = sensor_displacement(cfg.truth.extrinsic, q_step);
    out.s_true.push_back(s);
    DisplacementObs o;
    o.j = i;
    o.k = i + 1;
    o.tj = out.times[i];
    o.tk = out.times[i + 1];
    o.sigma = sigma;
    Eigen::Vector3d v(s.x, s.y, s.theta);
    if (cfg.noise_sigma.maxCoeff() > 0.0)
      for (int c = 0; c < 3; ++c) v[c] += cfg.noise_sigma[c] * gauss(rng);
    o.s_hat = Pose2D(v[0], v[1], v[2]);
    out.obs.push_back(o);
  }
  return out;
}

}  // namespace detail

/// Train/test datasets from a distorted drive. The ground-truth motion comes
/// from fine-step integration of the distorted kinematics; observations add
/// the configured Gaussian noise. Held-out truth is kept for evaluation.
inline ModelFreeDataset synth_model_free(const SimConfig& cfg, const DistortionSpec& d) {
  std::mt19937_64 rng(cfg.seed * 31ULL + 3);
  ModelFreeDataset ds;
  ds.train = detail::synth_split(cfg, d, rng);
  SimConfig test_cfg = cfg;
  test_cfg.seed = cfg.seed + 500009;
  ds.test = detail::synth_split(test_cfg, d, rng);
  return ds;
}

}  // namespace wheelcal
