/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"
#include "wheelcal/kinematics.hpp"
#include "wheelcal/modelfree.hpp"

namespace wheelcal {

/// Ordered timestamped poses.
struct Trajectory {
  std::vector<double> times;
  std::vector<Pose2D> poses;

  size_t size() const { return poses.size(); }
};

namespace detail {

// Nearest-timestamp association within tolerance; errors when unmatched.
inline std::vector<int> associate(const Trajectory& est, const Trajectory& ref, double tol) {
  if (est.size() != est.times.size() || ref.size() != ref.times.size())
    throw std::invalid_argument("associate: malformed trajectory");
  std::vector<int> match(est.size(), -1);
  for (size_t i = 0; i < est.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int bi = -1;
    for (size_t j = 0; j < ref.size(); ++j) {
      const double d = std::abs(est.times[i] - ref.times[j]);
      if (d < best) {
        best = d;
        bi = static_cast<int>(j);
      }
    }
    if (bi < 0 || best > tol)
      throw std::invalid_argument("associate: unmatched timestamp " +
                                  std::to_string(est.times[i]));
    match[i] = bi;
  }
  return match;
}

}  // namespace detail

struct MetricsReport {
  double ate_m = 0.0;
  double rpe_m = 0.0;
  int n_poses = 0;
  std::vector<double> per_step_rpe;   // n-1 entries
  std::vector<double> per_pose_ate;   // n entries
};

/// Relative pose error: RMS translational magnitude of the step mismatch
/// ominus(est step) (+) (ref step).
inline double rpe(const Trajectory& est, const Trajectory& ref, double assoc_tol = 0.35,
                  std::vector<double>* per_step = nullptr) {
  if (est.size() < 2) throw std::invalid_argument("rpe: need >= 2 poses");
  if (est.size() != ref.size()) throw std::invalid_argument("rpe: trajectory length mismatch");
  const std::vector<int> match = detail::associate(est, ref, assoc_tol);
  double acc = 0.0;
  if (per_step) per_step->clear();
  const size_t n = est.size();
  for (size_t k = 0; k + 1 < n; ++k) {
    const Pose2D step_est = relative_pose(est.poses[k], est.poses[k + 1]);
    const Pose2D step_ref = relative_pose(ref.poses[match[k]], ref.poses[match[k + 1]]);
    const Pose2D e = oplus(ominus(step_est), step_ref);
    const double t2 = e.translation().squaredNorm();
    acc += t2;
    if (per_step) per_step->push_back(std::sqrt(t2));
  }
  return std::sqrt(acc / static_cast<double>(n - 1));
}

/// Absolute trajectory error: RMS translational magnitude of
/// ominus(est pose) (+) (ref pose). No alignment step is applied; both
/// trajectories are expected to share their origin convention.
inline double ate(const Trajectory& est, const Trajectory& ref, double assoc_tol = 0.35,
                  std::vector<double>* per_pose = nullptr) {
  if (est.size() != ref.size()) throw std::invalid_argument("ate: trajectory length mismatch");
  if (est.size() == 0) throw std::invalid_argument("ate: empty trajectory");
  const std::vector<int> match = detail::associate(est, ref, assoc_tol);
  double acc = 0.0;
  if (per_pose) per_pose->clear();
  for (size_t k = 0; k < est.size(); ++k) {
    const Pose2D e = oplus(ominus(est.poses[k]), ref.poses[match[k]]);
    const double t2 = e.translation().squaredNorm();
    acc += t2;
    if (per_pose) per_pose->push_back(std::sqrt(t2));
  }
  return std::sqrt(acc / static_cast<double>(est.size()));
}

/// Any per-interval sensor motion predictor.
using StepModel = std::function<Pose2D(const Eigen::VectorXd& ticks, double dt)>;

inline StepModel parametric_step(const SensorModel& model, double ticks_per_rev) {
  return [model, ticks_per_rev](const Eigen::VectorXd& ticks, double dt) {
    WheelRates r = ticks_to_rates(0.0, ticks, ticks_per_rev, dt);
    return model.predict(r, dt);
  };
}

inline StepModel gp_step(const GPModel& model) {
  return [&model](const Eigen::VectorXd& ticks, double) {
    Eigen::Vector3d mu;
    gp_predict(model, ticks, &mu, nullptr);
    return Pose2D(mu[0], mu[1], mu[2]);
  };
}

inline StepModel linear_step(const LinearModel& model) {
  return [model](const Eigen::VectorXd& ticks, double) {
    const Eigen::Vector3d s = predict_linear(model, ticks);
    return Pose2D(s[0], s[1], s[2]);
  };
}

/// Chains the per-interval model predictions from the reference start pose.
inline Trajectory predict_trajectory(const StepModel& step, const std::vector<double>& times,
                                     const std::vector<Eigen::VectorXd>& ticks,
                                     const Pose2D& start) {
  if (times.size() != ticks.size() + 1)
    throw std::invalid_argument("predict_trajectory: odometry gap, expected " +
                                std::to_string(times.size() - 1) + " tick records, got " +
                                std::to_string(ticks.size()));
  Trajectory out;
  out.times = times;
  out.poses.push_back(start);
  for (size_t i = 0; i < ticks.size(); ++i) {
    const double dt = times[i + 1] - times[i];
    if (!(dt > 0.0))
      throw std::invalid_argument("predict_trajectory: nonpositive interval at index " +
                                  std::to_string(i));
    out.poses.push_back(oplus(out.poses.back(), step(ticks[i], dt)));
  }
  return out;
}

}  // namespace wheelcal
