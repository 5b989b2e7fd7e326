/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "wheelcal/cirls.hpp"
#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"
#include "wheelcal/kinematics.hpp"
#include "wheelcal/quadratic.hpp"
#include "wheelcal/scanmatch.hpp"
#include "wheelcal/threads.hpp"

namespace wheelcal {

/// Intrinsics in the reduced variables r_L/b, r_R/b, b; the rotation part of
/// the motion depends only on the first two.
struct ReducedIntrinsics {
  double rt_l = 0.0;
  double rt_r = 0.0;
  double b = 0.0;

  static ReducedIntrinsics from(const DiffDriveParams& p) {
    return {p.r_left / p.axle, p.r_right / p.axle, p.axle};
  }
  DiffDriveParams to_params() const { return {rt_l * b, rt_r * b, b}; }
};

struct CamConfig {
  double huber_c = 1.0;
  bool use_huber = false;  // Huber loss in the intrinsic subproblem
  double outer_tol = 1e-6;
  int max_outer = 30;
  int max_inner = 50;
  int grid_points = 11;
  int grid_levels = 4;
  double grid_half_width = 0.10;  // relative, on (rt_l, rt_r)
  double trim_preset = 1.0;
  // scan pair selection
  double t_min = 0.01;
  double t_max = 0.15;
  double theta_min = 0.5 * kPi / 180.0;
  int max_successors = 3;
  bool point_to_line = false;
  // Pairs whose mean kept distance exceeds this are dropped for the current
  // correspondence freeze; they rejoin once the estimate explains them.
  double match_fail_dist = 0.05;
};

/// A selected scan pair with its aggregated wheel data.
struct ScanPair {
  int j = 0;
  int k = 0;
  double dt = 0.0;
  Eigen::Vector2d angles = Eigen::Vector2d::Zero();  // wheel angles over [t_j, t_k)
};

struct OdometryLog {
  std::vector<double> times;           // t_0 .. t_n
  std::vector<Eigen::VectorXd> ticks;  // one record per interval
  double ticks_per_rev = 2578.33;
};

inline Pose2D pair_motion(const DiffDriveParams& p, const ScanPair& sp) {
  WheelRates r;
  r.omega = sp.angles / sp.dt;
  return robot_relative_pose(DriveParams(p), r, sp.dt);
}

struct ObservabilityReport {
  bool ok = true;
  bool rotation_deficient = false;
  bool translation_deficient = false;
  bool b_deficient = false;
  std::string message;
};

/// Diagnoses motion degeneracies from predicted pair motions. Rotation-free
/// logs lose the extrinsics (l_theta and, through it, l_x, l_y);
/// translation-free logs lose the wheel radii; straight collinear motion
/// leaves the axle length b unidentified.
inline ObservabilityReport check_observability(const std::vector<Pose2D>& motions,
                                               double t_min = 0.01,
                                               double theta_min = 0.5 * kPi / 180.0,
                                               bool diff_drive = true) {
  if (motions.empty()) throw std::invalid_argument("check_observability: no motions");
  ObservabilityReport rep;
  bool any_rot = false, any_trans = false;
  Vec2 ref_dir = Vec2::Zero();
  bool collinear = true;
  for (const auto& q : motions) {
    if (std::abs(q.theta) >= theta_min) any_rot = true;
    const Vec2 t = q.translation();
    if (t.norm() >= t_min) {
      any_trans = true;
      const Vec2 dir = t.normalized();
      if (ref_dir.isZero())
        ref_dir = dir;
      else if (std::abs(dir.x() * ref_dir.y() - dir.y() * ref_dir.x()) > std::sin(theta_min))
        collinear = false;
    }
  }
  if (!any_rot) {
    rep.ok = false;
    rep.rotation_deficient = true;
    rep.message += "rotation-deficient: no pair rotates by >= theta_min; extrinsic parameters "
                   "l_theta, l_x, l_y are unobservable from pure translations. ";
  }
  if (!any_trans) {
    rep.ok = false;
    rep.translation_deficient = true;
    rep.message += diff_drive
                       ? "translation-deficient: no pair translates by >= t_min; wheel radii "
                         "r_L, r_R are unobservable from pure rotations. "
                       : "translation-deficient: no pair translates by >= t_min; wheel radius "
                         "r is unobservable from pure rotations. ";
  }
  if (diff_drive && any_trans && collinear && !any_rot) {
    rep.b_deficient = true;
    rep.message += "b-deficient: straight-line collinear motion leaves the axle length b "
                   "unobservable. ";
  }
  if (rep.ok) rep.message = "ok";
  return rep;
}

inline void require_observable(const ObservabilityReport& rep) {
  if (!rep.ok) throw ObservabilityError(rep.message);
}

/// Pairs with both translation in [t_min, t_max] and rotation >= theta_min
/// under the nominal parameters, at most max_successors per start index.
/// Pairs never span a wheel-rate change, keeping the constant-rate model
/// exact over the window.
inline std::vector<ScanPair> select_scan_pairs(const OdometryLog& odo, const SensorModel& nominal,
                                               const CamConfig& cfg) {
  const auto& dd = std::get<DiffDriveParams>(nominal.drive);
  const int n = static_cast<int>(odo.ticks.size());
  std::vector<ScanPair> out;
  std::vector<Pose2D> candidate_motions;
  for (int j = 0; j < n; ++j) {
    int taken = 0;
    for (int k = j + 1; k <= n && taken < cfg.max_successors; ++k) {
      if (k - j > 1 && !(odo.ticks[k - 1] - odo.ticks[j]).isZero(0.0)) break;  // rate change
      ScanPair sp;
      sp.j = j;
      sp.k = k;
      sp.dt = odo.times[k] - odo.times[j];
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
      for (int i = j; i < k; ++i) sum += odo.ticks[i];
      sp.angles = ticks_to_angles(sum, odo.ticks_per_rev);
      const Pose2D q = pair_motion(dd, sp);
      candidate_motions.push_back(q);
      const double trans = q.translation().norm();
      if (trans > cfg.t_max) break;
      if (trans >= cfg.t_min && std::abs(q.theta) >= cfg.theta_min) {
        out.push_back(sp);
        ++taken;
      }
    }
  }
  if (out.empty()) {
    const ObservabilityReport rep =
        check_observability(candidate_motions, cfg.t_min, cfg.theta_min);
    throw ObservabilityError("select_scan_pairs: no usable pairs (insufficient excitation). " +
                             rep.message);
  }
  return out;
}

/// Frozen correspondences for one pair: kept matches plus the sufficient
/// statistics of the raw sensor-frame points, so the closed forms and the
/// grid objective evaluate in O(1) per pair.
struct FrozenPair {
  int j = 0, k = 0;
  double dt = 0.0;
  Eigen::Vector2d angles = Eigen::Vector2d::Zero();
  int count = 0;
  Vec2 sum_j = Vec2::Zero(), sum_k = Vec2::Zero();
  double nrm_j = 0.0, nrm_k = 0.0;
  Mat2 cross = Mat2::Zero();  // sum z_j z_k'
  std::vector<std::pair<int, int>> kept_idx;
  std::vector<Vec2> pj, pk;       // kept raw points
  std::vector<Vec2> normals;      // unit normals of the scan_j side, zero if absent
};

using FrozenCorrespondences = std::vector<FrozenPair>;

inline FrozenCorrespondences freeze_correspondences(const std::vector<Scan>& scans,
                                                    const std::vector<ScanPair>& pairs,
                                                    const DiffDriveParams& r, const Pose2D& l,
                                                    bool with_normals = false,
                                                    double match_fail_dist = 0.05) {
  FrozenCorrespondences out(pairs.size());
  std::vector<char> keep(pairs.size(), 1);
  std::vector<std::vector<Vec2>> scan_normals;
  if (with_normals) {
    scan_normals.resize(scans.size());
    for (size_t i = 0; i < scans.size(); ++i) scan_normals[i] = estimate_normals(scans[i].points);
  }
  const Rot2 Rl(l.theta);  // normals freeze in the robot frame of scan_j
  parallel_for(static_cast<int>(pairs.size()), [&](int e) {
    const ScanPair& sp = pairs[e];
    const Pose2D q = pair_motion(r, sp);
    const CorrespondenceSet cs = closest_distances(scans[sp.j], scans[sp.k], q, l);
    double mean_kept = 0.0;
    for (int i = 0; i < cs.kept; ++i) mean_kept += cs.matches[i].d2;
    mean_kept /= std::max(cs.kept, 1);
    if (mean_kept > match_fail_dist * match_fail_dist) {
      keep[e] = 0;  // scan-matching failure, the pair is an outlier for now
      return;
    }
    FrozenPair fp;
    fp.j = sp.j;
    fp.k = sp.k;
    fp.dt = sp.dt;
    fp.angles = sp.angles;
    fp.count = cs.kept;
    for (int i = 0; i < cs.kept; ++i) {
      const auto& m = cs.matches[i];
      const Vec2& zj = scans[sp.j].points[m.src];
      const Vec2& zk = scans[sp.k].points[m.tgt];
      fp.kept_idx.emplace_back(m.src, m.tgt);
      fp.pj.push_back(zj);
      fp.pk.push_back(zk);
      if (with_normals) fp.normals.push_back(Rl.apply(scan_normals[sp.j][m.src]));
      fp.sum_j += zj;
      fp.sum_k += zk;
      fp.nrm_j += zj.squaredNorm();
      fp.nrm_k += zk.squaredNorm();
      fp.cross += zj * zk.transpose();
    }
    out[e] = std::move(fp);
  });
  FrozenCorrespondences kept_pairs;
  kept_pairs.reserve(pairs.size());
  for (size_t e = 0; e < out.size(); ++e)
    if (keep[e]) kept_pairs.push_back(std::move(out[e]));
  if (kept_pairs.empty())
    throw ObservabilityError("freeze_correspondences: every pair failed the match-quality gate");
  return kept_pairs;
}

namespace detail {

struct PairMotion {
  double qtheta = 0.0;
  Vec2 t_tilde = Vec2::Zero();  // translation divided by b
};

inline PairMotion reduced_motion(const ReducedIntrinsics& rt, const FrozenPair& fp) {
  PairMotion pm;
  pm.qtheta = -rt.rt_l * fp.angles[0] + rt.rt_r * fp.angles[1];
  const double vt = 0.5 * (rt.rt_l * fp.angles[0] + rt.rt_r * fp.angles[1]);
  double S, C;
  if (std::abs(pm.qtheta) < 1e-8) {
    S = 1.0 - pm.qtheta * pm.qtheta / 6.0;
    C = 0.5 * pm.qtheta - pm.qtheta * pm.qtheta * pm.qtheta / 24.0;
  } else {
    S = std::sin(pm.qtheta) / pm.qtheta;
    C = (1.0 - std::cos(pm.qtheta)) / pm.qtheta;
  }
  pm.t_tilde = Vec2(vt * S, vt * C);
  return pm;
}

}  // namespace detail

/// Frozen-correspondence objective h^alpha(r, l): total squared distance of
/// the kept matches under the motion predicted by r and extrinsic l.
inline double frozen_objective(const FrozenCorrespondences& corr, const DiffDriveParams& r,
                               const Pose2D& l) {
  const ReducedIntrinsics rt = ReducedIntrinsics::from(r);
  const Rot2 Rl(l.theta);
  const Vec2 tl = l.translation();
  double h = 0.0;
  for (const auto& fp : corr) {
    const detail::PairMotion pm = detail::reduced_motion(rt, fp);
    const Rot2 Rq(pm.qtheta);
    const Vec2 tjk = r.axle * pm.t_tilde;
    const Vec2 u = (Mat2::Identity() - Rq.matrix()) * tl - tjk;
    const double cross_term = (Rq.matrix() * fp.cross.transpose()).trace();
    const Vec2 zsum = fp.sum_j - Rq.matrix() * fp.sum_k;
    h += fp.nrm_j + fp.nrm_k - 2.0 * cross_term + 2.0 * u.dot(Rl.apply(zsum)) +
         fp.count * u.squaredNorm();
  }
  return h;
}

/// Trimmed correspondence error with fresh correspondences at (r, l).
inline double trimmed_objective(const std::vector<Scan>& scans,
                                const std::vector<ScanPair>& pairs, const DiffDriveParams& r,
                                const Pose2D& l, FrozenCorrespondences* corr_out = nullptr) {
  FrozenCorrespondences corr = freeze_correspondences(scans, pairs, r, l);
  const double h = frozen_objective(corr, r, l);
  if (corr_out) *corr_out = std::move(corr);
  return h;
}

/// Closed-form extrinsic estimate over frozen correspondences: builds the
/// constrained quadratic of the rotation direction (cos l_theta, sin l_theta)
/// after eliminating the translation through the pseudo-inverse of Q.
inline Pose2D extrinsic_closed_form(const FrozenCorrespondences& corr, const DiffDriveParams& r) {
  const ReducedIntrinsics rt = ReducedIntrinsics::from(r);
  Mat2 Q = Mat2::Zero(), M = Mat2::Zero();
  Vec2 g = Vec2::Zero(), d = Vec2::Zero();
  for (const auto& fp : corr) {
    const detail::PairMotion pm = detail::reduced_motion(rt, fp);
    const Rot2 Rq(pm.qtheta);
    const Mat2 Rjk = Mat2::Identity() - Rq.matrix();
    const Vec2 tjk = r.axle * pm.t_tilde;
    const Vec2 zjk = fp.sum_j - Rq.matrix() * fp.sum_k;
    Mat2 Zjk;
    Zjk << zjk.x(), zjk.y(), -zjk.y(), zjk.x();
    Q += fp.count * Rjk.transpose() * Rjk;
    M += 2.0 * Zjk * Rjk;
    g += -2.0 * Zjk * tjk;
    d += -2.0 * fp.count * Rjk.transpose() * tjk;
  }
  Eigen::SelfAdjointEigenSolver<Mat2> es(Q);
  const double qmax = es.eigenvalues().maxCoeff();
  if (qmax <= 1e-18)
    throw ObservabilityError("extrinsic_closed_form: Q singular, no rotating pair");
  Mat2 Qinv = Mat2::Zero();
  for (int i = 0; i < 2; ++i)
    if (es.eigenvalues()[i] > 1e-12 * qmax)
      Qinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() /
              es.eigenvalues()[i];

  const Mat2 Mt = -0.25 * M * Qinv * M.transpose();
  const Vec2 gt = g - 0.5 * M * Qinv * d;
  const Eigen::Vector2d x = solve_constrained_quadratic(Mt, gt);
  const Vec2 t = -0.5 * Qinv * (M.transpose() * x + d);
  return Pose2D(t.x(), t.y(), std::atan2(x[1], x[0]));
}

/// Closed-form axle length given the reduced radii and the extrinsic.
inline double b_closed_form(const FrozenCorrespondences& corr, double rt_l, double rt_r,
                            const Pose2D& l) {
  const ReducedIntrinsics rt{rt_l, rt_r, 1.0};
  const Rot2 Rl(l.theta);
  const Vec2 tl = l.translation();
  double num = 0.0, den = 0.0;
  for (const auto& fp : corr) {
    const detail::PairMotion pm = detail::reduced_motion(rt, fp);
    const Rot2 Rq(pm.qtheta);
    const Vec2 zsum = Rl.apply(fp.sum_j - Rq.matrix() * fp.sum_k) +
                      fp.count * (Mat2::Identity() - Rq.matrix()) * tl;
    num += pm.t_tilde.dot(zsum);
    den += fp.count * pm.t_tilde.squaredNorm();
  }
  if (den <= 1e-18)
    throw ObservabilityError("b_closed_form: no predicted translation, b unobservable");
  return num / den;
}

namespace detail {

// Per-point Huber evaluation for the intrinsic subproblem. The residual
// scale is frozen by the caller so node objectives stay comparable.
struct IntrinsicPointEval {
  double objective = 0.0;
  double b_hat = 0.0;
};

inline IntrinsicPointEval intrinsic_eval_huber(const FrozenCorrespondences& corr,
                                               const ReducedIntrinsics& rt, const Pose2D& l,
                                               double huber_c, double scale) {
  const Rot2 Rl(l.theta);
  const Vec2 tl = l.translation();
  // IRLS on b with Huber weights over point residual norms.
  double b = 0.0;
  for (int iter = 0; iter < 4; ++iter) {
    double num = 0.0, den = 0.0;
    for (const auto& fp : corr) {
      const PairMotion pm = reduced_motion(rt, fp);
      const Rot2 Rq(pm.qtheta);
      for (size_t i = 0; i < fp.pj.size(); ++i) {
        const Vec2 zj = Rl.apply(fp.pj[i]) + tl;
        const Vec2 zk = Rq.matrix() * (Rl.apply(fp.pk[i]) + tl);
        const Vec2 diff = zj - zk;
        double w = 1.0;
        if (iter > 0) {
          const double e = (diff - b * pm.t_tilde).norm() / scale;
          w = e <= huber_c ? 1.0 : huber_c / e;
        }
        num += w * pm.t_tilde.dot(diff);
        den += w * pm.t_tilde.squaredNorm();
      }
    }
    if (den <= 1e-18)
      throw ObservabilityError("intrinsic_search: no predicted translation under Huber mode");
    b = num / den;
  }
  IntrinsicPointEval out;
  out.b_hat = b;
  for (const auto& fp : corr) {
    const PairMotion pm = reduced_motion(rt, fp);
    const Rot2 Rq(pm.qtheta);
    for (size_t i = 0; i < fp.pj.size(); ++i) {
      const Vec2 zj = Rl.apply(fp.pj[i]) + tl;
      const Vec2 zk = Rq.matrix() * (Rl.apply(fp.pk[i]) + tl);
      const double e = (zj - zk - b * pm.t_tilde).norm() / scale;
      out.objective += huber_loss(e, huber_c) * scale * scale;
    }
  }
  return out;
}

}  // namespace detail

struct IntrinsicSearchResult {
  DiffDriveParams params;
  double objective = 0.0;
  bool on_boundary = false;
};

/// Point-to-line extrinsic closed form: the 4D constrained quadratic in
/// (l_x, l_y, cos l_theta, sin l_theta) with x' W x = 1 on the trailing
/// pair, reduced to the 2D solver by eliminating the free translation.
inline Pose2D plicp_extrinsic_closed_form(const FrozenCorrespondences& corr,
                                          const DiffDriveParams& r);

/// Point-to-line intrinsic search: the same grid with normal-weighted norms
/// and the axle length rederived with the weighted sums.
inline IntrinsicSearchResult plicp_intrinsic_search(const FrozenCorrespondences& corr,
                                                    const Pose2D& l, const DiffDriveParams& init,
                                                    const CamConfig& cfg,
                                                    double half_width_override = -1.0);

/// Multi-level grid search over (r_L/b, r_R/b) with the axle length solved
/// in closed form at every node. The incumbent sits on the center node, so
/// the returned objective never exceeds the incumbent's.
inline IntrinsicSearchResult intrinsic_search(const FrozenCorrespondences& corr, const Pose2D& l,
                                              const DiffDriveParams& init, const CamConfig& cfg,
                                              double half_width_override = -1.0) {
  const ReducedIntrinsics rt0 = ReducedIntrinsics::from(init);
  const double hw0 = (half_width_override > 0.0 ? half_width_override : cfg.grid_half_width);
  const Rot2 Rl(l.theta);
  const Vec2 tl = l.translation();

  double huber_scale = 1.0;
  const auto rescale_at = [&](const ReducedIntrinsics& rt, double b) {
    std::vector<double> norms;
    for (const auto& fp : corr) {
      const detail::PairMotion pm = detail::reduced_motion(rt, fp);
      const Rot2 Rq(pm.qtheta);
      for (size_t i = 0; i < fp.pj.size(); ++i) {
        const Vec2 zj = Rl.apply(fp.pj[i]) + tl;
        const Vec2 zk = Rq.matrix() * (Rl.apply(fp.pk[i]) + tl);
        norms.push_back((zj - zk - b * pm.t_tilde).norm());
      }
    }
    std::nth_element(norms.begin(), norms.begin() + norms.size() / 2, norms.end());
    huber_scale = std::max(1.4826 * norms[norms.size() / 2], 1e-6);
  };

  const auto evaluate = [&](double rl, double rr, double* b_out) {
    if (cfg.use_huber) {
      const auto ev = detail::intrinsic_eval_huber(corr, {rl, rr, 1.0}, l, cfg.huber_c,
                                                   huber_scale);
      *b_out = ev.b_hat;
      return ev.objective;
    }
    const double b = b_closed_form(corr, rl, rr, l);
    *b_out = b;
    return frozen_objective(corr, DiffDriveParams{rl * b, rr * b, b}, l);
  };

  double cl = rt0.rt_l, cr = rt0.rt_r;
  double best_l = cl, best_r = cr, best_b = init.axle;
  double best_val = 0.0;
  bool boundary = false;

  // Huber mode refreshes the robust residual scale at the running optimum;
  // the first incumbent's own parameter error would otherwise mask outliers.
  const int rounds = cfg.use_huber ? 3 : 1;
  for (int round = 0; round < rounds; ++round) {
    if (cfg.use_huber) rescale_at({cl, cr, 1.0}, best_b);
    best_val = evaluate(cl, cr, &best_b);
    best_l = cl;
    best_r = cr;
    double hw = hw0;
    for (int level = 0; level < cfg.grid_levels; ++level) {
      const double span_l = hw * std::abs(cl), span_r = hw * std::abs(cr);
      const int np = cfg.grid_points;
      int best_i = -1, best_jn = -1;
      for (int i = 0; i < np; ++i) {
        const double rl = cl - span_l + 2.0 * span_l * i / (np - 1);
        if (rl <= 0.0) continue;
        for (int jn = 0; jn < np; ++jn) {
          const double rr = cr - span_r + 2.0 * span_r * jn / (np - 1);
          if (rr <= 0.0) continue;
          double b = 0.0;
          const double val = evaluate(rl, rr, &b);
          if (val < best_val) {
            best_val = val;
            best_l = rl;
            best_r = rr;
            best_b = b;
            best_i = i;
            best_jn = jn;
          }
        }
      }
      if (level == cfg.grid_levels - 1 && best_i >= 0 &&
          (best_i == 0 || best_i == np - 1 || best_jn == 0 || best_jn == np - 1))
        boundary = true;
      cl = best_l;
      cr = best_r;
      hw *= 0.3;
    }
  }

  IntrinsicSearchResult res;
  // The sign ambiguity is resolved by cam_calibrate through the full
  // objective-preserving flip; a partial flip here would change h at fixed l.
  res.params = DiffDriveParams{best_l * best_b, best_r * best_b, best_b};
  res.objective = best_val;
  res.on_boundary = boundary;
  return res;
}

/// Joint scan-matching and calibration by alternating minimization. The
/// outer loop refreshes correspondences at the current estimate; the inner
/// loop alternates the closed-form extrinsic and the grid intrinsic steps
/// and must not increase the frozen objective.
inline CalibrationResult cam_calibrate(const std::vector<Scan>& scans,
                                       const std::vector<ScanPair>& pairs,
                                       const SensorModel& init, const CamConfig& cfg = {}) {
  const auto* dd0 = std::get_if<DiffDriveParams>(&init.drive);
  if (!dd0) throw std::invalid_argument("cam_calibrate: diff drive only");

  {
    std::vector<Pose2D> motions;
    for (const auto& sp : pairs) motions.push_back(pair_motion(*dd0, sp));
    require_observable(check_observability(motions, cfg.t_min, cfg.theta_min));
  }

  DiffDriveParams r = *dd0;
  Pose2D l = init.extrinsic;
  CalibrationResult result;
  result.names = param_names(init.drive);

  std::vector<std::vector<std::pair<int, int>>> prev_kept;
  bool outer_converged = false;
  int total_points = 0;
  double final_h = 0.0;

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    const FrozenCorrespondences corr = freeze_correspondences(
        scans, pairs, r, l, cfg.point_to_line, cfg.match_fail_dist);
    total_points = 0;
    for (const auto& fp : corr) total_points += fp.count;

    double h = frozen_objective(corr, r, l);
    const double slack = 1e-9 * (1.0 + std::abs(h));
    double hw = cfg.grid_half_width;

    Eigen::VectorXd p_prev(6);
    p_prev << r.r_left, r.r_right, r.axle, l.x, l.y, l.theta;

    for (int inner = 0; inner < cfg.max_inner; ++inner) {
      const Pose2D l_new = cfg.point_to_line ? plicp_extrinsic_closed_form(corr, r)
                                             : extrinsic_closed_form(corr, r);
      const double h_l = cfg.use_huber ? h : frozen_objective(corr, r, l_new);
      if (!cfg.use_huber) {
        if (h_l > h + slack)
          throw ConvergenceError("cam_calibrate: extrinsic step increased the objective");
        h = h_l;
        l = l_new;
      } else {
        l = l_new;
      }

      const IntrinsicSearchResult ir = cfg.point_to_line
                                           ? plicp_intrinsic_search(corr, l, r, cfg, hw)
                                           : intrinsic_search(corr, l, r, cfg, hw);
      if (!cfg.use_huber && ir.objective > h + slack)
        throw ConvergenceError("cam_calibrate: intrinsic step increased the objective");
      h = ir.objective;
      r = ir.params;

      Eigen::VectorXd p_now(6);
      p_now << r.r_left, r.r_right, r.axle, l.x, l.y, l.theta;
      const double step = (p_now - p_prev).norm();
      result.log.push_back({outer, h, step, 0});
      p_prev = p_now;
      if (step <= cfg.outer_tol) break;
      // Each sweep localizes the grid optimum well inside the next, smaller
      // window, so the width shrinks geometrically across sweeps.
      hw = std::max(hw * 0.05, 1e-8);
    }

    std::vector<std::vector<std::pair<int, int>>> kept;
    for (const auto& fp : corr) kept.push_back(fp.kept_idx);
    final_h = h;
    if (!prev_kept.empty() && kept == prev_kept) {
      outer_converged = true;
      break;
    }
    prev_kept = std::move(kept);
  }
  result.converged = outer_converged || cfg.max_outer == 1;

  // Sign canonicalization: positive radii and axle.
  if (r.axle < 0.0) {
    r = DiffDriveParams{-r.r_left, -r.r_right, -r.axle};
    l = Pose2D(-l.x, -l.y, l.theta + kPi);
  }

  result.model = SensorModel{DriveParams(r), l};
  result.params = pack_params(result.model);
  result.mse = total_points > 0 ? final_h / total_points : 0.0;
  result.covariance.resize(0, 0);
  result.sigma3.resize(0);
  return result;
}

inline Pose2D plicp_extrinsic_closed_form(const FrozenCorrespondences& corr,
                                          const DiffDriveParams& r) {
  const ReducedIntrinsics rt = ReducedIntrinsics::from(r);
  Eigen::Matrix4d M4 = Eigen::Matrix4d::Zero();
  Eigen::Vector4d g4 = Eigen::Vector4d::Zero();
  bool any_normal = false;
  for (const auto& fp : corr) {
    const detail::PairMotion pm = detail::reduced_motion(rt, fp);
    const Rot2 Rq(pm.qtheta);
    const Mat2 Rjk = Mat2::Identity() - Rq.matrix();
    const Vec2 tjk = r.axle * pm.t_tilde;
    for (size_t i = 0; i < fp.pj.size(); ++i) {
      if (fp.normals.empty() || fp.normals[i].squaredNorm() < 0.5) continue;
      any_normal = true;
      const Vec2 n = fp.normals[i];
      const Mat2 C = n * n.transpose();
      const Vec2 zjk = fp.pj[i] - Rq.matrix() * fp.pk[i];
      Eigen::Matrix<double, 2, 4> Mi;
      Mi.block<2, 2>(0, 0) = Rjk;
      Mi(0, 2) = zjk.x();
      Mi(0, 3) = -zjk.y();
      Mi(1, 2) = zjk.y();
      Mi(1, 3) = zjk.x();
      M4 += Mi.transpose() * C * Mi;
      g4 += -2.0 * Mi.transpose() * C * tjk;
    }
  }
  if (!any_normal)
    throw ConditioningError("plicp_extrinsic_closed_form: no valid normals");

  const Mat2 A = M4.block<2, 2>(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat2> esA(A);
  if (esA.eigenvalues()[0] < 1e-10 * std::max(esA.eigenvalues()[1], 1e-300))
    throw ConditioningError("plicp_extrinsic_closed_form: degenerate normal directions, "
                            "translation block rank-deficient");
  const Mat2 B = M4.block<2, 2>(0, 2);
  const Mat2 D = M4.block<2, 2>(2, 2);
  const Vec2 g1 = g4.head<2>(), g2 = g4.tail<2>();
  const Mat2 Ainv = A.inverse();
  const Mat2 Mt = D - B.transpose() * Ainv * B;
  const Vec2 gt = g2 - B.transpose() * Ainv * g1;
  const Eigen::Vector2d x = solve_constrained_quadratic(Mt, gt);
  const Vec2 t = -Ainv * (B * x + 0.5 * g1);
  return Pose2D(t.x(), t.y(), std::atan2(x[1], x[0]));
}

inline IntrinsicSearchResult plicp_intrinsic_search(const FrozenCorrespondences& corr,
                                                    const Pose2D& l, const DiffDriveParams& init,
                                                    const CamConfig& cfg,
                                                    double half_width_override) {
  const ReducedIntrinsics rt0 = ReducedIntrinsics::from(init);
  double hw = (half_width_override > 0.0 ? half_width_override : cfg.grid_half_width);
  const Rot2 Rl(l.theta);
  const Vec2 tl = l.translation();

  const auto evaluate = [&](double rl, double rr, double* b_out) {
    const ReducedIntrinsics rt{rl, rr, 1.0};
    double num = 0.0, den = 0.0;
    // b in closed form with the C-weighted sums, then the weighted objective.
    std::vector<detail::PairMotion> motions(corr.size());
    for (size_t e = 0; e < corr.size(); ++e) {
      const auto& fp = corr[e];
      motions[e] = detail::reduced_motion(rt, fp);
      const Rot2 Rq(motions[e].qtheta);
      for (size_t i = 0; i < fp.pj.size(); ++i) {
        const Vec2 n = fp.normals.empty() ? Vec2::Zero() : fp.normals[i];
        const Mat2 C = n.squaredNorm() > 0.5 ? Mat2(n * n.transpose()) : Mat2::Identity();
        const Vec2 zj = Rl.apply(fp.pj[i]) + tl;
        const Vec2 zk = Rq.matrix() * (Rl.apply(fp.pk[i]) + tl);
        num += motions[e].t_tilde.dot(C * (zj - zk));
        den += motions[e].t_tilde.dot(C * motions[e].t_tilde);
      }
    }
    if (den <= 1e-18)
      throw ObservabilityError("plicp_intrinsic_search: no predicted translation");
    const double b = num / den;
    *b_out = b;
    double h = 0.0;
    for (size_t e = 0; e < corr.size(); ++e) {
      const auto& fp = corr[e];
      const Rot2 Rq(motions[e].qtheta);
      for (size_t i = 0; i < fp.pj.size(); ++i) {
        const Vec2 n = fp.normals.empty() ? Vec2::Zero() : fp.normals[i];
        const Vec2 zj = Rl.apply(fp.pj[i]) + tl;
        const Vec2 zk = Rq.matrix() * (Rl.apply(fp.pk[i]) + tl);
        const Vec2 d = zj - zk - b * motions[e].t_tilde;
        if (n.squaredNorm() > 0.5) {
          const double nd = n.dot(d);
          h += nd * nd;
        } else {
          h += d.squaredNorm();
        }
      }
    }
    return h;
  };

  double cl = rt0.rt_l, cr = rt0.rt_r;
  double best_l = cl, best_r = cr, best_b = 0.0;
  double best_val = evaluate(cl, cr, &best_b);
  bool boundary = false;
  for (int level = 0; level < cfg.grid_levels; ++level) {
    const double span_l = hw * std::abs(cl), span_r = hw * std::abs(cr);
    const int np = cfg.grid_points;
    int best_i = -1, best_jn = -1;
    for (int i = 0; i < np; ++i) {
      const double rl = cl - span_l + 2.0 * span_l * i / (np - 1);
      if (rl <= 0.0) continue;
      for (int jn = 0; jn < np; ++jn) {
        const double rr = cr - span_r + 2.0 * span_r * jn / (np - 1);
        if (rr <= 0.0) continue;
        double b = 0.0;
        const double val = evaluate(rl, rr, &b);
        if (val < best_val) {
          best_val = val;
          best_l = rl;
          best_r = rr;
          best_b = b;
          best_i = i;
          best_jn = jn;
        }
      }
    }
    if (level == cfg.grid_levels - 1 && best_i >= 0 &&
        (best_i == 0 || best_i == np - 1 || best_jn == 0 || best_jn == np - 1))
      boundary = true;
    cl = best_l;
    cr = best_r;
    hw *= 0.3;
  }

  IntrinsicSearchResult res;
  res.params = DiffDriveParams{best_l * best_b, best_r * best_b, best_b};
  res.objective = best_val;
  res.on_boundary = boundary;
  return res;
}

}  // namespace wheelcal
