/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"

namespace wheelcal {

/// Timestamped 2D point cloud in the sensor frame.
struct Scan {
  double timestamp = 0.0;
  std::vector<Vec2> points;
};

struct Correspondence {
  int src = -1;  // index into the query scan
  int tgt = -1;  // index of the nearest target point
  double d2 = 0.0;
};

/// Matches for a scan pair. `matches` is sorted ascending by (d2, src);
/// the first `kept` entries survive trimming.
struct CorrespondenceSet {
  int j = 0;
  int k = 0;
  std::vector<Correspondence> matches;
  double zeta = 1.0;
  int kept = 0;
};

/// Scan-matching output: sensor displacement over (t_j, t_k) with
/// per-component standard deviations.
struct DisplacementObs {
  int j = 0;
  int k = 0;
  double tj = 0.0;
  double tk = 0.0;
  Pose2D s_hat;
  Eigen::Vector3d sigma{1e-3, 1e-3, 1e-3};
};

namespace detail {

// Uniform-grid nearest neighbour. Candidate rings are expanded until the
// ring's lower distance bound exceeds the incumbent, and ties resolve to the
// smallest index, so the result is identical to the exhaustive scan.
class PointGrid {
 public:
  explicit PointGrid(const std::vector<Vec2>& pts) : pts_(pts) {
    lo_ = Vec2(std::numeric_limits<double>::max(), std::numeric_limits<double>::max());
    Vec2 hi = -lo_;
    for (const auto& p : pts) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo_).maxCoeff(), 1e-9);
    const int target_cells = static_cast<int>(std::sqrt(static_cast<double>(pts.size()))) + 1;
    cell_ = extent / target_cells;
    nx_ = static_cast<int>((hi.x() - lo_.x()) / cell_) + 1;
    ny_ = static_cast<int>((hi.y() - lo_.y()) / cell_) + 1;
    cells_.resize(static_cast<size_t>(nx_) * ny_);
    for (int i = 0; i < static_cast<int>(pts.size()); ++i)
      cells_[cell_index(pts[i])].push_back(i);
  }

  Correspondence nearest(const Vec2& q) const {
    const int cx = clampi(static_cast<int>((q.x() - lo_.x()) / cell_), 0, nx_ - 1);
    const int cy = clampi(static_cast<int>((q.y() - lo_.y()) / cell_), 0, ny_ - 1);
    Correspondence best;
    best.d2 = std::numeric_limits<double>::infinity();
    const int max_ring = std::max(nx_, ny_);
    for (int r = 0; r <= max_ring; ++r) {
      const double bound = r <= 1 ? 0.0 : (r - 1) * cell_;
      if (bound * bound > best.d2) break;
      visit_ring(cx, cy, r, [&](int idx) {
        const double d = (pts_[idx] - q).squaredNorm();
        if (d < best.d2 || (d == best.d2 && idx < best.tgt)) {
          best.d2 = d;
          best.tgt = idx;
        }
      });
    }
    return best;
  }

 private:
  static int clampi(int v, int lo, int hi) { return std::max(lo, std::min(v, hi)); }

  size_t cell_index(const Vec2& p) const {
    const int cx = clampi(static_cast<int>((p.x() - lo_.x()) / cell_), 0, nx_ - 1);
    const int cy = clampi(static_cast<int>((p.y() - lo_.y()) / cell_), 0, ny_ - 1);
    return static_cast<size_t>(cy) * nx_ + cx;
  }

  template <typename Fn>
  void visit_ring(int cx, int cy, int r, Fn&& fn) const {
    const int x0 = cx - r, x1 = cx + r, y0 = cy - r, y1 = cy + r;
    for (int y = y0; y <= y1; ++y) {
      if (y < 0 || y >= ny_) continue;
      for (int x = x0; x <= x1; ++x) {
        if (x < 0 || x >= nx_) continue;
        if (r > 0 && x != x0 && x != x1 && y != y0 && y != y1) continue;
        for (int idx : cells_[static_cast<size_t>(y) * nx_ + x]) fn(idx);
      }
    }
  }

  const std::vector<Vec2>& pts_;
  Vec2 lo_;
  double cell_ = 1.0;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

inline Correspondence nearest_brute(const std::vector<Vec2>& targets, const Vec2& q) {
  Correspondence best;
  best.d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(targets.size()); ++i) {
    const double d = (targets[i] - q).squaredNorm();
    if (d < best.d2) {
      best.d2 = d;
      best.tgt = i;
    }
  }
  return best;
}

}  // namespace detail

/// For every query point, the index of (and squared distance to) its nearest
/// target point. Grid-accelerated above a small size, exhaustive otherwise;
/// both paths return identical indices.
inline std::vector<Correspondence> nearest_neighbors(const std::vector<Vec2>& queries,
                                                     const std::vector<Vec2>& targets,
                                                     bool force_brute = false) {
  std::vector<Correspondence> out(queries.size());
  if (force_brute || targets.size() < 16) {
    for (size_t i = 0; i < queries.size(); ++i) {
      out[i] = detail::nearest_brute(targets, queries[i]);
      out[i].src = static_cast<int>(i);
    }
    return out;
  }
  detail::PointGrid grid(targets);
  for (size_t i = 0; i < queries.size(); ++i) {
    out[i] = grid.nearest(queries[i]);
    out[i].src = static_cast<int>(i);
  }
  return out;
}

/// Overlap fraction and kept count from a sorted squared-distance profile.
/// Minimizes e(zeta) / zeta^(1+lambda) with lambda = 2 over the grid
/// 0.40, 0.45, ..., 1.00, where e is the mean of the kept distances. Ties
/// resolve to the largest overlap.
struct TrimResult {
  double zeta = 1.0;
  int kept = 0;
};

inline TrimResult trim_overlap(const std::vector<double>& sorted_d2) {
  if (sorted_d2.empty()) throw std::invalid_argument("trim_overlap: empty distances");
  const int n = static_cast<int>(sorted_d2.size());
  std::vector<double> prefix(n + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + sorted_d2[i];

  TrimResult best;
  double best_val = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 12; ++step) {
    const double zeta = 0.40 + 0.05 * step;
    const int kept = std::clamp(static_cast<int>(std::lround(zeta * n)), 1, n);
    const double e = prefix[kept] / kept;
    const double val = e / (zeta * zeta * zeta);
    if (val <= best_val) {
      best_val = val;
      best = {zeta, kept};
    }
  }
  return best;
}

/// Correspondences for a scan pair under robot motion q_jk and extrinsic l:
/// scan_j in the robot frame against scan_k moved by q_jk (both through l).
/// Matches come back sorted ascending and trimmed.
inline CorrespondenceSet closest_distances(const Scan& scan_j, const Scan& scan_k,
                                           const Pose2D& q_jk, const Pose2D& l,
                                           bool force_brute = false) {
  if (scan_j.points.empty() || scan_k.points.empty())
    throw std::invalid_argument("closest_distances: empty scan");
  std::vector<Vec2> src(scan_j.points.size());
  for (size_t i = 0; i < src.size(); ++i) src[i] = l.transform(scan_j.points[i]);
  const Pose2D ql = oplus(q_jk, l);
  std::vector<Vec2> tgt(scan_k.points.size());
  for (size_t i = 0; i < tgt.size(); ++i) tgt[i] = ql.transform(scan_k.points[i]);

  CorrespondenceSet cs;
  cs.matches = nearest_neighbors(src, tgt, force_brute);
  std::sort(cs.matches.begin(), cs.matches.end(), [](const auto& a, const auto& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.src < b.src;
  });
  std::vector<double> d2(cs.matches.size());
  for (size_t i = 0; i < d2.size(); ++i) d2[i] = cs.matches[i].d2;
  const TrimResult tr = trim_overlap(d2);
  cs.zeta = tr.zeta;
  cs.kept = tr.kept;
  return cs;
}

/// Weighted closed-form 2D alignment: the pose minimizing
/// sum_i w_i || pose (+) src_i - tgt_i ||^2.
inline Pose2D rigid_align(const std::vector<Vec2>& src, const std::vector<Vec2>& tgt,
                          const std::vector<double>& weights = {}) {
  if (src.size() != tgt.size() || src.size() < 2)
    throw std::invalid_argument("rigid_align: need >= 2 point pairs");
  const size_t n = src.size();
  double wsum = 0.0;
  Vec2 cs = Vec2::Zero(), ct = Vec2::Zero();
  for (size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    cs += w * src[i];
    ct += w * tgt[i];
  }
  if (wsum <= 0.0) throw std::invalid_argument("rigid_align: nonpositive weight sum");
  cs /= wsum;
  ct /= wsum;
  double dot = 0.0, cross = 0.0, spread = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const Vec2 a = src[i] - cs, b = tgt[i] - ct;
    dot += w * a.dot(b);
    cross += w * (a.x() * b.y() - a.y() * b.x());
    spread += w * (a.squaredNorm() + b.squaredNorm());
  }
  if (spread < 1e-24)
    throw ConditioningError("rigid_align: singular configuration (coincident points)");
  const double theta = std::atan2(cross, dot);
  const Rot2 R(theta);
  const Vec2 t = ct - R.apply(cs);
  return Pose2D(t.x(), t.y(), theta);
}

/// Unit normals per point from the segment through each point's two nearest
/// neighbours. Degenerate neighbourhoods get a zero normal.
inline std::vector<Vec2> estimate_normals(const std::vector<Vec2>& pts) {
  std::vector<Vec2> normals(pts.size(), Vec2::Zero());
  if (pts.size() < 3) return normals;
  for (size_t i = 0; i < pts.size(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2v = d1;
    int i1 = -1, i2 = -1;
    for (size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      const double d = (pts[j] - pts[i]).squaredNorm();
      if (d < d1) {
        d2v = d1;
        i2 = i1;
        d1 = d;
        i1 = static_cast<int>(j);
      } else if (d < d2v) {
        d2v = d;
        i2 = static_cast<int>(j);
      }
    }
    const Vec2 dir = pts[i2] - pts[i1];
    const double len = dir.norm();
    if (len < 1e-12) continue;
    normals[i] = Vec2(-dir.y() / len, dir.x() / len);
  }
  return normals;
}

struct IcpConfig {
  bool point_to_line = false;
  int max_iterations = 50;
  double tol = 1e-7;                 // pose-change convergence threshold
  double fail_mean_dist = 0.05;      // mean kept distance above this fails
  double sigma_floor_xy = 1e-3;      // 1 mm
  double sigma_floor_theta = 0.1 * kPi / 180.0;
  bool force_brute = false;
};

/// Trimmed ICP between two scans; returns the sensor displacement s with
/// scan_j ~ s (+) scan_k. Point-to-point by default, point-to-line when
/// normals are available (degenerate points fall back to point-to-point).
inline DisplacementObs estimate_displacement(const Scan& scan_j, const Scan& scan_k,
                                             const Pose2D& init, const IcpConfig& cfg = {}) {
  if (scan_j.points.size() < 2 || scan_k.points.size() < 2)
    throw std::invalid_argument("estimate_displacement: need >= 2 points per scan");

  Pose2D s = init;
  std::vector<Vec2> normals;
  if (cfg.point_to_line) normals = estimate_normals(scan_j.points);

  double mean_kept = std::numeric_limits<double>::infinity();
  std::vector<Correspondence> kept;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<Vec2> moved(scan_k.points.size());
    for (size_t i = 0; i < moved.size(); ++i) moved[i] = s.transform(scan_k.points[i]);
    auto matches = nearest_neighbors(scan_j.points, moved, cfg.force_brute);
    std::sort(matches.begin(), matches.end(), [](const auto& a, const auto& b) {
      return a.d2 != b.d2 ? a.d2 < b.d2 : a.src < b.src;
    });
    std::vector<double> d2(matches.size());
    for (size_t i = 0; i < d2.size(); ++i) d2[i] = matches[i].d2;
    const TrimResult tr = trim_overlap(d2);
    kept.assign(matches.begin(), matches.begin() + tr.kept);
    mean_kept = std::accumulate(d2.begin(), d2.begin() + tr.kept, 0.0) / tr.kept;

    Pose2D delta;
    if (!cfg.point_to_line) {
      std::vector<Vec2> src(kept.size()), tgt(kept.size());
      for (size_t i = 0; i < kept.size(); ++i) {
        src[i] = moved[kept[i].tgt];
        tgt[i] = scan_j.points[kept[i].src];
      }
      delta = rigid_align(src, tgt);
    } else {
      // One linearized point-to-line step: residual n' (tgt - p - dt - dth J p).
      Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
      Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
      for (const auto& m : kept) {
        const Vec2 p = moved[m.tgt];
        const Vec2 q = scan_j.points[m.src];
        const Vec2 n = normals[m.src];
        const Vec2 Jp(-p.y(), p.x());
        Eigen::Vector3d a;
        double r;
        if (n.squaredNorm() > 0.5) {
          a << n.x(), n.y(), n.dot(Jp);
          r = n.dot(q - p);
          H += a * a.transpose();
          rhs += a * r;
        } else {
          // fall back to the two point-to-point rows
          Eigen::Vector3d ax(1, 0, Jp.x()), ay(0, 1, Jp.y());
          H += ax * ax.transpose() + ay * ay.transpose();
          rhs += ax * (q.x() - p.x()) + ay * (q.y() - p.y());
        }
      }
      const Eigen::Vector3d d = H.ldlt().solve(rhs);
      delta = Pose2D(d[0], d[1], d[2]);
    }
    s = oplus(delta, s);
    const double change =
        std::max({std::abs(delta.x), std::abs(delta.y), std::abs(delta.theta)});
    if (change < cfg.tol) break;
  }

  if (mean_kept > cfg.fail_mean_dist * cfg.fail_mean_dist)
    throw MatchFailureError("estimate_displacement: diverged, mean kept distance " +
                            std::to_string(std::sqrt(mean_kept)) + " m");

  // Covariance from the final point-to-point linearization, floored.
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  double sq = 0.0;
  int rows = 0;
  for (const auto& m : kept) {
    const Vec2 p = s.transform(scan_k.points[m.tgt]);
    const Vec2 q = scan_j.points[m.src];
    const Vec2 Jp(-p.y(), p.x());
    Eigen::Vector3d ax(1, 0, Jp.x()), ay(0, 1, Jp.y());
    H += ax * ax.transpose() + ay * ay.transpose();
    sq += (q - p).squaredNorm();
    rows += 2;
  }
  DisplacementObs obs;
  obs.tj = scan_j.timestamp;
  obs.tk = scan_k.timestamp;
  obs.s_hat = s;
  const double mse = sq / std::max(rows, 1);
  const Eigen::Matrix3d cov = mse * H.ldlt().solve(Eigen::Matrix3d::Identity());
  obs.sigma[0] = std::max(std::sqrt(std::max(cov(0, 0), 0.0)), cfg.sigma_floor_xy);
  obs.sigma[1] = std::max(std::sqrt(std::max(cov(1, 1), 0.0)), cfg.sigma_floor_xy);
  obs.sigma[2] = std::max(std::sqrt(std::max(cov(2, 2), 0.0)), cfg.sigma_floor_theta);
  return obs;
}

}  // namespace wheelcal
