/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sim_helpers.hpp"
#include "wheelcal/cam.hpp"
#include "wheelcal/simulate.hpp"

using namespace wheelcal;
using sim_helpers::perturb_model;

namespace {

struct CamFixture {
  SimConfig cfg;
  Simulation sim;
  std::vector<Scan> scans;
  OdometryLog odo;
  std::vector<ScanPair> pairs;
};

CamFixture make_fixture(std::uint64_t seed, int intervals, bool noiseless_scans = true,
                        ProfileMode mode = ProfileMode::kMixed,
                        const CamConfig& cam_cfg = {}) {
  CamFixture f;
  f.cfg.truth = SensorModel{DriveParams(DiffDriveParams{0.035, 0.035, 0.238}),
                            Pose2D(0.020, 0.046, 3.13)};
  f.cfg.duration = 0.7 * intervals;
  f.cfg.seed = seed;
  f.cfg.profile = mode;
  if (noiseless_scans) {
    f.cfg.scan_range_sigma = 0.0;
    f.cfg.scan_dropout = 0.0;
  }
  f.sim = synth_displacements(f.cfg);
  f.scans = synth_scans(f.cfg, make_world_covering(f.sim.sensor_traj, seed + 1), f.sim);
  f.odo = OdometryLog{f.sim.times, f.sim.ticks, f.cfg.ticks_per_rev};
  f.pairs = select_scan_pairs(f.odo, f.cfg.truth, cam_cfg);
  return f;
}

const DiffDriveParams& truth_params(const CamFixture& f) {
  return std::get<DiffDriveParams>(f.cfg.truth.drive);
}

}  // namespace

TEST_CASE("select_scan_pairs") {
  SECTION("mixed trajectory yields threshold-satisfying pairs") {
    const CamFixture f = make_fixture(101, 80);
    REQUIRE(!f.pairs.empty());
    const CamConfig cfg;
    for (const auto& sp : f.pairs) {
      const Pose2D q = pair_motion(truth_params(f), sp);
      CHECK(q.translation().norm() >= cfg.t_min);
      CHECK(q.translation().norm() <= cfg.t_max);
      CHECK(std::abs(q.theta) >= cfg.theta_min);
    }
  }
  SECTION("straight-line log has no usable pairs") {
    SimConfig cfg;
    cfg.duration = 0.7 * 30;
    cfg.seed = 5;
    cfg.profile = ProfileMode::kStraightLine;
    const Simulation sim = synth_displacements(cfg);
    const OdometryLog odo{sim.times, sim.ticks, cfg.ticks_per_rev};
    CHECK_THROWS_AS(select_scan_pairs(odo, cfg.truth, CamConfig{}), ObservabilityError);
  }
  SECTION("t_max zero rejects everything") {
    const CamFixture f = make_fixture(102, 20);
    CamConfig cfg;
    cfg.t_max = 0.0;
    CHECK_THROWS_AS(select_scan_pairs(f.odo, f.cfg.truth, cfg), ObservabilityError);
  }
}

TEST_CASE("check_observability") {
  std::vector<Pose2D> rotations, translations, mixed;
  for (int i = 0; i < 10; ++i) {
    rotations.emplace_back(0.0, 0.0, 0.05 + 0.01 * i);
    translations.emplace_back(0.05 + 0.01 * i, 0.0, 0.0);
    mixed.emplace_back(0.05, 0.01, 0.05);
  }
  SECTION("pure rotations lose the radii") {
    const ObservabilityReport rep = check_observability(rotations);
    CHECK(!rep.ok);
    CHECK(rep.translation_deficient);
    CHECK(rep.message.find("r_L") != std::string::npos);
    CHECK(rep.message.find("r_R") != std::string::npos);
  }
  SECTION("pure translations lose the extrinsics") {
    const ObservabilityReport rep = check_observability(translations);
    CHECK(!rep.ok);
    CHECK(rep.rotation_deficient);
    CHECK(rep.message.find("l_theta") != std::string::npos);
    CHECK(rep.b_deficient);
    CHECK(rep.message.find("b-deficient") != std::string::npos);
  }
  SECTION("mixed motion is fine") {
    const ObservabilityReport rep = check_observability(mixed);
    CHECK(rep.ok);
  }
}

TEST_CASE("trimmed_objective") {
  const CamFixture f = make_fixture(103, 50);
  const Pose2D l = f.cfg.truth.extrinsic;

  const double h_truth = trimmed_objective(f.scans, f.pairs, truth_params(f), l);
  int total_points = 0;
  for (const auto& s : f.scans) total_points += static_cast<int>(s.points.size());
  CHECK(h_truth < 1e-12 * total_points);

  DiffDriveParams bad = truth_params(f);
  bad.axle *= 1.10;
  CHECK(trimmed_objective(f.scans, f.pairs, bad, l) > h_truth + 1e-9);
}

TEST_CASE("extrinsic closed form") {
  SECTION("zero extrinsic recovered") {
    CamFixture f = make_fixture(104, 50);
    f.cfg.truth.extrinsic = Pose2D();
    f.sim = synth_displacements(f.cfg);
    f.scans = synth_scans(f.cfg, make_world_covering(f.sim.sensor_traj, 7), f.sim);
    f.pairs = select_scan_pairs(OdometryLog{f.sim.times, f.sim.ticks, f.cfg.ticks_per_rev},
                                f.cfg.truth, CamConfig{});
    const auto corr =
        freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic);
    const Pose2D l = extrinsic_closed_form(corr, truth_params(f));
    CHECK(approx_equal(l, Pose2D(), 1e-9));
  }

  SECTION("K1-scale extrinsic recovered to 1e-8") {
    const CamFixture f = make_fixture(105, 60);
    const auto corr =
        freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic);
    const Pose2D l = extrinsic_closed_form(corr, truth_params(f));
    CHECK(approx_equal(l, f.cfg.truth.extrinsic, 1e-8));
  }

  SECTION("matches the dense sweep oracle away from the optimum") {
    // Freeze correspondences at a perturbed extrinsic so the minimizer is a
    // genuine interior optimum, then sweep l_theta with the translation
    // solved per angle from the raw points.
    const CamFixture f = make_fixture(106, 16);
    const SensorModel p = perturb_model(f.cfg.truth, 0.03, 9);
    const auto corr = freeze_correspondences(f.scans, f.pairs,
                                             std::get<DiffDriveParams>(p.drive), p.extrinsic);
    const DiffDriveParams& r = truth_params(f);
    const Pose2D best = extrinsic_closed_form(corr, r);

    const ReducedIntrinsics rt = ReducedIntrinsics::from(r);
    const auto objective_at = [&](double theta, Vec2* t_out) {
      Mat2 Q = Mat2::Zero();
      Vec2 rhs = Vec2::Zero();
      const Rot2 Rl(theta);
      for (const auto& fp : corr) {
        const double qt = -rt.rt_l * fp.angles[0] + rt.rt_r * fp.angles[1];
        const Rot2 Rq(qt);
        const Mat2 Rjk = Mat2::Identity() - Rq.matrix();
        const Pose2D qpose = pair_motion(r, ScanPair{fp.j, fp.k, fp.dt, fp.angles});
        const Vec2 tjk = qpose.translation();
        for (size_t i = 0; i < fp.pj.size(); ++i) {
          const Vec2 zjk = fp.pj[i] - Rq.matrix() * fp.pk[i];
          Q += Rjk.transpose() * Rjk;
          rhs += Rjk.transpose() * (tjk - Rl.apply(zjk));
        }
      }
      const Vec2 t = Q.ldlt().solve(rhs);
      if (t_out) *t_out = t;
      double h = 0.0;
      for (const auto& fp : corr) {
        const double qt = -rt.rt_l * fp.angles[0] + rt.rt_r * fp.angles[1];
        const Rot2 Rq(qt);
        const Pose2D qpose = pair_motion(r, ScanPair{fp.j, fp.k, fp.dt, fp.angles});
        const Pose2D lpose(t.x(), t.y(), theta);
        const Pose2D ql = oplus(qpose, lpose);
        for (size_t i = 0; i < fp.pj.size(); ++i)
          h += (lpose.transform(fp.pj[i]) - ql.transform(fp.pk[i])).squaredNorm();
      }
      return h;
    };

    double best_sweep = std::numeric_limits<double>::infinity();
    for (double th = 0.0; th < 2.0 * kPi; th += 1e-3)
      best_sweep = std::min(best_sweep, objective_at(th, nullptr));
    const double h_closed = objective_at(best.theta, nullptr);
    CHECK(h_closed <= best_sweep + 1e-4 * (1.0 + std::abs(best_sweep)));
  }

  SECTION("no rotation anywhere is an observability error") {
    const CamFixture f = make_fixture(107, 30);
    auto corr = freeze_correspondences(f.scans, f.pairs, truth_params(f),
                                       f.cfg.truth.extrinsic);
    for (auto& fp : corr) fp.angles = Eigen::Vector2d(1.0, 1.0);  // force q_theta = 0
    CHECK_THROWS_AS(extrinsic_closed_form(corr, truth_params(f)), ObservabilityError);
  }
}

TEST_CASE("b closed form") {
  const CamFixture f = make_fixture(108, 50);
  const auto corr =
      freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic);
  const ReducedIntrinsics rt = ReducedIntrinsics::from(truth_params(f));

  SECTION("recovers the axle length on noiseless data") {
    const double b = b_closed_form(corr, rt.rt_l, rt.rt_r, f.cfg.truth.extrinsic);
    CHECK(b == Catch::Approx(0.238).margin(1e-9));
  }

  SECTION("scales with the scan geometry") {
    auto scaled = corr;
    const double alpha = 2.5;
    for (auto& fp : scaled) {
      fp.sum_j *= alpha;
      fp.sum_k *= alpha;
      fp.nrm_j *= alpha * alpha;
      fp.nrm_k *= alpha * alpha;
      fp.cross *= alpha * alpha;
      for (auto& p : fp.pj) p *= alpha;
      for (auto& p : fp.pk) p *= alpha;
    }
    const Pose2D l_scaled(alpha * f.cfg.truth.extrinsic.x, alpha * f.cfg.truth.extrinsic.y,
                          f.cfg.truth.extrinsic.theta);
    const double b = b_closed_form(scaled, rt.rt_l, rt.rt_r, l_scaled);
    CHECK(b == Catch::Approx(alpha * 0.238).epsilon(1e-9));
  }

  SECTION("pure rotation pairs have no translation information") {
    auto rot_only = corr;
    for (auto& fp : rot_only) fp.angles = Eigen::Vector2d(-2.0, 2.0);
    CHECK_THROWS_AS(b_closed_form(rot_only, rt.rt_l, rt.rt_r, f.cfg.truth.extrinsic),
                    ObservabilityError);
  }
}

TEST_CASE("intrinsic grid search") {
  const CamFixture f = make_fixture(109, 60);
  const auto corr =
      freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic);
  const Pose2D l = f.cfg.truth.extrinsic;

  SECTION("recovers the intrinsics from a 5 percent perturbation") {
    DiffDriveParams init = truth_params(f);
    init.r_left *= 1.05;
    init.r_right *= 0.96;
    init.axle *= 1.04;
    CamConfig cfg;
    IntrinsicSearchResult res{init, 0.0, false};
    // A few alternating-style sweeps with a tightening grid, as run inside
    // cam_calibrate.
    double hw = cfg.grid_half_width;
    for (int sweep = 0; sweep < 6; ++sweep) {
      res = intrinsic_search(corr, l, res.params, cfg, hw);
      hw = std::max(hw * 0.05, 1e-7);
    }
    CHECK(std::abs(res.params.r_left - 0.035) / 0.035 < 1e-5);
    CHECK(std::abs(res.params.r_right - 0.035) / 0.035 < 1e-5);
    CHECK(std::abs(res.params.axle - 0.238) / 0.238 < 1e-5);
  }

  SECTION("returned objective never exceeds the incumbent's") {
    DiffDriveParams init = truth_params(f);
    init.r_left *= 1.03;
    const double h0 = frozen_objective(corr, init, l);
    const IntrinsicSearchResult res = intrinsic_search(corr, l, init, CamConfig{});
    CHECK(res.objective <= h0 + 1e-12 * (1.0 + h0));
  }

  SECTION("Huber mode beats squared loss under wheel slippage") {
    // Corrupt the odometry of 10 percent of the pairs; correspondences stay
    // frozen at the truth, so the corrupted pairs become gross outliers for
    // the intrinsic subproblem.
    auto corrupted = corr;
    std::mt19937_64 rng(12);
    const int n_bad = static_cast<int>(corrupted.size()) / 10;
    for (int i = 0; i < n_bad; ++i) {
      auto& fp = corrupted[rng() % corrupted.size()];
      fp.angles *= 1.35;
    }
    DiffDriveParams init = truth_params(f);
    init.r_left *= 1.02;
    init.r_right *= 0.98;

    CamConfig sq;
    CamConfig hu;
    hu.use_huber = true;
    const IntrinsicSearchResult rs = intrinsic_search(corrupted, l, init, sq);
    const IntrinsicSearchResult rh = intrinsic_search(corrupted, l, init, hu);
    const double es = std::abs(rs.params.axle - 0.238);
    const double eh = std::abs(rh.params.axle - 0.238);
    CHECK(eh <= 0.5 * es);
  }
}

TEST_CASE("cam_calibrate") {
  SECTION("noiseless K1 setup recovers all six parameters") {
    const CamFixture f = make_fixture(110, 120);
    const SensorModel init = perturb_model(f.cfg.truth, 0.05, 31);
    const CalibrationResult res = cam_calibrate(f.scans, f.pairs, init, CamConfig{});

    const Eigen::VectorXd truth = pack_params(f.cfg.truth);
    for (int i = 0; i < 5; ++i)
      CHECK(std::abs(res.params[i] - truth[i]) / std::max(std::abs(truth[i]), 0.01) < 1e-4);
    CHECK(std::abs(wrap_angle(res.params[5] - truth[5])) < 1e-4);

    // Inner objective is non-increasing within each outer iteration.
    for (size_t i = 1; i < res.log.size(); ++i) {
      if (res.log[i].outer == res.log[i - 1].outer)
        CHECK(res.log[i].objective <=
              res.log[i - 1].objective + 1e-9 * (1.0 + res.log[i - 1].objective));
    }
    // Sign canonicalization.
    const auto& dd = std::get<DiffDriveParams>(res.model.drive);
    CHECK(dd.r_left > 0);
    CHECK(dd.r_right > 0);
    CHECK(dd.axle > 0);
    CHECK(res.model.extrinsic.theta > -kPi);
    CHECK(res.model.extrinsic.theta <= kPi);
  }

  SECTION("starting at the truth stays at the truth") {
    const CamFixture f = make_fixture(111, 60);
    const CalibrationResult res = cam_calibrate(f.scans, f.pairs, f.cfg.truth, CamConfig{});
    const Eigen::VectorXd truth = pack_params(f.cfg.truth);
    for (int i = 0; i < 5; ++i)
      CHECK(std::abs(res.params[i] - truth[i]) / std::max(std::abs(truth[i]), 0.01) < 1e-6);
    REQUIRE(!res.log.empty());
    CHECK(res.log[0].step_norm < 1e-5);
  }

  SECTION("outlier pairs degrade the estimate gracefully") {
    const CamFixture clean = make_fixture(112, 100, false);  // noisy scans
    const SensorModel init = perturb_model(clean.cfg.truth, 0.04, 41);
    const CalibrationResult res_clean =
        cam_calibrate(clean.scans, clean.pairs, init, CamConfig{});

    // Replace 20 percent of the scans involved in pairs with disjoint
    // far-away clutter; those pairs can only produce mismatches.
    CamFixture dirty = clean;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n_bad = static_cast<int>(dirty.pairs.size()) / 5;
    for (int b = 0; b < n_bad; ++b) {
      const int k = dirty.pairs[rng() % dirty.pairs.size()].k;
      for (auto& p : dirty.scans[k].points) p = Vec2(40.0 + u(rng), 40.0 + u(rng));
    }
    const CalibrationResult res_dirty =
        cam_calibrate(dirty.scans, dirty.pairs, init, CamConfig{});

    const Eigen::VectorXd truth = pack_params(clean.cfg.truth);
    for (int i = 0; i < 5; ++i) {
      const double e_clean = std::abs(res_clean.params[i] - truth[i]);
      const double e_dirty = std::abs(res_dirty.params[i] - truth[i]);
      CHECK(e_dirty <= 2.0 * e_clean + 2e-4 * std::max(1.0, std::abs(truth[i])));
    }
  }
}

TEST_CASE("plicp variants") {
  SECTION("recovers truth with wall scans and exact normals") {
    // Three walls sampled at different parameters in every scan, over four
    // pairs with distinct motions: point-to-point residuals are nonzero at
    // the truth, but the point-to-line distances vanish, and the pair
    // diversity pins the one-parameter family a single pair leaves free.
    const DiffDriveParams r{0.035, 0.0355, 0.238};
    const Pose2D l_true(0.02, 0.046, 3.13);

    const std::vector<Eigen::Vector2d> wheel_angles{
        {1.2, 1.5}, {0.9, 1.4}, {1.6, 1.1}, {1.3, 1.7}};
    std::vector<Pose2D> robot_poses{Pose2D()};
    std::vector<ScanPair> pairs;
    for (int e = 0; e < 4; ++e) {
      ScanPair sp;
      sp.j = e;
      sp.k = e + 1;
      sp.dt = 0.7;
      sp.angles = wheel_angles[e];
      WheelRates wr;
      wr.omega = sp.angles / sp.dt;
      robot_poses.push_back(oplus(robot_poses.back(), robot_relative_pose(DriveParams(r), wr,
                                                                          sp.dt)));
      pairs.push_back(sp);
    }

    std::vector<Scan> scans;
    for (size_t t = 0; t < robot_poses.size(); ++t) {
      Scan s;
      s.timestamp = 0.7 * t;
      const Pose2D inv = ominus(oplus(robot_poses[t], l_true));
      const double off = 0.017 * static_cast<double>(t + 1);  // per-scan sampling shift
      for (int i = 0; i < 60; ++i) {
        const double u = -2.9 + 0.1 * i;
        s.points.push_back(inv.transform(Vec2(u + off, 3.0)));             // wall y = 3
        s.points.push_back(inv.transform(Vec2(4.0, u + off)));             // wall x = 4
        s.points.push_back(inv.transform(Vec2(u + off, -u - off - 2.0)));  // diagonal wall
      }
      scans.push_back(std::move(s));
    }

    const auto corr = freeze_correspondences(scans, pairs, r, l_true, true);
    const Pose2D l_est = plicp_extrinsic_closed_form(corr, r);
    CHECK(approx_equal(l_est, l_true, 1e-6));
  }

  SECTION("degenerate corridor normals are rejected") {
    const DiffDriveParams r{0.035, 0.0355, 0.238};
    const Pose2D l_true(0.02, 0.046, 1.0);
    ScanPair sp;
    sp.j = 0;
    sp.k = 1;
    sp.dt = 0.7;
    sp.angles = Eigen::Vector2d(1.2, 1.25);  // small rotation
    WheelRates wr;
    wr.omega = sp.angles / sp.dt;
    const Pose2D q = robot_relative_pose(DriveParams(r), wr, sp.dt);
    const Pose2D inv_j = ominus(l_true), inv_k = ominus(oplus(q, l_true));
    Scan scan_j, scan_k;
    for (int i = 0; i < 80; ++i) {
      const double s = -4.0 + 0.1 * i;
      scan_j.points.push_back(inv_j.transform(Vec2(s, 3.0)));  // single wall
      scan_k.points.push_back(inv_k.transform(Vec2(s + 0.04, 3.0)));
    }
    const auto corr =
        freeze_correspondences({scan_j, scan_k}, {sp}, r, l_true, true);
    CHECK_THROWS_AS(plicp_extrinsic_closed_form(corr, r), ConditioningError);
  }

  SECTION("isotropic random normals agree with point-to-point on clean data") {
    const CamFixture f = make_fixture(113, 40);
    auto corr =
        freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic, true);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ang(0.0, 2.0 * kPi);
    for (auto& fp : corr)
      for (auto& n : fp.normals) {
        const double a = ang(rng);
        n = Vec2(std::cos(a), std::sin(a));
      }
    const Pose2D lp = plicp_extrinsic_closed_form(corr, truth_params(f));
    const Pose2D le = extrinsic_closed_form(corr, truth_params(f));
    CHECK(approx_equal(lp, le, 1e-7));

    CamConfig cfg;
    const IntrinsicSearchResult a =
        plicp_intrinsic_search(corr, f.cfg.truth.extrinsic, truth_params(f), cfg);
    const IntrinsicSearchResult b =
        intrinsic_search(corr, f.cfg.truth.extrinsic, truth_params(f), cfg);
    CHECK(std::abs(a.params.axle - b.params.axle) < 1e-7);
  }

  SECTION("point-to-line intrinsic search recovers truth on synthetic scans") {
    const CamFixture f = make_fixture(114, 50);
    const auto corr =
        freeze_correspondences(f.scans, f.pairs, truth_params(f), f.cfg.truth.extrinsic, true);
    DiffDriveParams init = truth_params(f);
    init.r_left *= 1.03;
    init.r_right *= 0.97;
    CamConfig cfg;
    IntrinsicSearchResult res{init, 0.0, false};
    double hw = cfg.grid_half_width;
    for (int sweep = 0; sweep < 5; ++sweep) {
      res = plicp_intrinsic_search(corr, f.cfg.truth.extrinsic, res.params, cfg, hw);
      hw = std::max(hw * 0.05, 1e-7);
    }
    CHECK(std::abs(res.params.r_left - 0.035) / 0.035 < 1e-4);
    CHECK(std::abs(res.params.axle - 0.238) / 0.238 < 1e-4);
  }
}

TEST_CASE("simulator profiles satisfy the observability gate") {
  const CamFixture f = make_fixture(115, 40);
  std::vector<Pose2D> motions;
  for (const auto& sp : f.pairs) motions.push_back(pair_motion(truth_params(f), sp));
  CHECK(check_observability(motions).ok);
}
