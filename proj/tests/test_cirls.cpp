/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sim_helpers.hpp"
#include "wheelcal/cirls.hpp"
#include "wheelcal/simulate.hpp"

using namespace wheelcal;
using sim_helpers::perturb_model;
using sim_helpers::to_calib_obs;

namespace {

// Independent scalar evaluation of the conjugated sensor displacement,
// written out long-hand from the roto-translation tables.
void scalar_sensor_displacement(double lx, double ly, double lt, double qx, double qy, double qt,
                                double* sx, double* sy, double* st) {
  const double ix = -lx * std::cos(lt) - ly * std::sin(lt);
  const double iy = lx * std::sin(lt) - ly * std::cos(lt);
  const double it = -lt;
  const double mx = ix + qx * std::cos(it) - qy * std::sin(it);
  const double my = iy + qx * std::sin(it) + qy * std::cos(it);
  const double mt = it + qt;
  *sx = mx + lx * std::cos(mt) - ly * std::sin(mt);
  *sy = my + lx * std::sin(mt) + ly * std::cos(mt);
  *st = mt + lt;
}

SimConfig k1_config(std::uint64_t seed, int pairs) {
  SimConfig cfg;
  cfg.truth = SensorModel{DriveParams(DiffDriveParams{0.035, 0.035, 0.238}),
                          Pose2D(0.020, 0.046, 3.13)};
  cfg.sample_period = 0.7;
  cfg.duration = 0.7 * pairs;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("huber loss values") {
  CHECK(huber_loss(0.0, 1.0) == 0.0);
  CHECK(huber_loss(1.0, 1.0) == Catch::Approx(0.5));
  CHECK(huber_loss(-1.0, 1.0) == Catch::Approx(0.5));
  CHECK(huber_loss(3.0, 1.0) == Catch::Approx(2.5));
}

TEST_CASE("huber weight values") {
  CHECK(huber_weight(0.5, 1.0, 1.0) == Catch::Approx(1.0));
  CHECK(huber_weight(2.0, 1.0, 1.0) == Catch::Approx(0.5));
  CHECK(huber_weight(-4.0, 2.0, 1.0) == Catch::Approx(0.0625));
}

TEST_CASE("weight trimming") {
  SECTION("uniform weights untouched") {
    const TrimOutcome t = trim_weights({1, 1, 1, 1});
    CHECK(t.gamma == Catch::Approx(0.0));
    CHECK(t.n_trimmed == 0);
  }
  SECTION("small weights zeroed") {
    const TrimOutcome t = trim_weights({1.0, 1.0, 0.1, 0.1});
    CHECK(t.gamma == Catch::Approx(0.45));
    CHECK(t.weights == std::vector<double>{1.0, 1.0, 0.0, 0.0});
    CHECK(t.n_trimmed == 2);
  }
  SECTION("degenerate all-equal case skips trimming") {
    const TrimOutcome t = trim_weights({0.5, 0.5, 0.5, 0.5});
    CHECK(t.degenerate);
    CHECK(t.weights == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  }
}

TEST_CASE("residuals") {
  SimConfig cfg = k1_config(3, 40);
  const Simulation sim = synth_displacements(cfg);
  const auto obs = to_calib_obs(sim, cfg);

  SECTION("zero at the truth on noiseless data") {
    for (const auto& b : residuals(cfg.truth, obs)) CHECK(b.v.cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("l_theta perturbation leaves theta residual zero on pure translation") {
    SimConfig straight = cfg;
    straight.profile = ProfileMode::kPureTranslation;
    straight.seed = 9;
    const Simulation s2 = synth_displacements(straight);
    const auto obs2 = to_calib_obs(s2, straight);
    SensorModel m = straight.truth;
    m.extrinsic = Pose2D(m.extrinsic.x, m.extrinsic.y, m.extrinsic.theta + 0.1);
    const auto blocks = residuals(m, obs2);
    for (const auto& b : blocks) {
      CHECK(std::abs(b.v[2]) < 1e-12);
      CHECK(b.v.head<2>().norm() > 1e-4);
    }
  }

  SECTION("matches the long-hand scalar implementation") {
    const SensorModel& m = cfg.truth;
    const auto blocks = residuals(m, obs);
    for (size_t e = 0; e < 3; ++e) {
      const Pose2D q = robot_relative_pose(m.drive, obs[e].rates, obs[e].dt);
      double sx, sy, st;
      scalar_sensor_displacement(m.extrinsic.x, m.extrinsic.y, m.extrinsic.theta, q.x, q.y,
                                 q.theta, &sx, &sy, &st);
      CHECK(blocks[e].v[0] == Catch::Approx(obs[e].obs.s_hat.x - sx).margin(1e-12));
      CHECK(blocks[e].v[1] == Catch::Approx(obs[e].obs.s_hat.y - sy).margin(1e-12));
      CHECK(blocks[e].v[2] ==
            Catch::Approx(wrap_angle(obs[e].obs.s_hat.theta - st)).margin(1e-12));
    }
  }
}

TEST_CASE("solve_wnls") {
  SECTION("linear toy converges in one step") {
    const Eigen::Vector3d a(1.0, -2.0, 0.5);
    CirlsConfig cfg;
    cfg.solver = InnerSolver::kGaussNewton;
    const auto resid = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd { return p - a; };
    const auto jac = [&](const Eigen::VectorXd&) -> Eigen::MatrixXd {
      return Eigen::Matrix3d::Identity();
    };
    const WnlsResult r =
        solve_wnls(resid, jac, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), cfg);
    CHECK((r.p - a).norm() < 1e-14);
    CHECK(r.iterations <= 1);
  }

  SECTION("noiseless calibration from a 10 percent perturbation") {
    SimConfig cfg = k1_config(7, 120);
    const Simulation sim = synth_displacements(cfg);
    const auto obs = to_calib_obs(sim, cfg);
    for (const auto solver : {InnerSolver::kGaussNewton, InnerSolver::kLevenbergMarquardt}) {
      CirlsConfig c;
      c.solver = solver;
      c.robust = false;
      const CalibrationResult res =
          cirls_calibrate(obs, perturb_model(cfg.truth, 0.10, 11), c);
      const Eigen::VectorXd truth = pack_params(cfg.truth);
      for (int i = 0; i < truth.size(); ++i)
        CHECK(std::abs(res.params[i] - truth[i]) < 1e-8 * std::max(1.0, std::abs(truth[i])));
    }
  }

  SECTION("pure rotation is ill-conditioned along the intrinsics") {
    SimConfig cfg = k1_config(13, 60);
    cfg.profile = ProfileMode::kPureRotation;
    const Simulation sim = synth_displacements(cfg);
    const auto obs = to_calib_obs(sim, cfg);
    try {
      cirls_calibrate(obs, perturb_model(cfg.truth, 0.05, 3), {});
      FAIL("expected ConditioningError");
    } catch (const ConditioningError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("r_L") != std::string::npos);
      CHECK(msg.find("r_R") != std::string::npos);
    }
  }
}

TEST_CASE("leverage adjustment") {
  Eigen::VectorXd r(2);
  r << 1.0, 1.0;
  SECTION("doubles a residual at leverage 0.75") {
    // Single-column Jacobian engineered so h_00 = 0.75.
    Eigen::MatrixXd J(2, 1);
    J << std::sqrt(3.0), 1.0;
    const Eigen::VectorXd adj = leverage_adjust(r, J, Eigen::Vector2d::Ones());
    CHECK(adj[0] == Catch::Approx(2.0));
  }
  SECTION("zero leverage leaves residuals unchanged") {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, 1);
    J(0, 0) = 1e-9;
    const Eigen::VectorXd adj = leverage_adjust(r, J, Eigen::Vector2d::Ones());
    CHECK(adj[1] == Catch::Approx(1.0));
  }
}

TEST_CASE("cirls on noisy diff-drive data") {
  SimConfig cfg = k1_config(21, 500);
  cfg.noise_sigma = Eigen::Vector3d(0.002, 0.002, 0.3 * kPi / 180.0);
  const Simulation sim = synth_displacements(cfg);
  const auto obs = to_calib_obs(sim, cfg);
  const CalibrationResult res = cirls_calibrate(obs, perturb_model(cfg.truth, 0.05, 5), {});
  REQUIRE(res.converged);

  const auto& dd = std::get<DiffDriveParams>(res.model.drive);
  const auto& td = std::get<DiffDriveParams>(cfg.truth.drive);
  CHECK(std::abs(dd.r_left - td.r_left) / td.r_left < 0.005);
  CHECK(std::abs(dd.r_right - td.r_right) / td.r_right < 0.005);
  CHECK(std::abs(dd.axle - td.axle) / td.axle < 0.01);
  CHECK(std::abs(res.model.extrinsic.x - cfg.truth.extrinsic.x) < 0.003);
  CHECK(std::abs(res.model.extrinsic.y - cfg.truth.extrinsic.y) < 0.003);
  CHECK(std::abs(wrap_angle(res.model.extrinsic.theta - cfg.truth.extrinsic.theta)) <
        0.3 * kPi / 180.0);

  SECTION("no trimming on outlier-free Gaussian data") {
    for (const auto& entry : res.log) CHECK(entry.trimmed == 0);
  }

  SECTION("IRLS fixed point satisfies the weighted normal equations") {
    Eigen::VectorXd w(3 * obs.size());
    for (size_t e = 0; e < obs.size(); ++e)
      w.segment<3>(3 * e) =
          res.final_weights[e].cwiseQuotient(obs[e].obs.sigma.array().square().matrix());
    const auto blocks = residuals(res.model, obs);
    Eigen::VectorXd r(3 * obs.size());
    for (size_t e = 0; e < obs.size(); ++e) r.segment<3>(3 * e) = blocks[e].v;
    Eigen::MatrixXd J(3 * obs.size(), 6);
    for (size_t e = 0; e < obs.size(); ++e)
      J.middleRows<3>(3 * e) = -param_jacobian(res.model, obs[e].rates, obs[e].dt);
    const Eigen::VectorXd g = J.transpose() * w.asDiagonal() * r;
    const Eigen::VectorXd scale =
        J.cwiseAbs().transpose() * w.asDiagonal() * r.cwiseAbs();
    for (int i = 0; i < g.size(); ++i)
      CHECK(std::abs(g[i]) <= 1e-8 * std::max(1.0, scale[i]));
  }
}

TEST_CASE("cirls handles gross outliers") {
  SimConfig cfg = k1_config(31, 300);
  cfg.noise_sigma = Eigen::Vector3d(0.002, 0.002, 0.3 * kPi / 180.0);
  const Simulation clean_sim = synth_displacements(cfg);
  SimConfig cfg_out = cfg;
  cfg_out.outlier_fraction = 0.2;
  const Simulation dirty_sim = synth_displacements(cfg_out);

  const SensorModel init = perturb_model(cfg.truth, 0.05, 17);
  const Eigen::VectorXd truth = pack_params(cfg.truth);

  const CalibrationResult clean = cirls_calibrate(to_calib_obs(clean_sim, cfg), init, {});
  const CalibrationResult dirty = cirls_calibrate(to_calib_obs(dirty_sim, cfg_out), init, {});

  // Within twice the clean error, up to one standard error of statistical
  // slack (the clean error can be arbitrarily lucky on a single seed).
  for (int i = 0; i < truth.size(); ++i) {
    const double e_clean = std::abs(clean.params[i] - truth[i]);
    const double e_dirty = std::abs(dirty.params[i] - truth[i]);
    const double se = std::sqrt(std::max(dirty.covariance(i, i), 0.0));
    CHECK(e_dirty <= 2.0 * e_clean + se);
  }

  SECTION("outliers end up trimmed or heavily downweighted") {
    int suppressed = 0;
    for (int idx : dirty_sim.outlier_indices) {
      if (dirty.final_weights[idx].minCoeff() < 0.2) ++suppressed;
    }
    CHECK(suppressed >= static_cast<int>(dirty_sim.outlier_indices.size() * 9 / 10));
  }
}

TEST_CASE("cirls on a Mecanum drive") {
  SimConfig cfg;
  cfg.truth = SensorModel{DriveParams(MecanumParams{0.030, 0.0825, 0.1625}),
                          Pose2D(-0.0326, -0.0253, 2.14)};
  cfg.sample_period = 0.6;
  cfg.duration = 0.6 * 400;
  cfg.seed = 77;
  cfg.noise_sigma = Eigen::Vector3d(0.002, 0.002, 0.3 * kPi / 180.0);
  const Simulation sim = synth_displacements(cfg);
  const auto obs = to_calib_obs(sim, cfg);
  const CalibrationResult res = cirls_calibrate(obs, perturb_model(cfg.truth, 0.05, 23), {});

  const auto& mp = std::get<MecanumParams>(res.model.drive);
  const auto& tp = std::get<MecanumParams>(cfg.truth.drive);
  CHECK(std::abs(mp.radius - tp.radius) / tp.radius < 0.01);
  CHECK(std::abs(mp.axle_sum() - tp.axle_sum()) / tp.axle_sum() < 0.01);
  CHECK(std::abs(res.model.extrinsic.x - cfg.truth.extrinsic.x) < 0.005);
  CHECK(std::abs(wrap_angle(res.model.extrinsic.theta - cfg.truth.extrinsic.theta)) < 0.006);
}

TEST_CASE("cirls_cf agrees with the generic solver") {
  SECTION("noiseless data recovers the truth") {
    SimConfig cfg = k1_config(41, 150);
    const Simulation sim = synth_displacements(cfg);
    const auto obs = to_calib_obs(sim, cfg);
    const CalibrationResult cf = cirls_cf_calibrate(obs, perturb_model(cfg.truth, 0.08, 2), {});
    CHECK(cf.first_iteration_uniform);
    const Eigen::VectorXd truth = pack_params(cfg.truth);
    for (int i = 0; i < 6; ++i)
      CHECK(std::abs(cf.params[i] - truth[i]) < 1e-8 * std::max(1.0, std::abs(truth[i])));

    const CalibrationResult gen =
        cirls_calibrate(obs, perturb_model(cfg.truth, 0.08, 2), {});
    for (int i = 0; i < 6; ++i)
      CHECK(std::abs(cf.params[i] - gen.params[i]) < 1e-10 * std::max(1.0, std::abs(truth[i])));
  }

  SECTION("noisy estimates are statistically equivalent") {
    // The two are different consistent estimators; on noisy data they agree
    // to a fraction of the reported standard errors, not bit-for-bit.
    SimConfig cfg = k1_config(43, 600);
    cfg.noise_sigma = Eigen::Vector3d(0.003, 0.003, 0.1 * kPi / 180.0);
    const Simulation sim = synth_displacements(cfg);
    const auto obs = to_calib_obs(sim, cfg);
    const SensorModel init = perturb_model(cfg.truth, 0.05, 29);
    const CalibrationResult cf = cirls_cf_calibrate(obs, init, {});
    const CalibrationResult gen = cirls_calibrate(obs, init, {});
    for (int i = 0; i < 5; ++i) {
      const double se = std::sqrt(std::max(gen.covariance(i, i), 0.0));
      CHECK(std::abs(cf.params[i] - gen.params[i]) <= 3.0 * se);
    }
    CHECK(std::abs(wrap_angle(cf.params[5] - gen.params[5])) <=
          3.0 * std::sqrt(std::max(gen.covariance(5, 5), 0.0)));
  }
}

TEST_CASE("estimate_covariance") {
  SECTION("zero residuals give a zero matrix") {
    Eigen::MatrixXd J(6, 2);
    J << 1, 0, 0, 1, 1, 1, 2, 0, 0, 2, 1, -1;
    const Eigen::VectorXd r = Eigen::VectorXd::Zero(6);
    double mse = -1;
    const Eigen::MatrixXd cov = estimate_covariance(J, r, Eigen::VectorXd::Ones(6), &mse);
    CHECK(mse == 0.0);
    CHECK(cov.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("matches the textbook one-parameter variance") {
    // y = p x + e; J column is x; Sigma_p = mse / sum(x^2).
    Eigen::MatrixXd J(4, 1);
    J << 1, 2, 3, 4;
    Eigen::VectorXd r(4);
    r << 0.1, -0.1, 0.1, -0.1;
    double mse = 0;
    const Eigen::MatrixXd cov = estimate_covariance(J, r, Eigen::VectorXd::Ones(4), &mse);
    CHECK(mse == Catch::Approx(0.01));
    CHECK(cov(0, 0) == Catch::Approx(0.01 / 30.0));
  }
  SECTION("rank deficiency raises an observability error") {
    Eigen::MatrixXd J(4, 2);
    J << 1, 1, 2, 2, 3, 3, 4, 4;
    CHECK_THROWS_AS(
        estimate_covariance(J, Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(4), nullptr),
        ObservabilityError);
  }
}

TEST_CASE("unit equivariance between meters and millimeters") {
  SimConfig cfg = k1_config(51, 200);
  cfg.noise_sigma = Eigen::Vector3d(0.002, 0.002, 0.004);
  const Simulation sim = synth_displacements(cfg);
  const auto obs_m = to_calib_obs(sim, cfg);

  std::vector<CalibObservation> obs_mm = obs_m;
  for (auto& o : obs_mm) {
    o.obs.s_hat = Pose2D(o.obs.s_hat.x * 1000.0, o.obs.s_hat.y * 1000.0, o.obs.s_hat.theta);
    o.obs.sigma[0] *= 1000.0;
    o.obs.sigma[1] *= 1000.0;
  }
  const SensorModel init_m = perturb_model(cfg.truth, 0.05, 37);
  SensorModel init_mm = init_m;
  {
    const auto& dd = std::get<DiffDriveParams>(init_m.drive);
    init_mm.drive = DiffDriveParams{dd.r_left * 1000, dd.r_right * 1000, dd.axle * 1000};
    init_mm.extrinsic =
        Pose2D(init_m.extrinsic.x * 1000, init_m.extrinsic.y * 1000, init_m.extrinsic.theta);
  }
  const CalibrationResult rm = cirls_calibrate(obs_m, init_m, {});
  const CalibrationResult rmm = cirls_calibrate(obs_mm, init_mm, {});
  for (int i = 0; i < 5; ++i)
    CHECK(rmm.params[i] == Catch::Approx(rm.params[i] * 1000.0).epsilon(1e-6));
  CHECK(rmm.params[5] == Catch::Approx(rm.params[5]).margin(1e-8));
}
