/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"
#include "wheelcal/kinematics.hpp"
#include "wheelcal/quadratic.hpp"
#include "wheelcal/scanmatch.hpp"

namespace wheelcal {

/// Huber loss: u^2/2 inside |u| <= c, linear outside.
inline double huber_loss(double u, double c) {
  const double a = std::abs(u);
  return a <= c ? 0.5 * u * u : c * (a - 0.5 * c);
}

/// IRLS weight for a scaled residual u: 1/sigma^2 inside the knee,
/// c / (|u| sigma^2) outside.
inline double huber_weight(double u, double sigma, double c) {
  const double s2 = sigma * sigma;
  return std::abs(u) <= c ? 1.0 / s2 : c / (std::abs(u) * s2);
}

/// Weight trimming: zero every normalized weight <= gamma where
/// gamma = 1 - mean(weights). Expects weights normalized so untrimmed
/// inliers sit at 1. If trimming would zero half the residuals or more the
/// iteration is flagged degenerate and left untouched.
struct TrimOutcome {
  std::vector<double> weights;
  double gamma = 0.0;
  int n_trimmed = 0;
  bool degenerate = false;
};

inline TrimOutcome trim_weights(const std::vector<double>& w) {
  TrimOutcome out;
  out.weights = w;
  if (w.empty()) return out;
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  out.gamma = 1.0 - mean;
  int would_trim = 0;
  for (double v : w)
    if (v <= out.gamma) ++would_trim;
  if (2 * would_trim > static_cast<int>(w.size())) {
    out.degenerate = true;
    return out;
  }
  for (auto& v : out.weights) {
    if (v <= out.gamma) {
      v = 0.0;
      ++out.n_trimmed;
    }
  }
  return out;
}

/// One displacement observation joined with the wheel data that explains it.
struct CalibObservation {
  DisplacementObs obs;
  WheelRates rates;
  double dt = 0.0;
};

/// Residual bookkeeping for one observation.
struct ResidualBlock {
  int j = 0, k = 0;
  Eigen::Vector3d v = Eigen::Vector3d::Zero();       // s_hat - s(p), theta wrapped
  Eigen::Vector3d scaled = Eigen::Vector3d::Zero();  // v / sigma
  Eigen::Vector3d weight = Eigen::Vector3d::Ones();  // raw (1/sigma^2 scale)
  Eigen::Matrix<bool, 3, 1> trimmed{false, false, false};
};

/// v_jk = s_hat - s_jk(p), theta wrapped to (-pi, pi].
inline std::vector<ResidualBlock> residuals(const SensorModel& model,
                                            const std::vector<CalibObservation>& obs) {
  std::vector<ResidualBlock> out(obs.size());
  for (size_t e = 0; e < obs.size(); ++e) {
    if (obs[e].rates.omega.size() != wheel_count(model.drive))
      throw std::invalid_argument("residuals: wheel count mismatch at observation " +
                                  std::to_string(e));
    const Pose2D s = model.predict(obs[e].rates, obs[e].dt);
    ResidualBlock& b = out[e];
    b.j = obs[e].obs.j;
    b.k = obs[e].obs.k;
    b.v[0] = obs[e].obs.s_hat.x - s.x;
    b.v[1] = obs[e].obs.s_hat.y - s.y;
    b.v[2] = wrap_angle(obs[e].obs.s_hat.theta - s.theta);
    b.scaled = b.v.cwiseQuotient(obs[e].obs.sigma);
  }
  return out;
}

enum class InnerSolver { kGaussNewton, kLevenbergMarquardt };

struct CirlsConfig {
  double huber_c = 1.345;
  InnerSolver solver = InnerSolver::kLevenbergMarquardt;
  double lm_damping_init = 1e-3;
  double lm_up = 10.0;
  double lm_down = 0.3;
  double outer_tol = 1e-8;
  int max_outer = 50;
  int wnls_max_iters = 100;
  bool leverage_adjustment = true;
  bool robust = true;         // false: single plain weighted NLS solve
  bool closed_form = false;   // diff drive only; see cirls_cf_calibrate
  bool analytic_jacobian = false;
};

struct IterationLogEntry {
  int outer = 0;
  double objective = 0.0;  // Huber objective h_c at the iterate
  double step_norm = 0.0;
  int trimmed = 0;
};

struct CalibrationResult {
  SensorModel model;
  Eigen::VectorXd params;
  std::vector<std::string> names;
  Eigen::MatrixXd covariance;  // 0x0 when unavailable
  Eigen::VectorXd sigma3;
  double mse = 0.0;
  std::vector<Eigen::Vector3d> final_weights;  // normalized, per observation
  std::vector<IterationLogEntry> log;
  bool converged = true;
  bool first_iteration_uniform = false;
};

namespace detail {

// Rank check of the (scale-normalized) normal matrix; names the parameters
// spanning the null direction on failure.
inline void check_normal_rank(const Eigen::MatrixXd& H, const Eigen::VectorXd& p,
                              const std::vector<std::string>& names) {
  const int n = static_cast<int>(p.size());
  Eigen::VectorXd scale(n);
  for (int i = 0; i < n; ++i) scale[i] = std::max(std::abs(p[i]), 1e-2);
  const Eigen::MatrixXd Hs = scale.asDiagonal() * H * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs);
  const Eigen::VectorXd ev = es.eigenvalues();
  if (ev[n - 1] <= 0.0 || ev[0] < 1e-10 * ev[n - 1]) {
    const Eigen::VectorXd null_dir = es.eigenvectors().col(0).cwiseAbs();
    const double top = null_dir.maxCoeff();
    std::string which;
    for (int i = 0; i < n; ++i) {
      if (null_dir[i] > 0.3 * top) {
        if (!which.empty()) which += ", ";
        which += names[i];
      }
    }
    throw ConditioningError("solve_wnls: normal equations ill-conditioned; unobservable along (" +
                            which + ")");
  }
}

}  // namespace detail

struct WnlsResult {
  Eigen::VectorXd p;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Weighted nonlinear least squares with fixed weights: Gauss-Newton with
/// step halving or Levenberg-Marquardt with multiplicative damping. The
/// weighted objective is non-increasing across accepted steps.
inline WnlsResult solve_wnls(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& resid,
                             const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jac,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& p0,
                             const CirlsConfig& cfg,
                             const std::vector<std::string>& names = {}) {
  WnlsResult res;
  res.p = p0;
  Eigen::VectorXd r = resid(res.p);
  if (r.size() != weights.size())
    throw std::invalid_argument("solve_wnls: weight/residual size mismatch");
  double f = r.dot(weights.asDiagonal() * r);
  double mu = cfg.lm_damping_init;

  std::vector<std::string> nm = names;
  if (nm.empty())
    for (int i = 0; i < p0.size(); ++i) nm.push_back("p" + std::to_string(i));

  for (int it = 0; it < cfg.wnls_max_iters; ++it) {
    const Eigen::MatrixXd J = jac(res.p);
    const Eigen::MatrixXd JtW = J.transpose() * weights.asDiagonal();
    const Eigen::MatrixXd H = JtW * J;
    const Eigen::VectorXd g = JtW * r;
    if (it == 0) detail::check_normal_rank(H, res.p, nm);
    if (g.cwiseAbs().maxCoeff() < 1e-10) {
      res.converged = true;
      break;
    }

    bool accepted = false;
    if (cfg.solver == InnerSolver::kGaussNewton) {
      const Eigen::VectorXd step = H.ldlt().solve(-g);
      double alpha = 1.0;
      for (int half = 0; half < 30; ++half) {
        const Eigen::VectorXd p_try = res.p + alpha * step;
        const Eigen::VectorXd r_try = resid(p_try);
        const double f_try = r_try.dot(weights.asDiagonal() * r_try);
        if (f_try <= f) {
          res.p = p_try;
          r = r_try;
          accepted = std::abs(f - f_try) > 1e-12 * std::max(1.0, f);
          f = f_try;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        res.converged = true;
        break;
      }
    } else {
      const Eigen::VectorXd diag = H.diagonal().cwiseMax(1e-300);
      for (int tries = 0; tries < 60; ++tries) {
        Eigen::MatrixXd Hd = H;
        Hd.diagonal() += mu * diag;
        const Eigen::VectorXd step = Hd.ldlt().solve(-g);
        const Eigen::VectorXd p_try = res.p + step;
        const Eigen::VectorXd r_try = resid(p_try);
        const double f_try = r_try.dot(weights.asDiagonal() * r_try);
        if (f_try <= f) {
          res.p = p_try;
          r = r_try;
          accepted = std::abs(f - f_try) > 1e-12 * std::max(1.0, f);
          f = f_try;
          mu = std::max(mu * cfg.lm_down, 1e-14);
          break;
        }
        mu *= cfg.lm_up;
      }
      if (!accepted) {
        res.converged = true;
        break;
      }
    }
    res.iterations = it + 1;
  }
  res.objective = f;
  if (res.iterations >= cfg.wnls_max_iters) res.converged = true;  // budget exhausted
  return res;
}

/// Residuals inflated by leverage: v / sqrt(max(eps, 1 - h_ii)) with h_ii
/// the hat-matrix diagonal of the weighted Jacobian.
inline Eigen::VectorXd leverage_adjust(const Eigen::VectorXd& resid, const Eigen::MatrixXd& J,
                                       const Eigen::VectorXd& weights) {
  const Eigen::MatrixXd Jw = weights.cwiseSqrt().asDiagonal() * J;
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(Jw).householderQ() *
                            Eigen::MatrixXd::Identity(Jw.rows(), Jw.cols());
  Eigen::VectorXd out = resid;
  for (int i = 0; i < resid.size(); ++i) {
    const double h = Q.row(i).squaredNorm();
    out[i] = resid[i] / std::sqrt(std::max(1e-6, 1.0 - h));
  }
  return out;
}

/// Parameter covariance mse * (J'J)^-1 with rows pre-scaled by sqrt(weight)
/// and mse the mean squared weighted residual at the solution.
inline Eigen::MatrixXd estimate_covariance(const Eigen::MatrixXd& J,
                                           const Eigen::VectorXd& resid,
                                           const Eigen::VectorXd& weights, double* mse_out) {
  const Eigen::MatrixXd Jw = weights.cwiseSqrt().asDiagonal() * J;
  const Eigen::MatrixXd H = Jw.transpose() * Jw;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.eigenvalues()[0] < 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1e-300))
    throw ObservabilityError("estimate_covariance: rank-deficient Jacobian");
  double mse = 0.0;
  for (int i = 0; i < resid.size(); ++i) mse += weights[i] * resid[i] * resid[i];
  mse /= static_cast<double>(resid.size());
  if (mse_out) *mse_out = mse;
  return mse * H.inverse();
}

namespace detail {

struct Problem {
  const std::vector<CalibObservation>* obs;
  SensorModel base;
  bool analytic;

  Eigen::VectorXd resid(const Eigen::VectorXd& p) const {
    const SensorModel m = unpack_params(base, p);
    const auto blocks = residuals(m, *obs);
    Eigen::VectorXd r(3 * blocks.size());
    for (size_t e = 0; e < blocks.size(); ++e) r.segment<3>(3 * e) = blocks[e].v;
    return r;
  }

  Eigen::MatrixXd jac(const Eigen::VectorXd& p) const {
    const SensorModel m = unpack_params(base, p);
    Eigen::MatrixXd J(3 * obs->size(), p.size());
    const bool use_analytic = analytic && std::holds_alternative<DiffDriveParams>(m.drive);
    for (size_t e = 0; e < obs->size(); ++e) {
      const auto& o = (*obs)[e];
      const Eigen::MatrixXd Je = use_analytic ? diffdrive_param_jacobian(m, o.rates, o.dt)
                                              : param_jacobian(m, o.rates, o.dt);
      J.middleRows<3>(3 * e) = -Je;  // residual is s_hat - s(p)
    }
    return J;
  }
};

// Huber objective h_c over scaled residuals, the quantity tracked in the log.
inline double huber_objective(const std::vector<ResidualBlock>& blocks, double c) {
  double h = 0.0;
  for (const auto& b : blocks)
    for (int i = 0; i < 3; ++i) h += huber_loss(b.scaled[i], c);
  return h;
}

}  // namespace detail

/// CIRLS: iteratively reweighted robust calibration for any drive with a
/// known model. Weights start uniform, then follow the Huber rule on
/// (optionally leverage-adjusted) scaled residuals with trimming.
inline CalibrationResult cirls_calibrate(const std::vector<CalibObservation>& obs,
                                         const SensorModel& init, const CirlsConfig& cfg = {}) {
  if (obs.empty()) throw std::invalid_argument("cirls_calibrate: no observations");
  detail::Problem prob{&obs, init, cfg.analytic_jacobian};
  const int n = static_cast<int>(obs.size());
  const int rows = 3 * n;

  Eigen::VectorXd sigma(rows);
  for (int e = 0; e < n; ++e) sigma.segment<3>(3 * e) = obs[e].obs.sigma;

  CalibrationResult result;
  result.names = param_names(init.drive);
  Eigen::VectorXd p = pack_params(init);
  Eigen::VectorXd w_norm = Eigen::VectorXd::Ones(rows);  // normalized weights
  Eigen::VectorXd w = Eigen::VectorXd::Ones(rows);       // raw weights fed to the solver
  result.first_iteration_uniform = true;

  const auto resid_fn = [&](const Eigen::VectorXd& q) { return prob.resid(q); };
  const auto jac_fn = [&](const Eigen::VectorXd& q) { return prob.jac(q); };

  int outer_limit = cfg.robust ? cfg.max_outer : 1;
  if (!cfg.robust) w = sigma.array().square().inverse();

  bool converged = false;
  for (int outer = 0; outer < outer_limit; ++outer) {
    const WnlsResult inner = solve_wnls(resid_fn, jac_fn, w, p, cfg, result.names);
    const double step = (inner.p - p).norm();
    p = inner.p;

    const SensorModel m = unpack_params(init, p);
    const auto blocks = residuals(m, obs);

    int n_trimmed = 0;
    if (cfg.robust) {
      Eigen::VectorXd v(rows);
      for (int e = 0; e < n; ++e) v.segment<3>(3 * e) = blocks[e].v;
      if (cfg.leverage_adjustment) v = leverage_adjust(v, prob.jac(p), w);
      std::vector<double> wn(rows);
      for (int i = 0; i < rows; ++i) {
        const double u = v[i] / sigma[i];
        wn[i] = huber_weight(u, sigma[i], cfg.huber_c) * sigma[i] * sigma[i];
      }
      const TrimOutcome trim = trim_weights(wn);
      n_trimmed = trim.n_trimmed;
      for (int i = 0; i < rows; ++i) {
        w_norm[i] = trim.weights[i];
        w[i] = trim.weights[i] / (sigma[i] * sigma[i]);
      }
    }

    result.log.push_back({outer, detail::huber_objective(blocks, cfg.huber_c), step, n_trimmed});
    if (step <= cfg.outer_tol) {
      converged = true;
      break;
    }
  }
  result.converged = converged || !cfg.robust;

  // Final solve with the final weights so the reported estimate satisfies
  // the weighted normal equations for the reported weights.
  if (cfg.robust) p = solve_wnls(resid_fn, jac_fn, w, p, cfg, result.names).p;

  // Sign ambiguity of the diff drive: (r, l) and (-r, -l_xy, l_theta + pi)
  // produce identical displacements; report the positive representative.
  if (std::holds_alternative<DiffDriveParams>(init.drive) && p[2] < 0.0) {
    p.head<5>() = -p.head<5>();
    p[5] = wrap_angle(p[5] + kPi);
  }

  const SensorModel m = unpack_params(init, p);
  result.model = m;
  result.params = pack_params(m);
  result.final_weights.resize(n);
  for (int e = 0; e < n; ++e) result.final_weights[e] = w_norm.segment<3>(3 * e);

  const Eigen::VectorXd r = prob.resid(p);
  result.covariance = estimate_covariance(prob.jac(p), r, w, &result.mse);
  result.sigma3 = 3.0 * result.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return result;
}

/// CIRLS-CF: the diff-drive special case where each weighted NLS step is
/// solved in closed form. Stage one fits (J21, J22) by weighted linear least
/// squares on the theta residuals; stage two equalizes the x/y weights
/// (max rule), rotates the translation residual by R(l_theta) and minimizes
/// the resulting homogeneous quadratic in (b, l_x, l_y, cos l_theta,
/// sin l_theta) under the unit-norm constraint on the trailing pair.
inline CalibrationResult cirls_cf_calibrate(const std::vector<CalibObservation>& obs,
                                            const SensorModel& init,
                                            const CirlsConfig& cfg = {}) {
  if (!std::holds_alternative<DiffDriveParams>(init.drive))
    throw std::invalid_argument("cirls_cf_calibrate: diff drive only");
  if (obs.empty()) throw std::invalid_argument("cirls_cf_calibrate: no observations");
  const int n = static_cast<int>(obs.size());
  const int rows = 3 * n;

  Eigen::VectorXd sigma(rows);
  for (int e = 0; e < n; ++e) sigma.segment<3>(3 * e) = obs[e].obs.sigma;

  CalibrationResult result;
  result.names = param_names(init.drive);
  result.first_iteration_uniform = true;

  // Wheel angles over each interval.
  Eigen::VectorXd aL(n), aR(n);
  for (int e = 0; e < n; ++e) {
    aL[e] = obs[e].rates.omega[0] * obs[e].dt;
    aR[e] = obs[e].rates.omega[1] * obs[e].dt;
  }

  Eigen::VectorXd w_norm = Eigen::VectorXd::Ones(rows);
  Eigen::VectorXd w_raw = Eigen::VectorXd::Ones(rows);  // W = I on entry
  Eigen::VectorXd p = pack_params(init);
  bool converged = false;

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    // Stage 1: theta residuals are linear in (J21, J22).
    Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
    Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
    for (int e = 0; e < n; ++e) {
      const double wt = w_raw[3 * e + 2];
      const Eigen::Vector2d x(aL[e], aR[e]);
      A += wt * x * x.transpose();
      rhs += wt * obs[e].obs.s_hat.theta * x;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> esA(A);
    if (esA.eigenvalues()[0] < 1e-12 * std::max(esA.eigenvalues()[1], 1e-300))
      throw ConditioningError(
          "cirls_cf_calibrate: wheel angles unexciting, (J21, J22) unobservable");
    const Eigen::Vector2d j2 = A.ldlt().solve(rhs);
    const double rt_l = -j2[0], rt_r = j2[1];  // r_L/b, r_R/b

    // Stage 2: homogeneous quadratic in u = (b, l_x, l_y, cos lt, sin lt).
    Eigen::Matrix<double, 5, 5> M = Eigen::Matrix<double, 5, 5>::Zero();
    for (int e = 0; e < n; ++e) {
      const double wxy = std::max(w_raw[3 * e + 0], w_raw[3 * e + 1]);
      if (wxy <= 0.0) continue;
      const double qtheta = j2[0] * aL[e] + j2[1] * aR[e];
      const double vt = 0.5 * (rt_l * aL[e] + rt_r * aR[e]);  // v dt / b
      double S, C;
      if (std::abs(qtheta) < 1e-8) {
        S = 1.0 - qtheta * qtheta / 6.0;
        C = 0.5 * qtheta - qtheta * qtheta * qtheta / 24.0;
      } else {
        S = std::sin(qtheta) / qtheta;
        C = (1.0 - std::cos(qtheta)) / qtheta;
      }
      const Vec2 t_tilde(vt * S, vt * C);
      const Rot2 Rq(qtheta);
      const Mat2 Rp = Rq.matrix() - Mat2::Identity();
      const Pose2D& sh = obs[e].obs.s_hat;
      Eigen::Matrix<double, 2, 5> G;
      G(0, 0) = -t_tilde.x();
      G(1, 0) = -t_tilde.y();
      G.block<2, 2>(0, 1) = -Rp;
      G(0, 3) = sh.x;
      G(0, 4) = -sh.y;
      G(1, 3) = sh.y;
      G(1, 4) = sh.x;
      M += wxy * G.transpose() * G;
    }
    const Eigen::Matrix3d A11 = M.block<3, 3>(0, 0);
    const Eigen::Matrix<double, 3, 2> B12 = M.block<3, 2>(0, 3);
    const Eigen::Matrix2d D22 = M.block<2, 2>(3, 3);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> esM(A11);
    if (esM.eigenvalues()[0] < 1e-13 * std::max(esM.eigenvalues()[2], 1e-300))
      throw ConditioningError("cirls_cf_calibrate: (b, l_x, l_y) block singular; "
                              "motion lacks rotation");
    const Eigen::Matrix<double, 3, 2> A11iB = A11.ldlt().solve(B12);
    const Eigen::Matrix2d Mt = D22 - B12.transpose() * A11iB;
    const Eigen::Vector2d x = solve_constrained_quadratic(Mt, Eigen::Vector2d::Zero());
    Eigen::Vector3d y = -A11iB * x;
    Eigen::Matrix<double, 5, 1> u;
    u << y, x;
    if (u[0] < 0.0) u = -u;  // sign ambiguity: positive axle length

    const double b_hat = u[0];
    Eigen::VectorXd p_new(6);
    p_new << rt_l * b_hat, rt_r * b_hat, b_hat, u[1], u[2], std::atan2(u[4], u[3]);

    const double step = (p_new - p).norm();
    p = p_new;

    // Reweight on the full-model residuals; the max rule keeps w_x = w_y.
    const SensorModel m = unpack_params(init, p);
    const auto blocks = residuals(m, obs);
    Eigen::VectorXd v(rows);
    for (int e = 0; e < n; ++e) v.segment<3>(3 * e) = blocks[e].v;
    if (cfg.leverage_adjustment) {
      detail::Problem prob{&obs, init, cfg.analytic_jacobian};
      v = leverage_adjust(v, prob.jac(p), w_raw);
    }
    std::vector<double> wn(rows);
    for (int i = 0; i < rows; ++i) {
      const double u_sc = v[i] / sigma[i];
      wn[i] = huber_weight(u_sc, sigma[i], cfg.huber_c) * sigma[i] * sigma[i];
    }
    // Enforce the closed-form condition before trimming.
    for (int e = 0; e < n; ++e) {
      const double mx = std::max(wn[3 * e + 0], wn[3 * e + 1]);
      wn[3 * e + 0] = wn[3 * e + 1] = mx;
    }
    const TrimOutcome trim = trim_weights(wn);
    for (int i = 0; i < rows; ++i) {
      w_norm[i] = trim.weights[i];
      w_raw[i] = trim.weights[i] / (sigma[i] * sigma[i]);
    }

    result.log.push_back({outer, detail::huber_objective(blocks, cfg.huber_c), step,
                          trim.n_trimmed});
    if (step <= cfg.outer_tol) {
      converged = true;
      break;
    }
  }
  result.converged = converged;

  const SensorModel m = unpack_params(init, p);
  result.model = m;
  result.params = pack_params(m);
  result.final_weights.resize(n);
  for (int e = 0; e < n; ++e) result.final_weights[e] = w_norm.segment<3>(3 * e);

  detail::Problem prob{&obs, init, cfg.analytic_jacobian};
  const Eigen::VectorXd r = prob.resid(p);
  result.covariance = estimate_covariance(prob.jac(p), r, w_raw, &result.mse);
  result.sigma3 = 3.0 * result.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return result;
}

}  // namespace wheelcal
