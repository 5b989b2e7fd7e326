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

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "wheelcal/cirls.hpp"
#include "wheelcal/errors.hpp"
#include "wheelcal/geometry.hpp"

namespace wheelcal {

enum class KernelKind { kRbf, kLinear, kRbfPlusLinear };
enum class MeanKind { kZero, kLinear };

inline std::string kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::kRbf: return "rbf";
    case KernelKind::kLinear: return "linear";
    default: return "rbf+linear";
  }
}

inline std::string mean_name(MeanKind m) { return m == MeanKind::kZero ? "zero" : "linear"; }

/// Per-output-dimension kernel hyperparameters. The RBF part uses a signal
/// variance and one length scale per input axis; the linear part has none.
struct KernelHypers {
  double signal_var = 1.0;
  Eigen::VectorXd length;  // per input axis, kRbf / kRbfPlusLinear only
};

/// mu(x) = C x.
inline Eigen::Vector3d linear_mean(const Eigen::MatrixXd& C, const Eigen::VectorXd& x) {
  if (C.size() == 0) return Eigen::Vector3d::Zero();
  if (C.cols() != x.size())
    throw std::invalid_argument("linear_mean: dimension mismatch");
  return C * x;
}

/// sigma^2 exp(-1/2 (x-x')' B^-1 (x-x')) with diagonal B.
inline double rbf_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                         const KernelHypers& h) {
  double q = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    q += d * d / (h.length[i] * h.length[i]);
  }
  return h.signal_var * std::exp(-0.5 * q);
}

/// Inner-product kernel <x, x'>.
inline double linear_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return x.dot(y);
}

inline double eval_kernel(KernelKind kind, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const KernelHypers& h) {
  switch (kind) {
    case KernelKind::kRbf: return rbf_kernel(x, y, h);
    case KernelKind::kLinear: return linear_kernel(x, y);
    default: return rbf_kernel(x, y, h) + linear_kernel(x, y);
  }
}

/// Training tuple: tick vectors, displacement targets and their noise.
struct GpData {
  std::vector<Eigen::VectorXd> inputs;      // delta_jk, tick counts
  std::vector<Eigen::Vector3d> targets;     // s_hat
  std::vector<Eigen::Vector3d> noise_std;   // per-component sigma
};

inline GpData make_gp_data(const std::vector<CalibObservation>& obs, double ticks_per_rev) {
  GpData d;
  for (const auto& o : obs) {
    d.inputs.push_back(o.rates.omega * o.dt * ticks_per_rev / (2.0 * kPi));
    d.targets.emplace_back(o.obs.s_hat.x, o.obs.s_hat.y, o.obs.s_hat.theta);
    d.noise_std.push_back(o.obs.sigma);
  }
  return d;
}

/// Three independent scalar Gaussian processes over the wheel-tick inputs,
/// with all the training-time solves precomputed.
struct GPModel {
  KernelKind kernel = KernelKind::kRbf;
  MeanKind mean = MeanKind::kZero;
  Eigen::MatrixXd C;                   // 3 x m, zero rows for the zero mean
  std::vector<KernelHypers> hypers;    // one per output dimension
  Eigen::VectorXd input_scale;         // per-axis standardization inside kernels
  std::vector<Eigen::VectorXd> inputs_scaled;
  Eigen::MatrixXd alpha;               // n x 3, (K+Sigma)^-1 (s - mu)
  std::vector<Eigen::MatrixXd> chol;   // lower factors of K + Sigma, per dim
  double jitter = 1e-10;

  int dim_input() const { return static_cast<int>(input_scale.size()); }
  int n_train() const { return static_cast<int>(inputs_scaled.size()); }
};

namespace detail {

inline Eigen::VectorXd scale_input(const Eigen::VectorXd& x, const Eigen::VectorXd& s) {
  return x.cwiseQuotient(s);
}

inline Eigen::VectorXd input_scales(const std::vector<Eigen::VectorXd>& inputs) {
  const int m = static_cast<int>(inputs[0].size());
  const int n = static_cast<int>(inputs.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(m), var = Eigen::VectorXd::Zero(m);
  for (const auto& x : inputs) mean += x;
  mean /= n;
  for (const auto& x : inputs) var += (x - mean).cwiseAbs2();
  var /= std::max(n - 1, 1);
  Eigen::VectorXd s = var.cwiseSqrt();
  for (int i = 0; i < m; ++i)
    if (s[i] < 1e-12) s[i] = 1.0;
  return s;
}

}  // namespace detail

/// Builds the three per-dimension factorizations and the precomputed solves.
/// A fixed input scale pins the prior when models over different data sets
/// must be comparable.
inline GPModel gp_fit(const GpData& data, MeanKind mean, KernelKind kernel,
                      const std::vector<KernelHypers>& hypers, const Eigen::MatrixXd& C_in = {},
                      const Eigen::VectorXd* fixed_scale = nullptr) {
  if (data.inputs.empty()) throw std::invalid_argument("gp_fit: empty data");
  const int n = static_cast<int>(data.inputs.size());
  const int m = static_cast<int>(data.inputs[0].size());

  GPModel model;
  model.kernel = kernel;
  model.mean = mean;
  model.hypers = hypers;
  model.input_scale = fixed_scale ? *fixed_scale : detail::input_scales(data.inputs);
  model.C = mean == MeanKind::kLinear && C_in.size() > 0 ? C_in
                                                         : Eigen::MatrixXd::Zero(3, m);
  if (mean == MeanKind::kZero) model.C.setZero();
  for (auto& x : data.inputs)
    model.inputs_scaled.push_back(detail::scale_input(x, model.input_scale));

  model.alpha.resize(n, 3);
  model.chol.resize(3);
  for (int d = 0; d < 3; ++d) {
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        const double v =
            eval_kernel(kernel, model.inputs_scaled[i], model.inputs_scaled[j], hypers[d]);
        A(i, j) = v;
        A(j, i) = v;
      }
    for (int i = 0; i < n; ++i)
      A(i, i) += data.noise_std[i][d] * data.noise_std[i][d];

    Eigen::LLT<Eigen::MatrixXd> llt;
    double jit = model.jitter;
    const double diag_scale = std::max(A.diagonal().maxCoeff(), 1.0);
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd Aj = A;
      Aj.diagonal().array() += jit * diag_scale;
      llt.compute(Aj);
      if (llt.info() == Eigen::Success) break;
      jit *= 10.0;
    }
    if (llt.info() != Eigen::Success)
      throw ConditioningError("gp_fit: kernel matrix not positive definite for dimension " +
                              std::to_string(d));
    Eigen::VectorXd resid(n);
    for (int i = 0; i < n; ++i)
      resid[i] = data.targets[i][d] - linear_mean(model.C, data.inputs[i])[d];
    model.alpha.col(d) = llt.solve(resid);
    model.chol[d] = llt.matrixL();
  }
  return model;
}

/// Posterior mean and variance at a new tick vector, per output dimension.
/// Variances are clamped at zero.
inline void gp_predict(const GPModel& model, const Eigen::VectorXd& delta,
                       Eigen::Vector3d* mu, Eigen::Vector3d* var) {
  if (delta.size() != model.dim_input())
    throw std::invalid_argument("gp_predict: dimension mismatch");
  const Eigen::VectorXd xs = detail::scale_input(delta, model.input_scale);
  const int n = model.n_train();
  const Eigen::Vector3d mean_term = linear_mean(model.C, delta);
  for (int d = 0; d < 3; ++d) {
    Eigen::VectorXd k(n);
    for (int i = 0; i < n; ++i)
      k[i] = eval_kernel(model.kernel, xs, model.inputs_scaled[i], model.hypers[d]);
    (*mu)[d] = k.dot(model.alpha.col(d)) + mean_term[d];
    if (var) {
      const Eigen::VectorXd v =
          model.chol[d].triangularView<Eigen::Lower>().solve(k);
      const double prior = eval_kernel(model.kernel, xs, xs, model.hypers[d]);
      (*var)[d] = std::max(prior - v.squaredNorm(), 0.0);
    }
  }
}

/// Summed per-dimension Gaussian log marginal likelihood.
inline double log_marginal_likelihood(const GpData& data, MeanKind mean, KernelKind kernel,
                                      const std::vector<KernelHypers>& hypers,
                                      const Eigen::MatrixXd& C = {}) {
  const GPModel model = gp_fit(data, mean, kernel, hypers, C);
  const int n = model.n_train();
  double lml = 0.0;
  for (int d = 0; d < 3; ++d) {
    Eigen::VectorXd resid(n);
    for (int i = 0; i < n; ++i)
      resid[i] = data.targets[i][d] - linear_mean(model.C, data.inputs[i])[d];
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(model.chol[d](i, i));
    lml += -0.5 * resid.dot(model.alpha.col(d)) - logdet - 0.5 * n * std::log(2.0 * kPi);
  }
  return lml;
}

namespace detail {

// Factorization and negative log marginal likelihood of one output
// dimension; the hyperparameter search calls this many times.
inline double neg_lml_one_dim(const GpData& data, int d, KernelKind kernel,
                              const KernelHypers& h, const Eigen::MatrixXd& C,
                              const Eigen::VectorXd& scale) {
  const int n = static_cast<int>(data.inputs.size());
  Eigen::MatrixXd A(n, n);
  std::vector<Eigen::VectorXd> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = scale_input(data.inputs[i], scale);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = eval_kernel(kernel, xs[i], xs[j], h);
      A(i, j) = v;
      A(j, i) = v;
    }
  for (int i = 0; i < n; ++i) A(i, i) += data.noise_std[i][d] * data.noise_std[i][d];
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jit = 1e-10;
  const double diag_scale = std::max(A.diagonal().maxCoeff(), 1.0);
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::MatrixXd Aj = A;
    Aj.diagonal().array() += jit * diag_scale;
    llt.compute(Aj);
    if (llt.info() == Eigen::Success) break;
    jit *= 10.0;
  }
  if (llt.info() != Eigen::Success)
    throw ConditioningError("neg_lml_one_dim: kernel matrix not positive definite");
  Eigen::VectorXd resid(n);
  for (int i = 0; i < n; ++i)
    resid[i] = data.targets[i][d] - linear_mean(C, data.inputs[i])[d];
  const Eigen::VectorXd alpha = llt.solve(resid);
  double logdet = 0.0;
  const Eigen::MatrixXd L = llt.matrixL();
  for (int i = 0; i < n; ++i) logdet += std::log(L(i, i));
  return -(-0.5 * resid.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * kPi));
}

// Derivative-free Nelder-Mead in log space; deterministic.
inline Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x0, double step, int max_iter) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> val(n + 1);
  for (int i = 0; i < n; ++i) simplex[i + 1][i] += step;
  for (int i = 0; i <= n; ++i) val[i] = f(simplex[i]);

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> order(n + 1);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
    std::vector<Eigen::VectorXd> sx(n + 1);
    std::vector<double> sv(n + 1);
    for (int i = 0; i <= n; ++i) {
      sx[i] = simplex[order[i]];
      sv[i] = val[order[i]];
    }
    simplex = sx;
    val = sv;
    if (std::abs(val[n] - val[0]) < 1e-10 * (1.0 + std::abs(val[0]))) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += simplex[i];
    centroid /= n;

    const Eigen::VectorXd xr = centroid + (centroid - simplex[n]);
    const double fr = f(xr);
    if (fr < val[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - simplex[n]);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[n] = xe;
        val[n] = fe;
      } else {
        simplex[n] = xr;
        val[n] = fr;
      }
    } else if (fr < val[n - 1]) {
      simplex[n] = xr;
      val[n] = fr;
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (simplex[n] - centroid);
      const double fc = f(xc);
      if (fc < val[n]) {
        simplex[n] = xc;
        val[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
          val[i] = f(simplex[i]);
        }
      }
    }
  }
  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (val[i] < val[best]) best = i;
  return simplex[best];
}

}  // namespace detail

struct HyperFit {
  Eigen::MatrixXd C;
  std::vector<KernelHypers> hypers;
  double lml = 0.0;
};

/// Two-stage hyperparameter selection: the linear mean by weighted least
/// squares first, then kernel hyperparameters by simplex search on the log
/// marginal likelihood from three deterministic restarts.
inline HyperFit optimize_hyperparameters(const GpData& data, MeanKind mean, KernelKind kernel) {
  const int n = static_cast<int>(data.inputs.size());
  const int m = static_cast<int>(data.inputs[0].size());

  HyperFit fit;
  fit.C = Eigen::MatrixXd::Zero(3, m);
  if (mean == MeanKind::kLinear) {
    for (int d = 0; d < 3; ++d) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
      for (int i = 0; i < n; ++i) {
        const double w = 1.0 / (data.noise_std[i][d] * data.noise_std[i][d]);
        A += w * data.inputs[i] * data.inputs[i].transpose();
        b += w * data.targets[i][d] * data.inputs[i];
      }
      fit.C.row(d) = A.ldlt().solve(b).transpose();
    }
  }

  if (kernel == KernelKind::kLinear) {
    fit.hypers.assign(3, KernelHypers{1.0, Eigen::VectorXd::Ones(m)});
    fit.lml = log_marginal_likelihood(data, mean, kernel, fit.hypers, fit.C);
    return fit;
  }

  // Data-driven starting point: residual variance and unit length scales on
  // the standardized inputs.
  Eigen::Vector3d resid_var = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d r =
        data.targets[i] - linear_mean(fit.C, data.inputs[i]);
    resid_var += r.cwiseAbs2();
  }
  resid_var /= std::max(n - 1, 1);

  fit.hypers.resize(3);
  fit.lml = -std::numeric_limits<double>::infinity();
  bool any_success = false;
  std::string last_error;
  const Eigen::VectorXd scale = detail::input_scales(data.inputs);
  for (int d = 0; d < 3; ++d) {
    const auto objective = [&](const Eigen::VectorXd& logh) {
      KernelHypers h;
      h.signal_var = std::exp(logh[0]);
      h.length = logh.tail(m).array().exp();
      try {
        return detail::neg_lml_one_dim(data, d, kernel, h, fit.C, scale);
      } catch (const ConditioningError&) {
        return 1e30;
      }
    };

    Eigen::VectorXd x0(1 + m);
    x0[0] = std::log(std::max(resid_var[d], 1e-10));
    x0.tail(m).setZero();
    double best_obj = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_x = x0;
    for (int restart = 0; restart < 3; ++restart) {
      Eigen::VectorXd xs = x0;
      xs.array() += (restart - 1) * 1.0;  // e^-1, 1, e^+1 scaling
      const Eigen::VectorXd xr = detail::nelder_mead(objective, xs, 0.7, 200);
      const double v = objective(xr);
      const double v0 = objective(xs);
      if (v <= v0 + 1e-9 && v < best_obj) {
        best_obj = v;
        best_x = xr;
      }
    }
    if (best_obj >= 1e30) {
      last_error = "optimize_hyperparameters: all restarts failed conditioning for dimension " +
                   std::to_string(d);
      continue;
    }
    any_success = true;
    fit.hypers[d].signal_var = std::exp(best_x[0]);
    fit.hypers[d].length = best_x.tail(m).array().exp();
  }
  if (!any_success) throw ConditioningError(last_error);
  fit.lml = log_marginal_likelihood(data, mean, kernel, fit.hypers, fit.C);
  return fit;
}

/// f(delta) = W delta.
struct LinearModel {
  Eigen::MatrixXd W;  // 3 x m
};

inline Eigen::Vector3d predict_linear(const LinearModel& model, const Eigen::VectorXd& delta) {
  if (model.W.cols() != delta.size())
    throw std::invalid_argument("predict_linear: dimension mismatch");
  return model.W * delta;
}

/// Robust linear regression of the displacement on the tick vector, row by
/// row: Huber IRLS on the sigma-standardized residuals.
inline LinearModel fit_linear_model(const GpData& data, double huber_c = 1.345) {
  const int n = static_cast<int>(data.inputs.size());
  const int m = static_cast<int>(data.inputs[0].size());
  if (n < m) throw std::invalid_argument("fit_linear_model: need at least m samples");

  // Rank check on the design.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < n; ++i) gram += data.inputs[i] * data.inputs[i].transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.eigenvalues()[0] < 1e-10 * std::max(es.eigenvalues()[m - 1], 1e-300)) {
    const Eigen::VectorXd null_dir = es.eigenvectors().col(0).cwiseAbs();
    std::string wheels;
    for (int i = 0; i < m; ++i)
      if (null_dir[i] > 0.3 * null_dir.maxCoeff())
        wheels += (wheels.empty() ? "" : ", ") + std::string("wheel ") + std::to_string(i);
    throw ConditioningError("fit_linear_model: tick design rank-deficient; unexcited "
                            "combination spans (" + wheels + ")");
  }

  LinearModel model;
  model.W.resize(3, m);
  for (int d = 0; d < 3; ++d) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(m);
    for (int iter = 0; iter < 100; ++iter) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, m);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
      for (int i = 0; i < n; ++i) {
        const double s = data.noise_std[i][d];
        const double wi = w[i] / (s * s);
        A += wi * data.inputs[i] * data.inputs[i].transpose();
        b += wi * data.targets[i][d] * data.inputs[i];
      }
      const Eigen::VectorXd row_new = A.ldlt().solve(b);
      const double change = (row_new - row).norm();
      row = row_new;
      for (int i = 0; i < n; ++i) {
        const double u =
            (data.targets[i][d] - data.inputs[i].dot(row)) / data.noise_std[i][d];
        w[i] = std::abs(u) <= huber_c ? 1.0 : huber_c / std::abs(u);
      }
      if (change < 1e-12 * (1.0 + row.norm())) break;
    }
    model.W.row(d) = row.transpose();
  }
  return model;
}

}  // namespace wheelcal
