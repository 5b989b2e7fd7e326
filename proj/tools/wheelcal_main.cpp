/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wheelcal/cam.hpp"
#include "wheelcal/cirls.hpp"
#include "wheelcal/io.hpp"
#include "wheelcal/metrics.hpp"
#include "wheelcal/modelfree.hpp"
#include "wheelcal/simulate.hpp"

namespace fs = std::filesystem;
using namespace wheelcal;

namespace {

// Exit codes: 0 ok, 2 schema, 3 observability, 4 convergence, 5 conditioning.
constexpr int kExitSchema = 2;
constexpr int kExitObservability = 3;
constexpr int kExitConvergence = 4;
constexpr int kExitConditioning = 5;

SensorModel nominal_model(const std::string& drive) {
  if (drive == "mecanum")
    return SensorModel{DriveParams(MecanumParams{0.030, 0.080, 0.160}), Pose2D()};
  return SensorModel{DriveParams(DiffDriveParams{0.035, 0.035, 0.230}), Pose2D()};
}

SimConfig sim_config_from_json(const json& j, const std::string& where) {
  SimConfig cfg;
  cfg.truth = model_from_json(j, where);  // requires drive + extrinsic
  cfg.duration = j.value("duration", cfg.duration);
  cfg.sample_period = j.value("sample_period", cfg.sample_period);
  if (j.contains("noise_sigma")) {
    const auto& s = j["noise_sigma"];
    if (!s.is_array() || s.size() != 3)
      throw SchemaError(where + ": \"noise_sigma\" must be [sx, sy, st]");
    cfg.noise_sigma = Eigen::Vector3d(s[0].get<double>(), s[1].get<double>(),
                                      s[2].get<double>());
  }
  cfg.outlier_fraction = j.value("outlier_fraction", cfg.outlier_fraction);
  cfg.outlier_lo = j.value("outlier_lo", cfg.outlier_lo);
  cfg.outlier_hi = j.value("outlier_hi", cfg.outlier_hi);
  cfg.ticks_per_rev = j.value("ticks_per_rev", cfg.ticks_per_rev);
  cfg.scan_range_sigma = j.value("scan_range_sigma", cfg.scan_range_sigma);
  cfg.scan_dropout = j.value("scan_dropout", cfg.scan_dropout);
  cfg.seed = j.value("seed", cfg.seed);
  const std::string profile = j.value("profile", std::string("mixed"));
  if (profile == "mixed") cfg.profile = ProfileMode::kMixed;
  else if (profile == "pure_rotation") cfg.profile = ProfileMode::kPureRotation;
  else if (profile == "pure_translation") cfg.profile = ProfileMode::kPureTranslation;
  else if (profile == "straight_line") cfg.profile = ProfileMode::kStraightLine;
  else throw SchemaError(where + ": unknown profile \"" + profile + "\"");
  return cfg;
}

struct OdometryFile {
  std::vector<double> times;          // record stamps t_0 .. t_{n-1}
  std::vector<Eigen::VectorXd> ticks; // one record per interval
};

OdometryFile load_odometry(const std::string& path) {
  OdometryFile f;
  parse_odometry(read_file(path), path, &f.times, &f.ticks);
  return f;
}

// Record i covers [t_i, t_{i+1}); the trailing interval reuses the median
// period. Sample instants for scans / trajectories are t_0 .. t_n.
std::vector<double> sample_times(const OdometryFile& odo) {
  std::vector<double> t = odo.times;
  double period = 0.7;
  if (t.size() >= 2) period = t[1] - t[0];
  t.push_back(t.back() + period);
  return t;
}

std::vector<CalibObservation> join_observations(const std::vector<DisplacementObs>& disp,
                                                const OdometryFile& odo, double ticks_per_rev) {
  std::vector<CalibObservation> out;
  for (const auto& d : disp) {
    Eigen::VectorXd sum;
    int found = 0;
    for (size_t i = 0; i < odo.times.size(); ++i) {
      if (odo.times[i] >= d.tj - 1e-9 && odo.times[i] < d.tk - 1e-9) {
        if (found == 0) sum = odo.ticks[i];
        else sum += odo.ticks[i];
        ++found;
      }
    }
    if (found == 0)
      throw SchemaError("no odometry records inside displacement interval [" +
                        std::to_string(d.tj) + ", " + std::to_string(d.tk) + ")");
    CalibObservation co;
    co.obs = d;
    co.dt = d.tk - d.tj;
    co.rates = ticks_to_rates(d.tj, sum, ticks_per_rev, co.dt);
    out.push_back(co);
  }
  return out;
}

void require_cirls_observability(const std::vector<CalibObservation>& obs,
                                 const SensorModel& init) {
  std::vector<Pose2D> motions;
  for (const auto& o : obs) motions.push_back(init.robot_pose(o.rates, o.dt));
  const ObservabilityReport rep = check_observability(
      motions, 0.01, 0.5 * kPi / 180.0, std::holds_alternative<DiffDriveParams>(init.drive));
  if (!rep.ok) throw ObservabilityError(rep.message);
  if (rep.b_deficient) std::cerr << "warning: " << rep.message << "\n";
}

json histogram(const std::vector<Eigen::Vector3d>& weights) {
  std::vector<int> bins(10, 0);
  for (const auto& w : weights)
    for (int c = 0; c < 3; ++c) {
      const int b = std::min(9, std::max(0, static_cast<int>(w[c] * 10.0)));
      ++bins[b];
    }
  return json(bins);
}

int run(int argc, char** argv) {
  CLI::App app{"wheeled-robot odometry and sensor calibration toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out_path = ".";
  std::string config_path, method = "cirls", init_path, nominal_drive = "diffdrive";
  std::string odometry_path, scans_path, displacements_path, model_path, reference_path;
  double huber_c = -1.0;
  int max_iters = -1;
  bool keep_failures = false;
  bool use_nominal = false;
  std::string gp_kernel = "rbf", gp_mean = "linear";
  double ticks_per_rev = 2578.33;

  auto* sim = app.add_subcommand("simulate", "synthesize logs from known parameters");
  sim->add_option("--config", config_path, "simulation config (json)")->required();
  sim->add_option("--out", out_path, "output directory")->required();
  sim->add_option("--seed", seed, "RNG seed override");

  auto* match = app.add_subcommand("match", "scan-match selected pairs into displacements");
  match->add_option("--scans", scans_path)->required();
  match->add_option("--odometry", odometry_path)->required();
  match->add_option("--init", init_path, "initial parameters (json)");
  match->add_flag("--nominal", use_nominal, "use built-in nominal parameters");
  match->add_option("--drive", nominal_drive, "drive type for --nominal");
  match->add_option("--out", out_path, "output displacements.jsonl")->required();
  match->add_flag("--keep-failures", keep_failures, "keep diverged pairs as outlier rows");
  match->add_option("--ticks-per-rev", ticks_per_rev);

  auto* cal = app.add_subcommand("calibrate", "estimate parameters or a motion model");
  cal->add_option("--method", method, "cam|cirls|cirls-cf|gp|linear")->required();
  cal->add_option("--odometry", odometry_path)->required();
  cal->add_option("--displacements", displacements_path);
  cal->add_option("--scans", scans_path);
  cal->add_option("--init", init_path, "initial parameters (json)");
  cal->add_flag("--nominal", use_nominal, "use built-in nominal parameters");
  cal->add_option("--drive", nominal_drive, "drive type for --nominal");
  cal->add_option("--huber-c", huber_c, "Huber knee override");
  cal->add_option("--max-iters", max_iters, "outer iteration cap");
  cal->add_option("--gp-kernel", gp_kernel, "rbf|linear|rbf+linear");
  cal->add_option("--gp-mean", gp_mean, "zero|linear");
  cal->add_option("--out", out_path, "result / model file")->required();
  cal->add_option("--ticks-per-rev", ticks_per_rev);
  cal->add_option("--seed", seed);

  auto* eval = app.add_subcommand("evaluate", "trajectory error metrics against a reference");
  eval->add_option("--model", model_path, "result.json or model.json")->required();
  eval->add_option("--odometry", odometry_path)->required();
  eval->add_option("--reference", reference_path, "reference trajectory (jsonl)")->required();
  eval->add_option("--out", out_path, "output directory")->required();
  eval->add_option("--ticks-per-rev", ticks_per_rev);

  CLI11_PARSE(app, argc, argv);
  const auto t_start = std::chrono::steady_clock::now();

  const auto load_init = [&]() -> SensorModel {
    if (!init_path.empty()) {
      const json j = json::parse(read_file(init_path));
      return model_from_json(j, init_path);
    }
    return nominal_model(nominal_drive);
  };

  if (sim->parsed()) {
    json cfg_json;
    try {
      cfg_json = json::parse(read_file(config_path));
    } catch (const json::parse_error& e) {
      throw SchemaError(config_path + ": " + e.what());
    }
    SimConfig cfg = sim_config_from_json(cfg_json, config_path);
    if (sim->count("--seed")) cfg.seed = seed;

    const Simulation s = synth_displacements(cfg);
    const World world = make_world_covering(s.sensor_traj, cfg.seed + 7);
    const std::vector<Scan> scans = synth_scans(cfg, world, s);

    RunManifest mf;
    mf.command = "simulate";
    mf.config = cfg_json;
    mf.seed = cfg.seed;
    mf.inputs = {config_path};
    mf.outputs = {"odometry.jsonl", "scans.jsonl", "displacements.jsonl", "truth.json",
                  "trajectory_ref.jsonl"};

    fs::create_directories(out_path);
    const fs::path dir(out_path);
    atomic_write(dir / "odometry.jsonl", odometry_to_jsonl(s.times, s.ticks));
    atomic_write(dir / "scans.jsonl", scans_to_jsonl(scans));
    atomic_write(dir / "displacements.jsonl", displacements_to_jsonl(s.displacements));
    json truth = model_to_json(cfg.truth);
    truth["manifest"] = mf.hash();
    atomic_write(dir / "truth.json", truth.dump(2) + "\n");
    Trajectory ref;
    ref.times = s.times;
    ref.poses = s.sensor_traj;
    atomic_write(dir / "trajectory_ref.jsonl", trajectory_to_jsonl(ref));
    atomic_write(dir / "manifest.json", mf.to_json().dump(2) + "\n");
  } else if (match->parsed()) {
    const auto scans = parse_scans(read_file(scans_path), scans_path);
    const OdometryFile odo = load_odometry(odometry_path);
    const SensorModel nominal = load_init();
    if (!std::holds_alternative<DiffDriveParams>(nominal.drive))
      throw SchemaError("match: scan-pair selection requires a diff drive");

    OdometryLog log{sample_times(odo), odo.ticks, ticks_per_rev};
    const auto pairs = select_scan_pairs(log, nominal, CamConfig{});

    std::vector<DisplacementObs> out;
    int failures = 0;
    for (const auto& sp : pairs) {
      const Pose2D q = pair_motion(std::get<DiffDriveParams>(nominal.drive), sp);
      const Pose2D init = sensor_displacement(nominal.extrinsic, q);
      try {
        DisplacementObs o = estimate_displacement(scans[sp.j], scans[sp.k], init);
        o.j = sp.j;
        o.k = sp.k;
        out.push_back(o);
      } catch (const MatchFailureError&) {
        ++failures;
        if (keep_failures) {
          IcpConfig lenient;
          lenient.fail_mean_dist = 1e9;
          DisplacementObs o = estimate_displacement(scans[sp.j], scans[sp.k], init, lenient);
          o.j = sp.j;
          o.k = sp.k;
          out.push_back(o);
        }
      }
    }
    if (out.empty()) throw ObservabilityError("match: no valid pairs");
    std::cerr << "match: " << out.size() << " pairs written, " << failures
              << " scan-matching failures" << (keep_failures ? " (kept)" : " (dropped)")
              << "\n";
    atomic_write(out_path, displacements_to_jsonl(out));
  } else if (cal->parsed()) {
    const OdometryFile odo = load_odometry(odometry_path);
    const SensorModel init = load_init();

    CirlsConfig ccfg;
    CamConfig camcfg;
    if (huber_c > 0) {
      ccfg.huber_c = huber_c;
      camcfg.huber_c = huber_c;
    }
    if (max_iters > 0) {
      ccfg.max_outer = max_iters;
      camcfg.max_outer = max_iters;
    }

    RunManifest mf;
    mf.command = "calibrate";
    mf.config = {{"method", method}, {"huber_c", huber_c}, {"max_iters", max_iters},
                 {"gp_kernel", gp_kernel}, {"gp_mean", gp_mean}};
    mf.seed = seed;
    mf.inputs = {odometry_path, displacements_path, scans_path, init_path};
    mf.outputs = {out_path};

    json result;
    bool converged = true;
    if (method == "cam") {
      if (scans_path.empty()) throw SchemaError("calibrate --method cam needs --scans");
      const auto scans = parse_scans(read_file(scans_path), scans_path);
      OdometryLog log{sample_times(odo), odo.ticks, ticks_per_rev};
      const auto pairs = select_scan_pairs(log, init, camcfg);
      const CalibrationResult res = cam_calibrate(scans, pairs, init, camcfg);
      converged = res.converged;
      result = model_to_json(res.model);
      result["method"] = method;
      result["mse"] = res.mse;
      result["iterations"] = res.log.size();
      result["converged"] = res.converged;
    } else if (method == "cirls" || method == "cirls-cf") {
      if (displacements_path.empty())
        throw SchemaError("calibrate --method " + method + " needs --displacements");
      const auto disp = parse_displacements(read_file(displacements_path), displacements_path);
      const auto obs = join_observations(disp, odo, ticks_per_rev);
      require_cirls_observability(obs, init);
      ccfg.closed_form = (method == "cirls-cf");
      const CalibrationResult res = ccfg.closed_form ? cirls_cf_calibrate(obs, init, ccfg)
                                                     : cirls_calibrate(obs, init, ccfg);
      converged = res.converged;
      result = model_to_json(res.model);
      result["method"] = method;
      result["mse"] = res.mse;
      result["iterations"] = res.log.size();
      result["converged"] = res.converged;
      json sigma3 = json::object();
      for (size_t i = 0; i < res.names.size(); ++i) sigma3[res.names[i]] = res.sigma3[i];
      result["sigma3"] = sigma3;
      result["weights_histogram"] = histogram(res.final_weights);
      json itlog = json::array();
      for (const auto& e : res.log)
        itlog.push_back({{"outer", e.outer}, {"objective", e.objective},
                         {"step", e.step_norm}, {"trimmed", e.trimmed}});
      result["iteration_log"] = itlog;
    } else if (method == "gp" || method == "linear") {
      if (displacements_path.empty())
        throw SchemaError("calibrate --method " + method + " needs --displacements");
      const auto disp = parse_displacements(read_file(displacements_path), displacements_path);
      const auto obs = join_observations(disp, odo, ticks_per_rev);
      const GpData data = make_gp_data(obs, ticks_per_rev);
      if (method == "linear") {
        const LinearModel lm = fit_linear_model(data, huber_c > 0 ? huber_c : 1.345);
        result = linear_model_to_json(lm);
      } else {
        const KernelKind kernel = gp_kernel == "linear" ? KernelKind::kLinear
                                  : gp_kernel == "rbf" ? KernelKind::kRbf
                                                       : KernelKind::kRbfPlusLinear;
        const MeanKind mean = gp_mean == "zero" ? MeanKind::kZero : MeanKind::kLinear;
        const HyperFit fit = optimize_hyperparameters(data, mean, kernel);
        const GPModel gm = gp_fit(data, mean, kernel, fit.hypers, fit.C);
        result = gp_model_to_json(gm);
        result["lml"] = fit.lml;
      }
    } else {
      throw SchemaError("unknown method \"" + method + "\"");
    }
    result["manifest"] = mf.hash();
    atomic_write(out_path, result.dump(2) + "\n");
    if (!converged) throw ConvergenceError("calibrate: did not converge (result written)");
  } else if (eval->parsed()) {
    const OdometryFile odo = load_odometry(odometry_path);
    const Trajectory ref = parse_trajectory(read_file(reference_path), reference_path);
    const json mj = json::parse(read_file(model_path));

    StepModel step;
    GPModel gp_holder;
    if (mj.contains("drive")) {
      step = parametric_step(model_from_json(mj, model_path), ticks_per_rev);
    } else if (mj.value("kind", "") == "gp") {
      gp_holder = gp_model_from_json(mj, model_path);
      step = gp_step(gp_holder);
    } else if (mj.value("kind", "") == "linear") {
      step = linear_step(linear_model_from_json(mj, model_path));
    } else {
      throw SchemaError(model_path + ": not a parameter or model file");
    }

    const std::vector<double> times = sample_times(odo);
    const Trajectory est = predict_trajectory(step, times, odo.ticks, ref.poses.front());

    MetricsReport rep;
    rep.rpe_m = rpe(est, ref, (times[1] - times[0]) / 2.0, &rep.per_step_rpe);
    rep.ate_m = ate(est, ref, (times[1] - times[0]) / 2.0, &rep.per_pose_ate);
    rep.n_poses = static_cast<int>(est.size());

    RunManifest mf;
    mf.command = "evaluate";
    mf.config = {{"model", model_path}};
    mf.seed = seed;
    mf.inputs = {model_path, odometry_path, reference_path};
    mf.outputs = {"metrics.json", "per_step.csv"};

    fs::create_directories(out_path);
    const fs::path dir(out_path);
    json out;
    out["ate_m"] = rep.ate_m;
    out["rpe_m"] = rep.rpe_m;
    out["n_poses"] = rep.n_poses;
    out["manifest"] = mf.hash();
    atomic_write(dir / "metrics.json", out.dump(2) + "\n");

    std::string csv = "step,t,rpe_m,ate_m\n";
    for (size_t k = 0; k < rep.per_step_rpe.size(); ++k) {
      csv += std::to_string(k) + "," + json(times[k + 1]).dump() + "," +
             json(rep.per_step_rpe[k]).dump() + "," + json(rep.per_pose_ate[k + 1]).dump() +
             "\n";
    }
    atomic_write(dir / "per_step.csv", csv);
    atomic_write(dir / "manifest.json", mf.to_json().dump(2) + "\n");
  }

  const auto t_end = std::chrono::steady_clock::now();
  std::cerr << "wall-clock: "
            << std::chrono::duration<double>(t_end - t_start).count() << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const ObservabilityError& e) {
    std::cerr << "observability error: " << e.what() << "\n";
    return kExitObservability;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const ConditioningError& e) {
    std::cerr << "conditioning error: " << e.what() << "\n";
    return kExitConditioning;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
