/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wheelcal/cirls.hpp"
#include "wheelcal/errors.hpp"
#include "wheelcal/kinematics.hpp"
#include "wheelcal/metrics.hpp"
#include "wheelcal/modelfree.hpp"
#include "wheelcal/scanmatch.hpp"
#include "wheelcal/simulate.hpp"

namespace wheelcal {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Low-level file plumbing.

/// Writes through a temp file and renames, so readers never see partial
/// output.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline json parse_line(const std::string& line, const std::string& file, int lineno) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw SchemaError(file + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

inline const json& field(const json& j, const char* name, const std::string& where) {
  const auto it = j.find(name);
  if (it == j.end()) throw SchemaError(where + ": missing field \"" + name + "\"");
  return *it;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSONL records. One record per line, UTF-8, shortest round-trip decimals.
//   odometry.jsonl      {"t": s, "ticks": [int x m]}
//   scans.jsonl         {"t": s, "pts": [[x, y] x N]}
//   displacements.jsonl {"tj": s, "tk": s, "s": [x, y, theta],
//                        "sigma": [sx, sy, st]}
//   trajectory*.jsonl   {"t": s, "pose": [x, y, theta]}

inline std::string odometry_to_jsonl(const std::vector<double>& times,
                                     const std::vector<Eigen::VectorXd>& ticks) {
  std::string out;
  for (size_t i = 0; i < ticks.size(); ++i) {
    json j;
    j["t"] = times[i];
    std::vector<long long> t(ticks[i].size());
    for (int k = 0; k < ticks[i].size(); ++k) t[k] = std::llround(ticks[i][k]);
    j["ticks"] = t;
    out += j.dump() + "\n";
  }
  return out;
}

inline void parse_odometry(const std::string& content, const std::string& file,
                           std::vector<double>* times, std::vector<Eigen::VectorXd>* ticks) {
  times->clear();
  ticks->clear();
  std::istringstream in(content);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = file + ":" + std::to_string(lineno);
    const json j = detail::parse_line(line, file, lineno);
    times->push_back(detail::field(j, "t", where).get<double>());
    const auto& tk = detail::field(j, "ticks", where);
    if (!tk.is_array() || tk.empty()) throw SchemaError(where + ": \"ticks\" must be an array");
    Eigen::VectorXd v(tk.size());
    for (size_t k = 0; k < tk.size(); ++k) v[k] = tk[k].get<double>();
    ticks->push_back(v);
  }
  if (times->empty()) throw SchemaError(file + ": no odometry records");
}

inline std::string scans_to_jsonl(const std::vector<Scan>& scans) {
  std::string out;
  for (const auto& s : scans) {
    json j;
    j["t"] = s.timestamp;
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({p.x(), p.y()});
    j["pts"] = std::move(pts);
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<Scan> parse_scans(const std::string& content, const std::string& file) {
  std::vector<Scan> scans;
  std::istringstream in(content);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = file + ":" + std::to_string(lineno);
    const json j = detail::parse_line(line, file, lineno);
    Scan s;
    s.timestamp = detail::field(j, "t", where).get<double>();
    const auto& pts = detail::field(j, "pts", where);
    if (!pts.is_array()) throw SchemaError(where + ": \"pts\" must be an array");
    for (const auto& p : pts) {
      if (!p.is_array() || p.size() != 2)
        throw SchemaError(where + ": scan point must be [x, y]");
      s.points.emplace_back(p[0].get<double>(), p[1].get<double>());
    }
    scans.push_back(std::move(s));
  }
  if (scans.empty()) throw SchemaError(file + ": no scans");
  return scans;
}

inline std::string displacements_to_jsonl(const std::vector<DisplacementObs>& obs) {
  std::string out;
  for (const auto& o : obs) {
    json j;
    j["tj"] = o.tj;
    j["tk"] = o.tk;
    j["s"] = {o.s_hat.x, o.s_hat.y, o.s_hat.theta};
    j["sigma"] = {o.sigma[0], o.sigma[1], o.sigma[2]};
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<DisplacementObs> parse_displacements(const std::string& content,
                                                        const std::string& file) {
  std::vector<DisplacementObs> obs;
  std::istringstream in(content);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = file + ":" + std::to_string(lineno);
    const json j = detail::parse_line(line, file, lineno);
    DisplacementObs o;
    o.tj = detail::field(j, "tj", where).get<double>();
    o.tk = detail::field(j, "tk", where).get<double>();
    const auto& s = detail::field(j, "s", where);
    const auto& sig = detail::field(j, "sigma", where);
    if (!s.is_array() || s.size() != 3) throw SchemaError(where + ": \"s\" must be [x,y,theta]");
    if (!sig.is_array() || sig.size() != 3)
      throw SchemaError(where + ": \"sigma\" must be [sx,sy,st]");
    o.s_hat = Pose2D(s[0].get<double>(), s[1].get<double>(), s[2].get<double>());
    for (int c = 0; c < 3; ++c) {
      o.sigma[c] = sig[c].get<double>();
      if (!(o.sigma[c] > 0.0)) throw SchemaError(where + ": sigma components must be positive");
    }
    obs.push_back(o);
  }
  if (obs.empty()) throw SchemaError(file + ": no displacement records");
  return obs;
}

inline std::string trajectory_to_jsonl(const Trajectory& t) {
  std::string out;
  for (size_t i = 0; i < t.size(); ++i) {
    json j;
    j["t"] = t.times[i];
    j["pose"] = {t.poses[i].x, t.poses[i].y, t.poses[i].theta};
    out += j.dump() + "\n";
  }
  return out;
}

inline Trajectory parse_trajectory(const std::string& content, const std::string& file) {
  Trajectory t;
  std::istringstream in(content);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = file + ":" + std::to_string(lineno);
    const json j = detail::parse_line(line, file, lineno);
    t.times.push_back(detail::field(j, "t", where).get<double>());
    const auto& p = detail::field(j, "pose", where);
    if (!p.is_array() || p.size() != 3) throw SchemaError(where + ": \"pose\" must be [x,y,th]");
    t.poses.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  if (t.size() == 0) throw SchemaError(file + ": no trajectory records");
  return t;
}

// ---------------------------------------------------------------------------
// Parameter maps with a drive-type tag (truth.json / result.json).

inline json model_to_json(const SensorModel& m) {
  json j;
  j["drive"] = drive_name(m.drive);
  if (const auto* dd = std::get_if<DiffDriveParams>(&m.drive)) {
    j["params"] = {{"r_L", dd->r_left}, {"r_R", dd->r_right}, {"b", dd->axle}};
  } else {
    const auto& mp = std::get<MecanumParams>(m.drive);
    j["params"] = {{"r", mp.radius}, {"L_x", mp.axle_x}, {"L_y", mp.axle_y}};
  }
  j["extrinsic"] = {{"l_x", m.extrinsic.x}, {"l_y", m.extrinsic.y},
                    {"l_theta", m.extrinsic.theta}};
  return j;
}

inline SensorModel model_from_json(const json& j, const std::string& where) {
  const std::string drive = detail::field(j, "drive", where).get<std::string>();
  const json& p = detail::field(j, "params", where);
  SensorModel m;
  if (drive == "diffdrive") {
    m.drive = DiffDriveParams{detail::field(p, "r_L", where).get<double>(),
                              detail::field(p, "r_R", where).get<double>(),
                              detail::field(p, "b", where).get<double>()};
  } else if (drive == "mecanum") {
    m.drive = MecanumParams{detail::field(p, "r", where).get<double>(),
                            detail::field(p, "L_x", where).get<double>(),
                            detail::field(p, "L_y", where).get<double>()};
  } else {
    throw SchemaError(where + ": unknown drive type \"" + drive + "\"");
  }
  const json& e = detail::field(j, "extrinsic", where);
  m.extrinsic = Pose2D(detail::field(e, "l_x", where).get<double>(),
                       detail::field(e, "l_y", where).get<double>(),
                       detail::field(e, "l_theta", where).get<double>());
  return m;
}

// ---------------------------------------------------------------------------
// Non-parametric model files. Reload reproduces predictions exactly because
// every precomputed quantity is stored and doubles round-trip through the
// shortest-decimal encoding.

inline json gp_model_to_json(const GPModel& m) {
  json j;
  j["format"] = "wheelcal-model";
  j["version"] = 1;
  j["kind"] = "gp";
  j["kernel"] = kernel_name(m.kernel);
  j["mean"] = mean_name(m.mean);
  j["C"] = std::vector<std::vector<double>>();
  for (int r = 0; r < m.C.rows(); ++r)
    j["C"].push_back(std::vector<double>(m.C.row(r).begin(), m.C.row(r).end()));
  json hy = json::array();
  for (const auto& h : m.hypers) {
    json e;
    e["signal_var"] = h.signal_var;
    e["length"] = std::vector<double>(h.length.begin(), h.length.end());
    hy.push_back(e);
  }
  j["hypers"] = hy;
  j["input_scale"] = std::vector<double>(m.input_scale.begin(), m.input_scale.end());
  json xs = json::array();
  for (const auto& x : m.inputs_scaled) xs.push_back(std::vector<double>(x.begin(), x.end()));
  j["inputs_scaled"] = xs;
  json al = json::array();
  for (int c = 0; c < 3; ++c)
    al.push_back(std::vector<double>(m.alpha.col(c).begin(), m.alpha.col(c).end()));
  j["alpha"] = al;
  json ch = json::array();
  for (const auto& L : m.chol) {
    std::vector<double> tri;
    for (int r = 0; r < L.rows(); ++r)
      for (int c = 0; c <= r; ++c) tri.push_back(L(r, c));
    ch.push_back(tri);
  }
  j["chol_lower"] = ch;
  j["jitter"] = m.jitter;
  return j;
}

inline GPModel gp_model_from_json(const json& j, const std::string& where) {
  GPModel m;
  const std::string kernel = detail::field(j, "kernel", where).get<std::string>();
  m.kernel = kernel == "rbf" ? KernelKind::kRbf
             : kernel == "linear" ? KernelKind::kLinear
                                  : KernelKind::kRbfPlusLinear;
  m.mean = detail::field(j, "mean", where).get<std::string>() == "zero" ? MeanKind::kZero
                                                                        : MeanKind::kLinear;
  const auto& C = detail::field(j, "C", where);
  m.C.resize(C.size(), C[0].size());
  for (size_t r = 0; r < C.size(); ++r)
    for (size_t c = 0; c < C[r].size(); ++c) m.C(r, c) = C[r][c].get<double>();
  for (const auto& h : detail::field(j, "hypers", where)) {
    KernelHypers kh;
    kh.signal_var = detail::field(h, "signal_var", where).get<double>();
    const auto& len = detail::field(h, "length", where);
    kh.length.resize(len.size());
    for (size_t i = 0; i < len.size(); ++i) kh.length[i] = len[i].get<double>();
    m.hypers.push_back(kh);
  }
  const auto& sc = detail::field(j, "input_scale", where);
  m.input_scale.resize(sc.size());
  for (size_t i = 0; i < sc.size(); ++i) m.input_scale[i] = sc[i].get<double>();
  for (const auto& x : detail::field(j, "inputs_scaled", where)) {
    Eigen::VectorXd v(x.size());
    for (size_t i = 0; i < x.size(); ++i) v[i] = x[i].get<double>();
    m.inputs_scaled.push_back(v);
  }
  const int n = static_cast<int>(m.inputs_scaled.size());
  const auto& al = detail::field(j, "alpha", where);
  m.alpha.resize(n, 3);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i) m.alpha(i, c) = al[c][i].get<double>();
  for (const auto& tri : detail::field(j, "chol_lower", where)) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    size_t k = 0;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c <= r; ++c) L(r, c) = tri[k++].get<double>();
    m.chol.push_back(L);
  }
  m.jitter = detail::field(j, "jitter", where).get<double>();
  return m;
}

inline json linear_model_to_json(const LinearModel& m) {
  json j;
  j["format"] = "wheelcal-model";
  j["version"] = 1;
  j["kind"] = "linear";
  j["W"] = std::vector<std::vector<double>>();
  for (int r = 0; r < m.W.rows(); ++r)
    j["W"].push_back(std::vector<double>(m.W.row(r).begin(), m.W.row(r).end()));
  return j;
}

inline LinearModel linear_model_from_json(const json& j, const std::string& where) {
  LinearModel m;
  const auto& W = detail::field(j, "W", where);
  m.W.resize(W.size(), W[0].size());
  for (size_t r = 0; r < W.size(); ++r)
    for (size_t c = 0; c < W[r].size(); ++c) m.W(r, c) = W[r][c].get<double>();
  return m;
}

// ---------------------------------------------------------------------------
// Run manifest. The hash covers the deterministic core; wall-clock time is
// reported on the console instead of in the file so outputs stay
// byte-identical across reruns.

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RunManifest {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string version = WHEELCAL_VERSION;

  std::string hash() const {
    json core;
    core["command"] = command;
    core["config"] = config;
    core["seed"] = seed;
    core["inputs"] = inputs;
    core["version"] = version;
    return fnv1a_hex(core.dump());
  }

  json to_json() const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["version"] = version;
    j["hash"] = hash();
    return j;
  }
};

}  // namespace wheelcal
