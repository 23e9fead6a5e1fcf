#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "structnode/xcli/config.hpp"

namespace structnode::xcli {

namespace fs = std::filesystem;
using bench::Trajectory;
using Vector = Eigen::VectorXd;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trajectory_file(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%04zu.csv", j);
  return buf;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
  }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Columns t, y1..y_dy, u1..u_du, x1..x_dx (x only when states are known).
inline std::string trajectory_csv(const ode::TimeGrid& grid, const Matrix& y, const Matrix& u, const Matrix& x) {
  std::string s = "t";
  for (Eigen::Index k = 0; k < y.cols(); ++k) s += ",y" + std::to_string(k + 1);
  for (Eigen::Index k = 0; k < u.cols(); ++k) s += ",u" + std::to_string(k + 1);
  for (Eigen::Index k = 0; k < x.cols(); ++k) s += ",x" + std::to_string(k + 1);
  s += '\n';
  for (Eigen::Index i = 0; i < grid.n; ++i) {
    s += format_double(grid.time(i));
    for (const Matrix* m : {&y, &u, &x}) {
      for (Eigen::Index k = 0; k < m->cols(); ++k) s += "," + format_double((*m)(i, k));
    }
    s += '\n';
  }
  return s;
}

inline void write_trajectory(const fs::path& path, const Trajectory& tr) {
  write_text(path, trajectory_csv(tr.grid, tr.y, tr.u, tr.x));
}

/// Reads a trajectory CSV. The grid is rebuilt from the t column, which must
/// be uniformly spaced.
inline Trajectory read_trajectory(const fs::path& path) {
  std::istringstream in(read_text(path));
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(where + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header[0] != "t") throw SchemaError(where + ":1: first column must be 't'");
  Eigen::Index d[3] = {0, 0, 0};
  int stage = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string& h = header[c];
    const int kind = h.empty() ? -1 : h[0] == 'y' ? 0 : h[0] == 'u' ? 1 : h[0] == 'x' ? 2 : -1;
    if (kind < stage || h.substr(1) != std::to_string(d[kind] + 1)) {
      throw SchemaError(where + ":1: unexpected column '" + h + "'");
    }
    stage = kind;
    ++d[kind];
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw SchemaError(where + ":" + std::to_string(line_no) + ": invalid number '" + cell + "'");
      }
    }
    if (row.size() != header.size()) {
      throw SchemaError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                        " columns");
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 2) throw SchemaError(where + ": need at least 2 samples");
  const double t0 = rows[0][0], dt = rows[1][0] - rows[0][0];
  ode::TimeGrid grid{t0, dt, n};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(rows[static_cast<std::size_t>(i)][0] - grid.time(i)) > 1e-9 * std::max(1.0, std::abs(grid.time(i)))) {
      throw SchemaError(where + ":" + std::to_string(i + 2) + ": time column is not uniformly spaced");
    }
  }
  Trajectory tr;
  tr.grid = grid;
  tr.y.resize(n, d[0]);
  tr.u.resize(n, d[1]);
  tr.x.resize(n, d[2]);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    std::size_t c = 1;
    for (Eigen::Index k = 0; k < d[0]; ++k) tr.y(i, k) = r[c++];
    for (Eigen::Index k = 0; k < d[1]; ++k) tr.u(i, k) = r[c++];
    for (Eigen::Index k = 0; k < d[2]; ++k) tr.x(i, k) = r[c++];
  }
  return tr;
}

inline json input_to_json(const bench::InputSpec& in) {
  switch (in.kind) {
    case bench::InputKind::None: return {{"kind", "none"}};
    case bench::InputKind::Constant: return {{"kind", "constant"}, {"value", in.value}};
    case bench::InputKind::Sinusoid:
      return {{"kind", "sinusoid"}, {"amplitude", in.amplitude}, {"omega_u", in.omega_u}};
    case bench::InputKind::Earthquake: return {{"kind", "earthquake"}, {"F0", in.F0}, {"omega", in.omega}};
  }
  return {};
}

/// Writes one CSV per trajectory plus manifest.json into `dir`.
inline void write_dataset(const fs::path& dir, const std::vector<Trajectory>& data, const ExperimentConfig& c,
                          const std::string& split, std::uint64_t seed) {
  ensure_dir(dir);
  const bench::BenchmarkSystem sys{priors::family_from_string(c.system)};
  json m;
  m["schema_version"] = kSchemaVersion;
  m["system"] = c.system;
  m["split"] = split;
  m["seed"] = seed;
  m["sigma2"] = c.sigma2;
  m["dt"] = c.dt;
  json coeffs = json::object();
  const auto names = priors::family_coefficients(sys.kind);
  const auto values = sys.coefficients();
  for (std::size_t k = 0; k < names.size(); ++k) coeffs[names[k]] = values[k];
  m["coefficients"] = coeffs;
  json trs = json::array();
  for (std::size_t j = 0; j < data.size(); ++j) {
    const std::string file = trajectory_file(j);
    write_trajectory(dir / file, data[j]);
    trs.push_back({{"file", file}, {"input", input_to_json(data[j].input)}});
  }
  m["trajectories"] = trs;
  write_json(dir / "manifest.json", m);
}

/// Trajectories listed in `dir`/manifest.json.
inline std::vector<Trajectory> read_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no dataset manifest in '" + dir.string() + "'");
  const json m = read_json(dir / "manifest.json");
  if (!m.is_object() || m.value("schema_version", -1) != kSchemaVersion || !m.contains("trajectories") ||
      !m["trajectories"].is_array()) {
    throw SchemaError((dir / "manifest.json").string() + ": not a dataset manifest");
  }
  std::vector<Trajectory> out;
  for (const auto& t : m["trajectories"]) {
    if (!t.is_object() || !t.contains("file") || !t["file"].is_string()) {
      throw SchemaError((dir / "manifest.json").string() + ": trajectory entry without a file");
    }
    out.push_back(read_trajectory(dir / t["file"].get<std::string>()));
  }
  if (out.empty()) throw SchemaError((dir / "manifest.json").string() + ": no trajectories");
  for (const auto& tr : out) {
    if (tr.y.cols() != out.front().y.cols() || tr.u.cols() != out.front().u.cols()) {
      throw SchemaError(dir.string() + ": trajectories disagree on channel counts");
    }
  }
  return out;
}

inline json flat_to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  }
  return data;
}

inline Vector vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SchemaError(where + ": non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline json coefficients_json(const priors::ModelSpec& m) {
  json out = json::object();
  if (m.kind == priors::ModelKind::Parametric) {
    for (const auto& name : priors::family_coefficients(m.family)) out[name] = m.coefficient(name);
  }
  return out;
}

/// Trained-model file: the config it was built from, the scaler and every
/// parameter as a row-major array.
inline json learner_to_json(const ExperimentConfig& c, train::Learner& l) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["config"] = to_json(c);
  const auto& s = l.scaler;
  j["scaler"] = {{"y_mean", flat_to_json(s.y_mean)}, {"y_std", flat_to_json(s.y_std)},
                 {"u_mean", flat_to_json(s.u_mean)}, {"u_std", flat_to_json(s.u_std)},
                 {"x_mean", flat_to_json(s.x_mean)}, {"x_std", flat_to_json(s.x_std)}};
  json params = json::array();
  for (const ad::Param* p : l.parameters()) {
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()},
                      {"data", flat_to_json(p->value)}});
  }
  j["parameters"] = params;
  j["coefficients"] = coefficients_json(l.model);
  return j;
}

struct LoadedModel {
  ExperimentConfig config;
  train::Learner learner;
};

inline LoadedModel load_learner(const fs::path& path) {
  const json j = read_json(path);
  const std::string where = path.string();
  if (!j.is_object() || j.value("schema_version", -1) != kSchemaVersion || !j.contains("config") ||
      !j.contains("scaler") || !j.contains("parameters")) {
    throw SchemaError(where + ": not a model file");
  }
  LoadedModel out{from_json(j["config"]), {}};
  out.learner = train::make_untrained(to_experiment(out.config));
  const json& sj = j["scaler"];
  if (!sj.is_object()) throw SchemaError(where + ": scaler must be an object");
  auto field = [&](const char* key) {
    if (!sj.contains(key)) throw SchemaError(where + ": scaler." + key + " missing");
    return vector_from_json(sj[key], where + ": scaler." + key);
  };
  train::Scaler s{field("y_mean"), field("y_std"), field("u_mean"), field("u_std"), field("x_mean"), field("x_std")};
  if (s.x_mean.size() != out.learner.model.d_x || s.u_mean.size() != out.learner.model.d_u) {
    throw SchemaError(where + ": scaler does not match the model dimensions");
  }
  out.learner.apply_scaler(s);
  auto params = out.learner.parameters();
  const json& pj = j["parameters"];
  if (!pj.is_array() || pj.size() != params.size()) throw SchemaError(where + ": parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const json& e = pj[k];
    ad::Param& p = *params[k];
    if (!e.is_object() || e.value("name", std::string()) != p.name || e.value("rows", -1L) != p.value.rows() ||
        e.value("cols", -1L) != p.value.cols() || !e.contains("data")) {
      throw SchemaError(where + ": parameter '" + p.name + "' does not match the model");
    }
    const Vector flat = vector_from_json(e["data"], where + ": " + p.name);
    if (flat.size() != p.value.size()) throw SchemaError(where + ": parameter '" + p.name + "' has the wrong size");
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(i, c) = flat(i * p.value.cols() + c);
    }
  }
  out.learner.recog.after_update();
  return out;
}

inline json metrics_to_json(const train::MetricsReport& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["rmse_scale"] = "scaled";
  j["median"] = r.median;
  j["q1"] = r.q1;
  j["q3"] = r.q3;
  j["iqr"] = r.iqr();
  j["rmse"] = r.rmse;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  return j;
}

}  // namespace structnode::xcli
