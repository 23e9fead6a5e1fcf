#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "structnode/errors.hpp"
#include "structnode/trainer/experiment.hpp"

namespace structnode::xcli {

using json = nlohmann::ordered_json;
using Matrix = Eigen::MatrixXd;

inline constexpr int kSchemaVersion = 1;

struct AblationSettings {
  std::string axis = "t_c";
  std::vector<double> values;
};

struct EkfSettings {
  double q = 1e-4;
  std::optional<double> r;  // default: the dataset noise variance
  int steps = 1;            // filter steps per sample interval
  double x0_perturbation = 0.5;
  int trajectories = 10;
};

/// One experiment as stored in a JSON config file. Every field has a default;
/// system-dependent defaults are filled in by from_json.
struct ExperimentConfig {
  std::string system = "harmonic_oscillator";
  std::string structure = "free";
  std::string recognition = "kkl";
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string data_dir;  // empty: <out>/data

  Eigen::Index N = 50, n = 100, N_test = 100, n_test = 100;
  double dt = 0.03;
  double sigma2 = 0.0;
  int gen_substeps = 10;

  double t_c = 1.2;
  Eigen::Index d_z = 0;
  Eigen::Index d_omega = 3;
  double omega_c = 1.0;
  bool train_D = true;
  std::vector<int> psi_hidden = {50, 50};
  std::string forcing = "shared";  // KKLu only: shared | per_channel
  bool recognition_uses_input = true;

  std::vector<int> hidden = {50, 50};
  std::vector<Eigen::Index> outputs = {0};
  double lambda_res = 0.0;
  Matrix A_prior, B_prior;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  std::map<std::string, std::pair<double, double>> param_ranges;

  double lr = 0.005;
  bool lr_decay = false;
  double decay_factor = 0.99;
  int epochs = 100;
  int batch_size = 0;
  double val_fraction = 0.1;
  int patience = 0;
  int substeps = 1;
  int threads = 1;
  bool deterministic = false;

  AblationSettings ablate;
  EkfSettings ekf;

  std::string dataset_dir() const { return data_dir.empty() ? out + "/data" : data_dir; }
};

namespace detail {

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw SchemaError(where_ + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    check_type<T>(key, v);
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw SchemaError(path(key) + ": invalid value");
    }
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, v] : j_.items()) {
      if (!seen_.count(key)) throw SchemaError(path(key) + ": unknown key");
    }
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

 private:
  template <class T>
  void check_type(const std::string& key, const json& v) const {
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else if constexpr (std::is_unsigned_v<T>) {
      ok = v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer();
    } else {
      ok = v.is_array();
    }
    if (!ok) throw SchemaError(path(key) + ": wrong type");
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Matrix matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw SchemaError(where + ": expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw SchemaError(where + ": expected an array of rows");
    if (i == 0) m.resize(rows, static_cast<Eigen::Index>(row.size()));
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) throw SchemaError(where + ": ragged matrix");
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      const json& v = row[static_cast<std::size_t>(k)];
      if (!v.is_number()) throw SchemaError(where + ": non-numeric entry");
      m(i, k) = v.get<double>();
    }
  }
  return m;
}

inline json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    out.push_back(std::move(row));
  }
  return out;
}

// Pairs of coordinates (i, j) with ẋ_i = x_j that the families share.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> default_pairs(priors::Family f) {
  switch (f) {
    case priors::Family::HarmonicOscillator:
    case priors::Family::VanDerPol: return {{0, 1}};
    case priors::Family::Earthquake: return {{0, 1}, {2, 3}};
    case priors::Family::FitzHughNagumo: return {};
  }
  return {};
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw SchemaError(what);
}

}  // namespace detail

inline ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  detail::Reader r(j, "config");
  int version = -1;
  r.get("schema_version", version);
  if (version != kSchemaVersion) {
    throw SchemaError("config.schema_version: expected " + std::to_string(kSchemaVersion));
  }
  r.get("system", c.system);
  const auto family = [&] {
    try {
      return priors::family_from_string(c.system);
    } catch (const ConfigError& e) {
      throw SchemaError(std::string("config.system: ") + e.what());
    }
  }();
  c.sigma2 = bench::default_noise(family);
  c.recognition_uses_input = family != priors::Family::Earthquake;
  c.pairs = detail::default_pairs(family);

  r.get("structure", c.structure);
  r.get("recognition", c.recognition);
  try {
    priors::model_kind_from_string(c.structure);
    obs::recognition_kind_from_string(c.recognition);
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  r.get("seed", c.seed);
  r.get("out", c.out);
  r.get("data_dir", c.data_dir);
  r.get("N", c.N);
  r.get("n", c.n);
  r.get("N_test", c.N_test);
  r.get("n_test", c.n_test);
  r.get("dt", c.dt);
  r.get("sigma2", c.sigma2);
  r.get("gen_substeps", c.gen_substeps);
  r.get("t_c", c.t_c);
  r.get("d_z", c.d_z);
  r.get("d_omega", c.d_omega);
  r.get("omega_c", c.omega_c);
  r.get("train_D", c.train_D);
  r.get("psi_hidden", c.psi_hidden);
  r.get("forcing", c.forcing);
  detail::require(c.forcing == "shared" || c.forcing == "per_channel",
                  r.path("forcing") + ": expected \"shared\" or \"per_channel\"");
  r.get("recognition_uses_input", c.recognition_uses_input);
  r.get("hidden", c.hidden);
  r.get("outputs", c.outputs);
  r.get("lambda_res", c.lambda_res);
  if (const json* a = r.sub("A_prior")) c.A_prior = detail::matrix_from_json(*a, r.path("A_prior"));
  if (const json* b = r.sub("B_prior")) c.B_prior = detail::matrix_from_json(*b, r.path("B_prior"));
  if (const json* p = r.sub("pairs")) {
    detail::require(p->is_array(), r.path("pairs") + ": expected an array");
    c.pairs.clear();
    for (const auto& e : *p) {
      detail::require(e.is_array() && e.size() == 2 && e[0].is_number_integer() && e[1].is_number_integer(),
                      r.path("pairs") + ": expected [i, j] entries");
      c.pairs.emplace_back(e[0].get<Eigen::Index>(), e[1].get<Eigen::Index>());
    }
  }
  if (const json* p = r.sub("param_ranges")) {
    detail::require(p->is_object(), r.path("param_ranges") + ": expected an object");
    for (const auto& [name, v] : p->items()) {
      detail::require(v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number(),
                      r.path("param_ranges") + "." + name + ": expected [lo, hi]");
      c.param_ranges[name] = {v[0].get<double>(), v[1].get<double>()};
    }
  }
  r.get("lr", c.lr);
  r.get("lr_decay", c.lr_decay);
  r.get("decay_factor", c.decay_factor);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("val_fraction", c.val_fraction);
  r.get("patience", c.patience);
  r.get("substeps", c.substeps);
  r.get("threads", c.threads);
  r.get("deterministic", c.deterministic);
  if (const json* a = r.sub("ablate")) {
    detail::Reader ra(*a, "config.ablate");
    ra.get("axis", c.ablate.axis);
    ra.get("values", c.ablate.values);
    ra.finish();
  }
  if (const json* e = r.sub("ekf")) {
    detail::Reader re(*e, "config.ekf");
    re.get("q", c.ekf.q);
    double rv = -1.0;
    re.get("r", rv);
    if (e->contains("r")) c.ekf.r = rv;
    re.get("steps", c.ekf.steps);
    re.get("x0_perturbation", c.ekf.x0_perturbation);
    re.get("trajectories", c.ekf.trajectories);
    re.finish();
  }
  r.finish();

  using detail::require;
  require(c.N >= 1, "config.N: must be >= 1");
  require(c.N_test >= 1, "config.N_test: must be >= 1");
  require(c.n >= 2 && c.n_test >= 2, "config.n: trajectories need at least 2 samples");
  require(c.dt > 0.0, "config.dt: must be > 0");
  require(c.sigma2 >= 0.0, "config.sigma2: must be >= 0");
  require(c.gen_substeps >= 1 && c.substeps >= 1, "config.substeps: must be >= 1");
  require(c.t_c >= 0.0, "config.t_c: must be >= 0");
  require(c.d_z >= 0 && c.d_omega >= 0, "config.d_z: must be >= 0");
  require(c.omega_c > 0.0, "config.omega_c: must be > 0");
  require(c.lr > 0.0, "config.lr: must be > 0");
  require(c.decay_factor > 0.0 && c.decay_factor <= 1.0, "config.decay_factor: must be in (0, 1]");
  require(c.epochs >= 0, "config.epochs: must be >= 0");
  require(c.batch_size >= 0, "config.batch_size: must be >= 0");
  require(c.val_fraction >= 0.0 && c.val_fraction < 1.0, "config.val_fraction: must be in [0, 1)");
  require(c.patience >= 0, "config.patience: must be >= 0");
  require(c.threads >= 1, "config.threads: must be >= 1");
  require(c.lambda_res >= 0.0, "config.lambda_res: must be >= 0");
  require(!c.outputs.empty(), "config.outputs: must not be empty");
  require(c.ekf.q >= 0.0 && c.ekf.steps >= 1 && c.ekf.trajectories >= 1, "config.ekf: invalid settings");
  require(!c.ekf.r || *c.ekf.r > 0.0, "config.ekf.r: must be > 0");
  try {
    train::ablation_axis_from_string(c.ablate.axis);
  } catch (const ConfigError& e) {
    throw SchemaError(std::string("config.ablate.axis: ") + e.what());
  }
  return c;
}

/// Parses a config file; syntax errors report line and column.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw SchemaError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
  }
  return from_json(j);
}

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["system"] = c.system;
  j["structure"] = c.structure;
  j["recognition"] = c.recognition;
  j["seed"] = c.seed;
  j["out"] = c.out;
  if (!c.data_dir.empty()) j["data_dir"] = c.data_dir;
  j["N"] = c.N;
  j["n"] = c.n;
  j["N_test"] = c.N_test;
  j["n_test"] = c.n_test;
  j["dt"] = c.dt;
  j["sigma2"] = c.sigma2;
  j["gen_substeps"] = c.gen_substeps;
  j["t_c"] = c.t_c;
  j["d_z"] = c.d_z;
  j["d_omega"] = c.d_omega;
  j["omega_c"] = c.omega_c;
  j["train_D"] = c.train_D;
  j["psi_hidden"] = c.psi_hidden;
  j["forcing"] = c.forcing;
  j["recognition_uses_input"] = c.recognition_uses_input;
  j["hidden"] = c.hidden;
  j["outputs"] = c.outputs;
  j["lambda_res"] = c.lambda_res;
  if (c.A_prior.size() > 0) j["A_prior"] = detail::matrix_to_json(c.A_prior);
  if (c.B_prior.size() > 0) j["B_prior"] = detail::matrix_to_json(c.B_prior);
  json pairs = json::array();
  for (const auto& [a, b] : c.pairs) pairs.push_back({a, b});
  j["pairs"] = pairs;
  if (!c.param_ranges.empty()) {
    json pr = json::object();
    for (const auto& [name, r] : c.param_ranges) pr[name] = {r.first, r.second};
    j["param_ranges"] = pr;
  }
  j["lr"] = c.lr;
  j["lr_decay"] = c.lr_decay;
  j["decay_factor"] = c.decay_factor;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["val_fraction"] = c.val_fraction;
  j["patience"] = c.patience;
  j["substeps"] = c.substeps;
  j["threads"] = c.threads;
  j["deterministic"] = c.deterministic;
  j["ablate"] = {{"axis", c.ablate.axis}, {"values", c.ablate.values}};
  json e = {{"q", c.ekf.q},
            {"steps", c.ekf.steps},
            {"x0_perturbation", c.ekf.x0_perturbation},
            {"trajectories", c.ekf.trajectories}};
  if (c.ekf.r) e["r"] = *c.ekf.r;
  j["ekf"] = e;
  return j;
}

/// The in-memory experiment described by a config.
inline train::Experiment to_experiment(const ExperimentConfig& c) {
  const auto family = priors::family_from_string(c.system);
  train::Experiment e = train::Experiment::preset(family);
  e.sigma2 = c.sigma2;
  e.dt = c.dt;
  e.N = c.N;
  e.n = c.n;
  e.N_test = c.N_test;
  e.n_test = c.n_test;
  e.gen_substeps = c.gen_substeps;
  e.seed = c.seed;
  e.recognition_uses_input = c.recognition_uses_input;

  auto& m = e.model;
  m.kind = priors::model_kind_from_string(c.structure);
  m.family = family;
  m.outputs = c.outputs;
  m.hidden = c.hidden;
  m.lambda_res = c.lambda_res;
  m.pair_map = c.pairs;
  for (const auto& [name, r] : c.param_ranges) m.param_ranges.push_back({name, r.first, r.second});
  if (m.kind == priors::ModelKind::ResidualOnPrior) {
    const auto [d_x, d_u] = priors::family_dims(family);
    m.A_prior = c.A_prior.size() > 0 ? c.A_prior : Matrix(Matrix::Zero(d_x, d_x));
    m.B_prior = c.B_prior.size() > 0 ? c.B_prior : Matrix(Matrix::Zero(d_x, d_u));
  }

  auto& r = e.recog;
  r.kind = obs::recognition_kind_from_string(c.recognition);
  r.t_c = c.t_c;
  r.dt = c.dt;
  r.d_z = c.d_z;
  r.d_omega = c.d_omega;
  r.omega_c = c.omega_c;
  r.train_D = c.train_D;
  r.psi_hidden = c.psi_hidden;
  r.forcing = c.forcing == "per_channel" ? obs::Forcing::PerChannel : obs::Forcing::Shared;

  auto& t = e.train;
  t.lr = c.lr;
  t.decay = c.lr_decay;
  t.decay_factor = c.decay_factor;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.val_fraction = c.val_fraction;
  t.patience = c.patience;
  t.substeps = c.substeps;
  t.threads = c.threads;
  t.deterministic = c.deterministic;
  return e;
}

}  // namespace structnode::xcli
