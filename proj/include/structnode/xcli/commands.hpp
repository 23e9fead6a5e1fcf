#pragma once

#include <cstdlib>
#include <iostream>
#include <random>
#include <string>

#include "structnode/ekf/ekf.hpp"
#include "structnode/xcli/io.hpp"

namespace structnode::xcli {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

/// Level from STRUCTNODE_LOG (error, info, debug); info when unset.
inline LogLevel log_level() {
  const char* v = std::getenv("STRUCTNODE_LOG");
  if (!v) return LogLevel::Info;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

inline void log(LogLevel level, const std::string& msg) {
  if (level <= log_level()) std::cerr << "[structnode] " << msg << '\n';
}

enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kSchema = 3,
  kIo = 4,
  kPrecondition = 5,
  kTrainingDiverged = 6,
  kNumerical = 7,
};

/// Exit code for the exception currently being handled.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kSchema;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const PreconditionError*>(&e) || dynamic_cast<const OutOfDomainError*>(&e)) {
    return kPrecondition;
  }
  if (dynamic_cast<const TrainingError*>(&e)) return kTrainingDiverged;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const IntegrationError*>(&e)) return kNumerical;
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  return kFailure;
}

namespace detail {

inline void check_channels(const std::vector<Trajectory>& data, const train::Learner& l, const std::string& what) {
  const auto d_y = static_cast<Eigen::Index>(l.model.outputs.size());
  for (const auto& tr : data) {
    if (tr.y.cols() != d_y || tr.u.cols() != l.model.d_u) {
      throw SchemaError(what + ": dataset channels do not match the model (y " + std::to_string(tr.y.cols()) +
                        ", u " + std::to_string(tr.u.cols()) + ")");
    }
  }
}

inline fs::path model_path(const ExperimentConfig& c) { return fs::path(c.out) / "model.json"; }

}  // namespace detail

/// Training and test datasets under the dataset directory.
inline json run_generate(const ExperimentConfig& c) {
  const train::Experiment e = to_experiment(c);
  const fs::path dir = c.dataset_dir();
  auto train_data = train::generate(e, false);
  write_dataset(dir / "train", train_data, c, "train", e.seed);
  auto test_data = train::generate(e, true);
  write_dataset(dir / "test", test_data, c, "test", e.seed + train::kTestSeedOffset);
  log(LogLevel::Info, "generate: " + std::to_string(train_data.size()) + " training and " +
                          std::to_string(test_data.size()) + " test trajectories in " + dir.string());
  return {{"train", train_data.size()}, {"test", test_data.size()}, {"dir", dir.string()}};
}

inline json run_train(const ExperimentConfig& c) {
  const train::Experiment e = to_experiment(c);
  const auto data = read_dataset(fs::path(c.dataset_dir()) / "train");
  train::Learner l = train::make_learner(e, data);
  detail::check_channels(data, l, "train");
  train::TrainingConfig cfg = e.train;
  cfg.seed = e.seed + train::kTrainSeedOffset;
  const auto report = train::train(l, data, cfg, [](int epoch, double loss, double val) {
    log(LogLevel::Debug, "epoch " + std::to_string(epoch) + " loss " + format_double(loss) + " val " +
                             format_double(val));
  });
  ensure_dir(c.out);
  write_json(detail::model_path(c), learner_to_json(c, l));
  json m = metrics_to_json(report);
  m["coefficients"] = coefficients_json(l.model);
  write_json(fs::path(c.out) / "train_metrics.json", m);
  log(LogLevel::Info, "train: " + std::to_string(report.epochs_run) + " epochs, model in " +
                          detail::model_path(c).string());
  return m;
}

inline json run_eval(const ExperimentConfig& c) {
  auto lm = load_learner(detail::model_path(c));
  const auto test = read_dataset(fs::path(c.dataset_dir()) / "test");
  detail::check_channels(test, lm.learner, "eval");
  std::vector<Matrix> states;
  const auto report = train::evaluate_rmse(lm.learner, test, lm.config.substeps, &states);
  const fs::path pred_dir = fs::path(c.out) / "predictions";
  ensure_dir(pred_dir);
  for (std::size_t j = 0; j < test.size(); ++j) {
    write_text(pred_dir / trajectory_file(j),
               trajectory_csv(test[j].grid, train::outputs_of(lm.learner, states[j]), test[j].u, states[j]));
  }
  json m = metrics_to_json(report);
  m["coefficients"] = coefficients_json(lm.learner.model);
  write_json(fs::path(c.out) / "metrics.json", m);
  log(LogLevel::Info, "eval: median RMSE " + format_double(report.median) + " over " +
                          std::to_string(test.size()) + " trajectories");
  return m;
}

inline json run_ablate(const ExperimentConfig& c) {
  const auto axis = train::ablation_axis_from_string(c.ablate.axis);
  const train::Experiment base = to_experiment(c);
  if (c.ablate.values.empty()) throw SchemaError("config.ablate.values: must not be empty");
  json entries = json::array();
  for (double v : c.ablate.values) {
    const auto r = train::run_experiment(train::with_axis(base, axis, v)).test;
    json m = metrics_to_json(r);
    m.erase("schema_version");
    entries.push_back({{"value", v}, {"metrics", m}});
    log(LogLevel::Info, "ablate: " + c.ablate.axis + "=" + format_double(v) + " median RMSE " +
                            format_double(r.median));
  }
  json out = {{"schema_version", kSchemaVersion}, {"axis", c.ablate.axis}, {"entries", entries}};
  ensure_dir(c.out);
  write_json(fs::path(c.out) / "ablation.json", out);
  return out;
}

/// EKF with the trained model on test trajectories, compared with an
/// open-loop rollout from the same initial state.
inline json run_ekf(const ExperimentConfig& c) {
  auto lm = load_learner(detail::model_path(c));
  const auto test = read_dataset(fs::path(c.dataset_dir()) / "test");
  detail::check_channels(test, lm.learner, "ekf");
  const auto& model = lm.learner.model;
  const Eigen::Index d_x = model.d_x;
  const double r = c.ekf.r ? *c.ekf.r : std::max(lm.config.sigma2, 1e-6);
  ekf::EkfConfig cfg{c.ekf.q * Matrix::Identity(d_x, d_x),
                     r * Matrix::Identity(static_cast<Eigen::Index>(model.outputs.size()),
                                          static_cast<Eigen::Index>(model.outputs.size())),
                     lm.config.dt, model.outputs};
  std::mt19937_64 rng(c.seed + 41);
  std::normal_distribution<double> n01;
  const fs::path dir = fs::path(c.out) / "ekf";
  ensure_dir(dir);
  json trs = json::array();
  const auto count = std::min<std::size_t>(test.size(), static_cast<std::size_t>(c.ekf.trajectories));
  for (std::size_t j = 0; j < count; ++j) {
    const Trajectory& tr = test[j];
    Vector x0;
    const bool truth = tr.has_states() && tr.x.cols() <= d_x;
    if (truth) {
      x0 = model.norm.x_mean;
      x0.head(tr.x.cols()) = tr.x.row(0).transpose();
    } else {
      std::vector<const Trajectory*> one{&tr};
      x0 = train::predict_states(lm.learner, one, 1).front().row(0).transpose();
    }
    for (Eigen::Index i = 0; i < d_x; ++i) x0(i) += c.ekf.x0_perturbation * model.norm.x_std(i) * n01(rng);
    const Matrix est = ekf::run_filter(model, {x0, Matrix(model.norm.x_std.array().square().matrix().asDiagonal())},
                                       tr.grid, tr.y, tr.u, cfg, c.ekf.steps);
    Matrix open;
    try {
      std::optional<ode::SampledSignal> u;
      if (model.d_u > 0) u = tr.inputs();
      open = ode::integrate([&](double t, const Vector& x, const Vector& uu) { return priors::eval_field(model, t, x, uu); },
                            x0, tr.grid, u, lm.config.substeps);
    } catch (const IntegrationError& e) {
      throw NumericalError(std::string("ekf: open-loop rollout diverged: ") + e.what());
    }
    write_text(dir / trajectory_file(j), trajectory_csv(tr.grid, train::outputs_of(lm.learner, est), tr.u, est));
    json entry = {{"file", trajectory_file(j)},
                  {"ekf_output_rmse", train::scaled_rmse(lm.learner.scaler, train::outputs_of(lm.learner, est), tr.y)},
                  {"open_loop_output_rmse",
                   train::scaled_rmse(lm.learner.scaler, train::outputs_of(lm.learner, open), tr.y)}};
    if (truth) {
      const Eigen::Index k = tr.x.cols();
      auto state_rmse = [&](const Matrix& m) {
        return std::sqrt((m.leftCols(k) - tr.x).squaredNorm() / static_cast<double>(tr.x.size()));
      };
      entry["ekf_state_rmse"] = state_rmse(est);
      entry["open_loop_state_rmse"] = state_rmse(open);
    }
    trs.push_back(entry);
  }
  json out = {{"schema_version", kSchemaVersion}, {"q", c.ekf.q}, {"r", r}, {"trajectories", trs}};
  write_json(fs::path(c.out) / "ekf_metrics.json", out);
  log(LogLevel::Info, "ekf: filtered " + std::to_string(count) + " trajectories into " + dir.string());
  return out;
}

}  // namespace structnode::xcli
