#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "structnode/benchsys/systems.hpp"
#include "structnode/observers/recognition.hpp"
#include "structnode/priors/model.hpp"
#include "structnode/trainer/trainer.hpp"

namespace structnode::train {

/// Everything needed to generate data, train and evaluate one setting.
struct Experiment {
  bench::BenchmarkSystem system;
  bench::InputRanges inputs;
  double sigma2 = 0.0;
  double dt = 0.03;
  Eigen::Index N = 50;
  Eigen::Index n = 100;
  Eigen::Index N_test = 100;
  Eigen::Index n_test = 100;
  int gen_substeps = 10;
  priors::ModelOptions model;
  obs::RecognitionOptions recog;
  bool recognition_uses_input = true;
  TrainingConfig train;
  std::uint64_t seed = 0;

  /// Benchmark defaults for a system.
  static Experiment preset(priors::Family f) {
    Experiment e;
    e.system.kind = f;
    e.inputs = bench::default_inputs(f);
    e.sigma2 = bench::default_noise(f);
    e.model.family = f;
    e.recog.t_c = 1.2;
    e.recog.dt = e.dt;
    e.recognition_uses_input = f != priors::Family::Earthquake;
    return e;
  }
};

// Seed offsets of the random streams derived from Experiment::seed.
inline constexpr std::uint64_t kTestSeedOffset = 1000003;
inline constexpr std::uint64_t kInitSeedOffset = 17;
inline constexpr std::uint64_t kTrainSeedOffset = 29;

inline std::vector<Trajectory> generate(const Experiment& e, bool test) {
  bench::DatasetOptions o;
  o.inputs = e.inputs;
  o.noise = {e.sigma2, test ? e.seed + kTestSeedOffset : e.seed};
  o.N = test ? e.N_test : e.N;
  o.grid = {0.0, e.dt, test ? e.n_test : e.n};
  o.x0 = bench::BoxSampler::unit(e.system.d_x());
  o.substeps = e.gen_substeps;
  o.threads = e.train.deterministic ? 1 : e.train.threads;
  return bench::generate_dataset(e.system, o);
}

/// Fresh model and recognition sized for the experiment, identity scaling.
inline Learner make_untrained(const Experiment& e) {
  std::mt19937_64 rng(e.seed + kInitSeedOffset);
  Learner l;
  l.model = priors::make_model(e.model, rng);
  l.recognition_uses_input = e.recognition_uses_input;
  obs::RecognitionOptions ro = e.recog;
  ro.dt = e.dt;
  const Eigen::Index d_u_recog = e.recognition_uses_input ? l.model.d_u : 0;
  l.recog = obs::Recognition(ro, {l.model.d_x, static_cast<Eigen::Index>(l.model.outputs.size()), d_u_recog},
                             rng);
  return l;
}

/// Appended coefficient rows of an ExtendedState model are scaled like a
/// uniform draw from the coefficient's initialization range.
inline void scale_extended_rows(const priors::ModelOptions& o, const priors::ModelSpec& m, Scaler& s) {
  const Eigen::Index k = m.extended_dim();
  if (k == 0) return;
  auto ranges = o.param_ranges.empty() ? priors::default_param_ranges(o.family) : o.param_ranges;
  const auto names = priors::family_coefficients(o.family);
  for (Eigen::Index i = 0; i < k; ++i) {
    const std::string& name = names[static_cast<std::size_t>(i)];
    auto it = std::find_if(ranges.begin(), ranges.end(), [&](const auto& r) {
      return r.name == name || (name == "omega2" && r.name == "omega");
    });
    if (it == ranges.end()) continue;
    double lo = it->lo, hi = it->hi;
    if (it->name != name) {
      lo *= lo;
      hi *= hi;
    }
    const Eigen::Index row = m.d_x - k + i;
    s.x_mean(row) = 0.5 * (lo + hi);
    s.x_std(row) = std::max((hi - lo) / std::sqrt(12.0), kStdFloor);
  }
}

/// make_untrained with the scaler fitted on the training data.
inline Learner make_learner(const Experiment& e, const std::vector<Trajectory>& train_data) {
  Learner l = make_untrained(e);
  Scaler s = fit_scaler(train_data, l.model.outputs, l.model.d_x);
  scale_extended_rows(e.model, l.model, s);
  l.apply_scaler(s);
  return l;
}

struct ExperimentResult {
  Learner learner;
  MetricsReport training;  // loss curves
  MetricsReport test;      // RMSE on held-out trajectories
};

inline ExperimentResult run_experiment(const Experiment& e, const EpochCallback& on_epoch = {}) {
  auto train_data = generate(e, false);
  auto test_data = generate(e, true);
  ExperimentResult r{make_learner(e, train_data), {}, {}};
  TrainingConfig cfg = e.train;
  cfg.seed = e.seed + kTrainSeedOffset;
  r.training = train(r.learner, train_data, cfg, on_epoch);
  r.test = evaluate_rmse(r.learner, test_data, cfg.substeps);
  r.test.train_loss = r.training.train_loss;
  r.test.val_loss = r.training.val_loss;
  r.test.epochs_run = r.training.epochs_run;
  r.test.best_epoch = r.training.best_epoch;
  return r;
}

enum class AblationAxis { WindowSteps, NoiseVariance };

inline std::string to_string(AblationAxis a) {
  return a == AblationAxis::WindowSteps ? "t_c" : "sigma2";
}

inline AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "t_c" || s == "tc") return AblationAxis::WindowSteps;
  if (s == "sigma2" || s == "noise") return AblationAxis::NoiseVariance;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

/// Experiment with one axis set to `value` (t_c in sample steps, or σ²_ε).
inline Experiment with_axis(const Experiment& base, AblationAxis axis, double value) {
  Experiment e = base;
  if (axis == AblationAxis::WindowSteps) {
    if (value < 0.0 || value != std::floor(value)) throw ConfigError("ablate: t_c must be a whole number of steps");
    e.recog.t_c = value * e.dt;
  } else {
    if (value < 0.0) throw ConfigError("ablate: noise variance must be >= 0");
    e.sigma2 = value;
  }
  return e;
}

/// One full train + evaluate per value, all with the base seed.
inline std::vector<MetricsReport> ablate(AblationAxis axis, const std::vector<double>& values,
                                         const Experiment& base) {
  if (values.empty()) throw ConfigError("ablate: no values");
  std::vector<MetricsReport> out;
  for (double v : values) out.push_back(run_experiment(with_axis(base, axis, v)).test);
  return out;
}

}  // namespace structnode::train
