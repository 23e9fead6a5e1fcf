#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "structnode/benchsys/systems.hpp"
#include "structnode/diffcore/adam.hpp"
#include "structnode/diffcore/tape.hpp"
#include "structnode/observers/recognition.hpp"
#include "structnode/odesolve/rk4.hpp"
#include "structnode/priors/model.hpp"

namespace structnode::train {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ad::Tape;
using ad::Var;
using bench::Trajectory;

inline constexpr double kStdFloor = 1e-8;

/// Channel-wise affine scaling of outputs, inputs and states.
struct Scaler {
  Vector y_mean, y_std, u_mean, u_std, x_mean, x_std;

  Matrix scale_y(const Matrix& y) const { return scale(y, y_mean, y_std); }
  Matrix unscale_y(const Matrix& y) const { return unscale(y, y_mean, y_std); }
  Matrix scale_u(const Matrix& u) const { return scale(u, u_mean, u_std); }
  Matrix unscale_u(const Matrix& u) const { return unscale(u, u_mean, u_std); }
  Matrix scale_x(const Matrix& x) const { return scale(x, x_mean, x_std); }
  Matrix unscale_x(const Matrix& x) const { return unscale(x, x_mean, x_std); }

  // Rows are samples, columns channels.
  static Matrix scale(const Matrix& v, const Vector& mean, const Vector& std) {
    return (v.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
  }
  static Matrix unscale(const Matrix& v, const Vector& mean, const Vector& std) {
    return (v.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array();
  }
};

namespace detail {

inline std::pair<Vector, Vector> moments(const std::vector<const Matrix*>& blocks, Eigen::Index channels) {
  Vector mean = Vector::Zero(channels), sq = Vector::Zero(channels);
  double count = 0.0;
  for (const Matrix* b : blocks) {
    mean += b->colwise().sum().transpose();
    count += static_cast<double>(b->rows());
  }
  if (count == 0.0) return {Vector::Zero(channels), Vector::Ones(channels)};
  mean /= count;
  for (const Matrix* b : blocks) sq += (b->rowwise() - mean.transpose()).colwise().squaredNorm().transpose();
  Vector std = (sq / count).cwiseSqrt().cwiseMax(kStdFloor);
  return {mean, std};
}

}  // namespace detail

/// Moments of y and u over all samples; measured state channels reuse the y
/// scaler, other state channels take the mean of the y scalers.
inline Scaler fit_scaler(const std::vector<Trajectory>& data, const std::vector<Eigen::Index>& outputs,
                         Eigen::Index d_x) {
  if (data.empty()) throw ConfigError("fit_scaler: empty dataset");
  const Eigen::Index d_y = data.front().y.cols(), d_u = data.front().u.cols();
  if (static_cast<Eigen::Index>(outputs.size()) != d_y) {
    throw ConfigError("fit_scaler: output map does not match the output channels");
  }
  std::vector<const Matrix*> ys, us;
  for (const auto& tr : data) {
    if (tr.y.cols() != d_y || tr.u.cols() != d_u) throw ConfigError("fit_scaler: inconsistent channels");
    ys.push_back(&tr.y);
    us.push_back(&tr.u);
  }
  Scaler s;
  std::tie(s.y_mean, s.y_std) = detail::moments(ys, d_y);
  std::tie(s.u_mean, s.u_std) = detail::moments(us, d_u);
  s.x_mean = Vector::Constant(d_x, s.y_mean.mean());
  s.x_std = Vector::Constant(d_x, s.y_std.mean());
  for (Eigen::Index k = 0; k < d_y; ++k) {
    const Eigen::Index i = outputs[static_cast<std::size_t>(k)];
    if (i < 0 || i >= d_x) throw ConfigError("fit_scaler: output index out of range");
    s.x_mean(i) = s.y_mean(k);
    s.x_std(i) = s.y_std(k);
  }
  return s;
}

/// 1/(2 d_y n N) Σ_j Σ_i ‖ŷ_j(t_i) − y_j(t_i)‖². Each matrix is n x d_y.
inline double output_loss(const std::vector<Matrix>& pred, const std::vector<Matrix>& measured) {
  if (pred.size() != measured.size() || pred.empty()) throw UsageError("output_loss: batch mismatch");
  const Eigen::Index n = pred.front().rows(), d_y = pred.front().cols();
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (pred[j].rows() != n || pred[j].cols() != d_y || measured[j].rows() != n ||
        measured[j].cols() != d_y) {
      throw UsageError("output_loss: shape mismatch");
    }
    sum += (pred[j] - measured[j]).squaredNorm();
  }
  return sum / (2.0 * static_cast<double>(d_y * n) * static_cast<double>(pred.size()));
}

struct TrainingConfig {
  double lr = 0.005;
  bool decay = false;
  double decay_factor = 0.99;
  int epochs = 100;
  int batch_size = 0;  // 0 = all training trajectories
  double val_fraction = 0.1;
  int patience = 0;  // 0 = no early stopping
  int substeps = 1;
  int threads = 1;
  bool deterministic = false;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  std::vector<double> rmse;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  std::vector<double> train_loss, val_loss;
  int epochs_run = 0;
  int best_epoch = -1;

  double iqr() const { return q3 - q1; }
};

/// Linear-interpolated quantile of unsorted values.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw UsageError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline void summarize(MetricsReport& r) {
  r.median = quantile(r.rmse, 0.5);
  r.q1 = quantile(r.rmse, 0.25);
  r.q3 = quantile(r.rmse, 0.75);
}

/// Dynamics model, recognition model and the scaler tying them to data.
struct Learner {
  priors::ModelSpec model;
  obs::Recognition recog;
  Scaler scaler;
  bool recognition_uses_input = true;

  std::vector<ad::Param*> parameters() {
    auto out = model.parameters();
    for (ad::Param* p : recog.parameters()) out.push_back(p);
    return out;
  }

  /// Makes the model's network normalization follow the scaler.
  void apply_scaler(const Scaler& s) {
    scaler = s;
    model.norm = {s.x_mean, s.x_std, s.u_mean, s.u_std};
  }
};

/// Trajectories of one mini-batch laid out for the tape.
struct Batch {
  ode::BatchSignal y_scaled;  // d_y x B
  ode::BatchSignal u_scaled;  // d_u x B
  ode::BatchSignal u;         // physical
  Eigen::Index size = 0;
};

inline Batch make_batch(const Learner& l, const std::vector<const Trajectory*>& trs) {
  std::vector<ode::SampledSignal> ys, us, ups;
  ys.reserve(trs.size());
  us.reserve(trs.size());
  ups.reserve(trs.size());
  for (const Trajectory* tr : trs) {
    ys.push_back({tr->grid, l.scaler.scale_y(tr->y)});
    us.push_back({tr->grid, l.scaler.scale_u(tr->u)});
    ups.push_back({tr->grid, tr->u});
  }
  auto ptrs = [](const std::vector<ode::SampledSignal>& v) {
    std::vector<const ode::SampledSignal*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
  };
  Batch b;
  b.y_scaled = ode::BatchSignal::stack(ptrs(ys));
  b.u_scaled = ode::BatchSignal::stack(ptrs(us));
  b.u = ode::BatchSignal::stack(ptrs(ups));
  b.size = static_cast<Eigen::Index>(trs.size());
  return b;
}

/// x(0) in physical units for a batch.
inline Var estimate_x0(const Learner& l, Tape& t, const Batch& b) {
  const bool with_u = l.recognition_uses_input && l.model.d_u > 0;
  Var psi = l.recog.estimate(t, b.y_scaled, with_u ? &b.u_scaled : nullptr);
  return t.constant(l.scaler.x_mean) + t.constant(l.scaler.x_std) * psi;
}

/// States at every grid time from x0 under the model.
inline std::vector<Var> rollout(const Learner& l, Tape& t, Var x0, const Batch& b, int substeps) {
  const auto& m = l.model;
  auto field = [&](double time, const Var& x, const Matrix& u) {
    std::optional<Var> uv;
    if (m.d_u > 0) uv = t.constant(u);
    return priors::eval_field(m, t, time, x, uv);
  };
  auto input = [&](double time) { return m.d_u > 0 ? b.u.at(time) : Matrix(); };
  return ode::integrate_states(field, x0, b.y_scaled.grid, input, substeps);
}

/// Scaled predicted outputs at one time (d_y x B).
inline Var scaled_outputs(const Learner& l, Tape& t, Var x) {
  std::vector<Var> rows;
  for (Eigen::Index i : l.model.outputs) rows.push_back(ad::row(x, i));
  Var y = rows.size() == 1 ? rows.front() : ad::vcat(rows);
  return (y - t.constant(l.scaler.y_mean)) * t.constant(l.scaler.y_std.cwiseInverse());
}

/// Training objective of a batch; `weight` rescales it for chunked batches.
inline Var batch_loss(const Learner& l, Tape& t, const Batch& b, int substeps, double norm_batch) {
  Var x0 = estimate_x0(l, t, b);
  auto xs = rollout(l, t, x0, b, substeps);
  const auto n = static_cast<Eigen::Index>(xs.size());
  const auto d_y = static_cast<double>(l.model.outputs.size());
  Var sum = t.constant(Matrix::Zero(1, 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    Var r = scaled_outputs(l, t, xs[static_cast<std::size_t>(i)]) -
            t.constant(b.y_scaled.samples[static_cast<std::size_t>(i)]);
    sum = sum + ad::sum_squares(r);
  }
  Var loss = (1.0 / (2.0 * d_y * static_cast<double>(n) * norm_batch)) * sum;
  if (l.model.kind == priors::ModelKind::ResidualOnPrior && l.model.lambda_res > 0.0) {
    // λ·mean‖f_θ‖² over every visited state, weighted like the data term.
    Var pen = t.constant(Matrix::Zero(1, 1));
    for (Eigen::Index i = 0; i < n; ++i) {
      std::optional<Var> uv;
      if (l.model.d_u > 0) uv = t.constant(b.u.samples[static_cast<std::size_t>(i)]);
      pen = pen + priors::residual_penalty(l.model, t, xs[static_cast<std::size_t>(i)], uv);
    }
    loss = loss + (static_cast<double>(b.size) / (static_cast<double>(n) * norm_batch)) * pen;
  }
  return loss;
}

namespace detail {

inline std::vector<std::vector<const Trajectory*>> split_chunks(const std::vector<const Trajectory*>& trs,
                                                                int parts) {
  parts = std::max(1, std::min<int>(parts, static_cast<int>(trs.size())));
  std::vector<std::vector<const Trajectory*>> out(static_cast<std::size_t>(parts));
  for (std::size_t j = 0; j < trs.size(); ++j) {
    out[j * static_cast<std::size_t>(parts) / trs.size()].push_back(trs[j]);
  }
  return out;
}

// Loss and gradients of a batch, optionally split across threads. Chunk
// results are summed in chunk order.
inline double loss_and_grads(Learner& l, const std::vector<const Trajectory*>& trs, int substeps,
                             int threads, std::vector<ad::Param*>& params, std::vector<Matrix>* grads) {
  auto chunks = split_chunks(trs, threads);
  const double norm_batch = static_cast<double>(trs.size());
  std::vector<double> losses(chunks.size(), 0.0);
  std::vector<std::vector<Matrix>> chunk_grads(chunks.size());
  std::vector<std::exception_ptr> errors(chunks.size());
  auto work = [&](std::size_t c) {
    try {
      Batch b = make_batch(l, chunks[c]);
      Tape t;
      Var loss = batch_loss(l, t, b, substeps, norm_batch);
      losses[c] = loss.scalar();
      if (grads) {
        t.backward(loss);
        for (ad::Param* p : params) chunk_grads[c].push_back(t.grad(*p));
      }
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (chunks.size() == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t c = 0; c < chunks.size(); ++c) pool.emplace_back(work, c);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double loss = 0.0;
  for (double v : losses) loss += v;
  if (grads) {
    *grads = chunk_grads.front();
    for (std::size_t c = 1; c < chunks.size(); ++c) {
      for (std::size_t k = 0; k < grads->size(); ++k) (*grads)[k] += chunk_grads[c][k];
    }
  }
  return loss;
}

inline std::vector<Matrix> snapshot(const std::vector<ad::Param*>& params) {
  std::vector<Matrix> out;
  for (const ad::Param* p : params) out.push_back(p->value);
  return out;
}

inline void restore(const std::vector<ad::Param*>& params, const std::vector<Matrix>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
}

}  // namespace detail

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Joint optimization of dynamics and recognition on whole trajectories.
/// The scaler must already be applied to the learner.
inline MetricsReport train(Learner& l, const std::vector<Trajectory>& data, const TrainingConfig& cfg,
                           const EpochCallback& on_epoch = {}) {
  if (!(cfg.lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (data.empty()) throw ConfigError("train: empty dataset");
  for (const auto& tr : data) {
    if (tr.grid.n < l.recog.window_samples()) {
      throw PreconditionError("train: recognition window longer than a training trajectory");
    }
  }
  MetricsReport report;
  if (cfg.epochs == 0) return report;

  std::mt19937_64 rng(cfg.seed);
  std::vector<const Trajectory*> all;
  for (const auto& tr : data) all.push_back(&tr);
  std::shuffle(all.begin(), all.end(), rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(all.size())));
  if (n_val >= all.size()) n_val = 0;
  std::vector<const Trajectory*> val(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<const Trajectory*> fit(all.begin() + static_cast<std::ptrdiff_t>(n_val), all.end());

  auto params = l.parameters();
  ad::Adam opt(params);
  const int threads = cfg.deterministic ? 1 : std::max(1, cfg.threads);
  const std::size_t bs = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : fit.size();
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_values;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(fit.begin(), fit.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < fit.size(); start += bs) {
      std::vector<const Trajectory*> batch(fit.begin() + static_cast<std::ptrdiff_t>(start),
                                           fit.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, fit.size())));
      std::vector<Matrix> grads;
      double loss = 0.0;
      try {
        loss = detail::loss_and_grads(l, batch, cfg.substeps, threads, params, &grads);
      } catch (const IntegrationError& e) {
        throw TrainingError("train: epoch " + std::to_string(epoch) + ", batch at " +
                            std::to_string(start) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch at " +
                            std::to_string(start));
      }
      try {
        opt.step(grads, lr);
      } catch (const TrainingError& e) {
        throw TrainingError("train: epoch " + std::to_string(epoch) + ": " + e.what());
      }
      l.recog.after_update();
      epoch_loss += loss * static_cast<double>(batch.size());
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(fit.size()));
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val.empty()) {
      try {
        val_loss = detail::loss_and_grads(l, val, cfg.substeps, threads, params, nullptr);
      } catch (const IntegrationError&) {
        val_loss = std::numeric_limits<double>::infinity();
      }
      report.val_loss.push_back(val_loss);
      if (val_loss < best) {
        best = val_loss;
        best_values = detail::snapshot(params);
        report.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    report.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(epoch, report.train_loss.back(), val_loss);
    if (cfg.decay) lr *= cfg.decay_factor;
    if (cfg.patience > 0 && !val.empty() && since_best >= cfg.patience) break;
  }
  if (!best_values.empty()) detail::restore(params, best_values);
  return report;
}

/// Predicted states (n x d_x) for each trajectory, x(0) from recognition.
inline std::vector<Matrix> predict_states(const Learner& l, const std::vector<const Trajectory*>& trs,
                                          int substeps = 1) {
  for (const Trajectory* tr : trs) {
    if (tr->grid.n < l.recog.window_samples()) {
      throw PreconditionError("predict: recognition window longer than a test trajectory");
    }
  }
  Batch b = make_batch(l, trs);
  Tape t;
  auto xs = rollout(l, t, estimate_x0(l, t, b), b, substeps);
  std::vector<Matrix> out(trs.size(), Matrix(static_cast<Eigen::Index>(xs.size()), l.model.d_x));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Matrix& v = xs[i].value();
    for (std::size_t j = 0; j < trs.size(); ++j) {
      out[j].row(static_cast<Eigen::Index>(i)) = v.col(static_cast<Eigen::Index>(j)).transpose();
    }
  }
  return out;
}

/// Physical outputs (n x d_y) from predicted states.
inline Matrix outputs_of(const Learner& l, const Matrix& states) {
  Matrix y(states.rows(), static_cast<Eigen::Index>(l.model.outputs.size()));
  for (std::size_t k = 0; k < l.model.outputs.size(); ++k) {
    y.col(static_cast<Eigen::Index>(k)) = states.col(l.model.outputs[k]);
  }
  return y;
}

/// Root mean square of scaled output errors over a whole trajectory.
inline double scaled_rmse(const Scaler& s, const Matrix& pred_y, const Matrix& y) {
  if (pred_y.rows() != y.rows() || pred_y.cols() != y.cols()) throw UsageError("rmse: shape mismatch");
  Matrix d = s.scale_y(pred_y) - s.scale_y(y);
  return std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
}

/// Per-trajectory prediction RMSE over scaled outputs with median and IQR.
inline MetricsReport evaluate_rmse(const Learner& l, const std::vector<Trajectory>& test, int substeps = 1,
                                   std::vector<Matrix>* predictions = nullptr) {
  if (test.empty()) throw ConfigError("evaluate_rmse: no test trajectories");
  std::vector<const Trajectory*> trs;
  for (const auto& tr : test) trs.push_back(&tr);
  MetricsReport r;
  std::vector<Matrix> states;
  try {
    states = predict_states(l, trs, substeps);
  } catch (const IntegrationError& e) {
    throw NumericalError(std::string("evaluate_rmse: prediction diverged: ") + e.what());
  }
  for (std::size_t j = 0; j < trs.size(); ++j) {
    r.rmse.push_back(scaled_rmse(l.scaler, outputs_of(l, states[j]), trs[j]->y));
  }
  summarize(r);
  if (predictions) *predictions = std::move(states);
  return r;
}

}  // namespace structnode::train
