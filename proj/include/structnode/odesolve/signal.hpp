#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "structnode/errors.hpp"

namespace structnode::ode {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Uniform sample times t_i = t0 + i·dt, i = 0..n-1.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 1.0;
  Eigen::Index n = 2;

  double time(Eigen::Index i) const { return t0 + static_cast<double>(i) * dt; }
  double t_end() const { return time(n - 1); }
  double duration() const { return t_end() - t0; }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("TimeGrid: dt must be positive");
    if (n < 2) throw ConfigError("TimeGrid: need at least two samples");
    if (!std::isfinite(t0)) throw ConfigError("TimeGrid: t0 must be finite");
  }

  /// First `count` samples of this grid.
  TimeGrid prefix(Eigen::Index count) const { return {t0, dt, count}; }
};

inline constexpr double kTimeSlack = 1e-9;

namespace detail {

// Segment index and weight of t within the grid, with slack at both ends.
inline std::pair<Eigen::Index, double> locate(const TimeGrid& grid, double t) {
  const double lo = grid.t0, hi = grid.t_end();
  if (!(t >= lo - kTimeSlack && t <= hi + kTimeSlack)) {
    throw OutOfDomainError("interpolate: t=" + std::to_string(t) + " outside [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const double pos = (t - grid.t0) / grid.dt;
  Eigen::Index i = static_cast<Eigen::Index>(std::floor(pos));
  if (i < 0) i = 0;
  if (i > grid.n - 2) i = grid.n - 2;
  double w = pos - static_cast<double>(i);
  if (w < 0.0) w = 0.0;
  if (w > 1.0) w = 1.0;
  // Snap near-integer positions so grid points return stored values exactly.
  const double nearest = std::round(pos);
  if (std::abs(pos - nearest) < 1e-9) {
    Eigen::Index k = static_cast<Eigen::Index>(nearest);
    if (k <= 0) return {0, 0.0};
    if (k >= grid.n - 1) return {grid.n - 2, 1.0};
    return {k, 0.0};
  }
  return {i, w};
}

}  // namespace detail

/// Piecewise-linear signal sampled on a TimeGrid: one row per sample, one
/// column per channel.
struct SampledSignal {
  TimeGrid grid;
  Matrix values;

  Eigen::Index channels() const { return values.cols(); }

  void validate() const {
    grid.validate();
    if (values.rows() != grid.n) {
      throw ConfigError("SampledSignal: " + std::to_string(values.rows()) + " rows for " +
                        std::to_string(grid.n) + " samples");
    }
    if (!values.allFinite()) throw ConfigError("SampledSignal: non-finite sample");
  }

  /// Leading samples covering [t0, t0 + (count-1)·dt].
  SampledSignal prefix(Eigen::Index count) const {
    return {grid.prefix(count), values.topRows(count)};
  }
};

/// Piecewise-linear value of the signal at t; exact at grid points.
inline Vector interpolate(const SampledSignal& sig, double t) {
  auto [i, w] = detail::locate(sig.grid, t);
  if (w == 0.0) return sig.values.row(i).transpose();
  if (w == 1.0) return sig.values.row(i + 1).transpose();
  return ((1.0 - w) * sig.values.row(i) + w * sig.values.row(i + 1)).transpose();
}

/// Several same-grid signals sampled side by side: samples[i] holds
/// channels × batch values at t_i.
struct BatchSignal {
  TimeGrid grid;
  std::vector<Matrix> samples;

  Eigen::Index channels() const { return samples.empty() ? 0 : samples.front().rows(); }
  Eigen::Index batch() const { return samples.empty() ? 0 : samples.front().cols(); }
  bool empty() const { return samples.empty() || channels() == 0; }

  static BatchSignal stack(const std::vector<const SampledSignal*>& signals) {
    BatchSignal out;
    if (signals.empty()) return out;
    out.grid = signals.front()->grid;
    const Eigen::Index c = signals.front()->channels();
    const Eigen::Index b = static_cast<Eigen::Index>(signals.size());
    out.samples.assign(static_cast<std::size_t>(out.grid.n), Matrix(c, b));
    for (Eigen::Index j = 0; j < b; ++j) {
      const SampledSignal& s = *signals[static_cast<std::size_t>(j)];
      if (s.grid.n != out.grid.n || s.channels() != c) {
        throw ConfigError("BatchSignal: signals do not share a grid");
      }
      for (Eigen::Index i = 0; i < out.grid.n; ++i) {
        out.samples[static_cast<std::size_t>(i)].col(j) = s.values.row(i).transpose();
      }
    }
    return out;
  }

  Matrix at(double t) const {
    auto [i, w] = detail::locate(grid, t);
    const Matrix& a = samples[static_cast<std::size_t>(i)];
    if (w == 0.0) return a;
    const Matrix& b = samples[static_cast<std::size_t>(i + 1)];
    if (w == 1.0) return b;
    return (1.0 - w) * a + w * b;
  }
};

}  // namespace structnode::ode
