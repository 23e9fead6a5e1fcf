#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "structnode/errors.hpp"
#include "structnode/odesolve/rk4.hpp"
#include "structnode/priors/model.hpp"

namespace structnode::ekf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct EkfState {
  Vector mean;
  Matrix cov;

  void validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
      throw ConfigError("EkfState: covariance does not match the mean");
    }
  }
};

struct EkfConfig {
  Matrix Q;  // process noise density
  Matrix R;  // measurement noise
  double dt = 1e-3;
  std::vector<Eigen::Index> outputs;

  /// Q = 1e-4 I and R = σ² I.
  static EkfConfig defaults(Eigen::Index d_x, std::vector<Eigen::Index> outputs, double sigma2, double dt) {
    const auto d_y = static_cast<Eigen::Index>(outputs.size());
    return {1e-4 * Matrix::Identity(d_x, d_x), sigma2 * Matrix::Identity(d_y, d_y), dt, std::move(outputs)};
  }
};

/// f(t, x, u) for a single state.
using FieldFn = std::function<Vector(double, const Vector&, const Vector&)>;

inline Matrix symmetrize(const Matrix& p) { return 0.5 * (p + p.transpose()); }

/// Jacobian of the model field at (t, x, u) through the tape.
inline Matrix field_jacobian(const priors::ModelSpec& m, double t, const Vector& x, const Vector& u) {
  ad::Tape tape;
  ad::Var xv = tape.variable(x);
  std::optional<ad::Var> uv;
  if (m.d_u > 0) uv = tape.constant(u);
  ad::Var f = priors::eval_field(m, tape, t, xv, uv);
  const Eigen::Index n = x.size();
  Matrix J(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    tape.backward(f, Matrix(Vector::Unit(n, i)));
    J.row(i) = tape.grad(xv).col(0).transpose();
  }
  return J;
}

/// Central-difference Jacobian for fields without tape support.
inline Matrix numerical_jacobian(const FieldFn& f, double t, const Vector& x, const Vector& u,
                                 double step = 1e-6) {
  const Eigen::Index n = x.size();
  Matrix J(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector xp = x, xm = x;
    xp(j) += step;
    xm(j) -= step;
    J.col(j) = (f(t, xp, u) - f(t, xm, u)) / (2.0 * step);
  }
  return J;
}

namespace detail {

inline EkfState propagate(const FieldFn& f, const Matrix& A, const EkfState& s, double t, const Vector& u,
                          const EkfConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw ConfigError("ekf_predict: dt must be positive");
  s.validate();
  const Eigen::Index n = s.mean.size();
  if (cfg.Q.rows() != n || cfg.Q.cols() != n) throw ConfigError("ekf_predict: Q has the wrong size");
  EkfState out;
  try {
    out.mean = ode::rk4_step([&](double tt, const Vector& x) { return f(tt, x, u); }, t, s.mean, cfg.dt);
  } catch (const IntegrationError& e) {
    throw NumericalError(std::string("ekf_predict: filter diverged: ") + e.what());
  }
  const Matrix phi = Matrix::Identity(n, n) + A * cfg.dt;
  out.cov = symmetrize(phi * s.cov * phi.transpose() + cfg.Q * cfg.dt);
  if (!out.cov.allFinite()) throw NumericalError("ekf_predict: filter diverged (covariance)");
  return out;
}

}  // namespace detail

/// Mean through one RK4 step with u held over the step; P ← ΦPΦᵀ + Q dt with
/// Φ = I + A dt and A the field Jacobian at the prior mean.
inline EkfState ekf_predict(const priors::ModelSpec& m, const EkfState& s, const Vector& u,
                            const EkfConfig& cfg, double t = 0.0) {
  FieldFn f = [&m](double tt, const Vector& x, const Vector& uu) { return priors::eval_field(m, tt, x, uu); };
  return detail::propagate(f, field_jacobian(m, t, s.mean, u), s, t, u, cfg);
}

/// Same step for an arbitrary field, with a finite-difference Jacobian.
inline EkfState ekf_predict(const FieldFn& f, const EkfState& s, const Vector& u, const EkfConfig& cfg,
                            double t = 0.0) {
  return detail::propagate(f, numerical_jacobian(f, t, s.mean, u), s, t, u, cfg);
}

/// Kalman update with the coordinate-selector output map.
inline EkfState ekf_update(const EkfState& s, const Vector& y, const EkfConfig& cfg) {
  s.validate();
  const Eigen::Index n = s.mean.size();
  const auto d_y = static_cast<Eigen::Index>(cfg.outputs.size());
  if (y.size() != d_y || cfg.R.rows() != d_y || cfg.R.cols() != d_y) {
    throw ConfigError("ekf_update: measurement size does not match the output selector");
  }
  Matrix H = Matrix::Zero(d_y, n);
  for (Eigen::Index k = 0; k < d_y; ++k) {
    const Eigen::Index i = cfg.outputs[static_cast<std::size_t>(k)];
    if (i < 0 || i >= n) throw ConfigError("ekf_update: output index out of range");
    H(k, i) = 1.0;
  }
  const Matrix S = symmetrize(H * s.cov * H.transpose() + cfg.R);
  Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-300 * std::max(1.0, S.norm())) {
    throw NumericalError("ekf_update: singular innovation covariance");
  }
  const Matrix K = ldlt.solve(H * s.cov).transpose();
  EkfState out;
  out.mean = s.mean + K * (y - H * s.mean);
  out.cov = symmetrize((Matrix::Identity(n, n) - K * H) * s.cov);
  return out;
}

/// Filtered means on a sample grid: update at t0, then predict + update at
/// every later sample, `steps` filter steps per sample interval.
inline Matrix run_filter(const priors::ModelSpec& m, EkfState s, const ode::TimeGrid& grid, const Matrix& y,
                         const Matrix& u, EkfConfig cfg, int steps = 1) {
  if (y.rows() != grid.n || (m.d_u > 0 && u.rows() != grid.n)) {
    throw ConfigError("run_filter: signals do not match the grid");
  }
  cfg.dt = grid.dt / steps;
  Matrix out(grid.n, s.mean.size());
  s = ekf_update(s, y.row(0).transpose(), cfg);
  out.row(0) = s.mean.transpose();
  for (Eigen::Index i = 1; i < grid.n; ++i) {
    for (int k = 0; k < steps; ++k) {
      const double t = grid.time(i - 1) + k * cfg.dt;
      const double w = static_cast<double>(k) / steps;
      Vector ui = m.d_u > 0 ? Vector((1.0 - w) * u.row(i - 1) + w * u.row(i)) : Vector();
      s = ekf_predict(m, s, ui, cfg, t);
    }
    s = ekf_update(s, y.row(i).transpose(), cfg);
    out.row(i) = s.mean.transpose();
  }
  return out;
}

}  // namespace structnode::ekf
