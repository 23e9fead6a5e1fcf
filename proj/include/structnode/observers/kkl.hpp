#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "structnode/diffcore/tape.hpp"
#include "structnode/odesolve/rk4.hpp"
#include "structnode/odesolve/signal.hpp"

namespace structnode::obs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

/// Poles ω0·exp(iπ(2k+n-1)/(2n)), k = 1..n, with ω0 = 2π·cutoff_hz.
inline std::vector<Complex> butterworth_poles(int order, double cutoff_hz) {
  if (order < 1) throw ConfigError("butterworth_poles: order must be >= 1");
  if (!(cutoff_hz > 0.0)) throw ConfigError("butterworth_poles: cutoff must be positive");
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz;
  std::vector<Complex> poles;
  poles.reserve(static_cast<std::size_t>(order));
  for (int k = 1; k <= order; ++k) {
    const double angle = std::numbers::pi * (2.0 * k + order - 1) / (2.0 * order);
    Complex p = std::polar(w0, angle);
    if (std::abs(p.imag()) < 1e-12 * w0) p.imag(0.0);
    poles.push_back(p);
  }
  return poles;
}

/// One diagonal block of D: a real pole (1x1) or a conjugate pair (2x2).
struct PoleBlock {
  Eigen::Index offset = 0;
  bool pair = false;
};

/// KKL observer gains. D is block-diagonal and parametrized by `poles`: one
/// entry per real pole, (Re, Im) per conjugate pair, so that the pair block
/// is [[Re, Im], [-Im, Re]]. F is fixed.
struct KklGains {
  std::vector<PoleBlock> blocks;
  ad::Param poles{"kkl.D", Matrix()};
  Matrix F;
  bool trainable = true;

  Eigen::Index dim() const { return poles.value.rows(); }
  Eigen::Index input_dim() const { return F.cols(); }

  Matrix D() const { return assemble(poles.value); }

  /// D on the tape; differentiable in the pole parameters when trainable.
  ad::Var D(ad::Tape& tape) const {
    if (!trainable) return tape.constant(D());
    ad::Var p = tape.param(poles);
    const std::vector<PoleBlock> layout = blocks;
    return tape.record(assemble(poles.value), {p}, [layout, id = p.id()](ad::Tape& t, const Matrix& g) {
      Matrix dp = Matrix::Zero(g.rows(), 1);
      for (const PoleBlock& b : layout) {
        const Eigen::Index i = b.offset;
        if (!b.pair) {
          dp(i) = g(i, i);
        } else {
          dp(i) = g(i, i) + g(i + 1, i + 1);
          dp(i + 1) = g(i, i + 1) - g(i + 1, i);
        }
      }
      t.accumulate(id, dp);
    });
  }

  /// Largest real part among the poles.
  double max_real_part() const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const PoleBlock& b : blocks) worst = std::max(worst, poles.value(b.offset, 0));
    return worst;
  }

  /// Projects real parts to <= -eps_d after a gradient update.
  void clamp_hurwitz(double eps_d = 1e-3) {
    for (const PoleBlock& b : blocks) {
      double& re = poles.value(b.offset, 0);
      re = std::min(re, -eps_d);
    }
  }

  std::vector<Complex> pole_values() const {
    std::vector<Complex> out;
    for (const PoleBlock& b : blocks) {
      const double re = poles.value(b.offset, 0);
      if (!b.pair) {
        out.emplace_back(re, 0.0);
      } else {
        const double im = poles.value(b.offset + 1, 0);
        out.emplace_back(re, im);
        out.emplace_back(re, -im);
      }
    }
    return out;
  }

 private:
  Matrix assemble(const Matrix& p) const {
    const Eigen::Index n = p.rows();
    Matrix d = Matrix::Zero(n, n);
    for (const PoleBlock& b : blocks) {
      const Eigen::Index i = b.offset;
      if (!b.pair) {
        d(i, i) = p(i, 0);
      } else {
        d(i, i) = d(i + 1, i + 1) = p(i, 0);
        d(i, i + 1) = p(i + 1, 0);
        d(i + 1, i) = -p(i + 1, 0);
      }
    }
    return d;
  }
};

/// Realifies a pole list into block-diagonal gains. Complex poles must come
/// in conjugate pairs; blocks follow the order of first appearance.
inline KklGains gains_from_poles(const std::vector<Complex>& poles, Eigen::Index input_dim,
                                 double imag_tol = 1e-9) {
  KklGains g;
  const Eigen::Index n = static_cast<Eigen::Index>(poles.size());
  g.poles.value = Matrix::Zero(n, 1);
  std::vector<bool> used(poles.size(), false);
  Eigen::Index off = 0;
  for (std::size_t k = 0; k < poles.size(); ++k) {
    if (used[k]) continue;
    used[k] = true;
    const Complex p = poles[k];
    const double scale = std::max(1.0, std::abs(p));
    if (std::abs(p.imag()) <= imag_tol * scale) {
      g.blocks.push_back({off, false});
      g.poles.value(off, 0) = p.real();
      off += 1;
      continue;
    }
    std::size_t mate = poles.size();
    for (std::size_t j = k + 1; j < poles.size(); ++j) {
      if (!used[j] && std::abs(poles[j] - std::conj(p)) <= imag_tol * scale) {
        mate = j;
        break;
      }
    }
    if (mate == poles.size()) {
      throw ConfigError("build_D: complex pole without conjugate partner");
    }
    used[mate] = true;
    g.blocks.push_back({off, true});
    g.poles.value(off, 0) = p.real();
    g.poles.value(off + 1, 0) = std::abs(p.imag());
    off += 2;
  }
  g.F = Matrix::Ones(n, input_dim);
  return g;
}

/// Block-diagonal real matrix whose eigenvalues are the given poles.
inline Matrix build_D(const std::vector<Complex>& poles) { return gains_from_poles(poles, 1).D(); }

/// Butterworth-initialized gains with F = ones(d_z, input_dim).
inline KklGains butterworth_gains(Eigen::Index d_z, Eigen::Index input_dim, double cutoff_hz = 1.0) {
  return gains_from_poles(butterworth_poles(static_cast<int>(d_z), cutoff_hz), input_dim);
}

/// D = diag(-1, ..., -d_z).
inline KklGains diagonal_gains(Eigen::Index d_z, Eigen::Index input_dim) {
  std::vector<Complex> poles;
  for (Eigen::Index k = 1; k <= d_z; ++k) poles.emplace_back(-static_cast<double>(k), 0.0);
  return gains_from_poles(poles, input_dim);
}

/// One copy of `per_channel_poles` per input channel, each block driven only
/// by its own channel (F block-diagonal ones).
inline KklGains per_channel_gains(const std::vector<Complex>& per_channel_poles, Eigen::Index channels) {
  std::vector<Complex> all;
  for (Eigen::Index c = 0; c < channels; ++c) all.insert(all.end(), per_channel_poles.begin(), per_channel_poles.end());
  KklGains g = gains_from_poles(all, channels);
  const auto per = static_cast<Eigen::Index>(per_channel_poles.size());
  g.F = Matrix::Zero(per * channels, channels);
  for (Eigen::Index c = 0; c < channels; ++c) g.F.block(c * per, c, per, 1).setOnes();
  return g;
}

struct GainCheck {
  bool hurwitz = false;
  bool controllable = false;
};

/// Numerical rank counting singular values above rel_tol·σ_max.
inline Eigen::Index numerical_rank(const Matrix& m, double rel_tol = 1e-8) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++r;
  }
  return r;
}

/// [F, DF, ..., D^(n-1)F] with each column normalized; column scaling keeps
/// the rank and tames the growth of D^k for fast poles.
inline Matrix controllability_matrix(const Matrix& d, const Matrix& f) {
  const Eigen::Index n = d.rows();
  Matrix out(n, n * f.cols());
  Matrix block = f;
  for (Eigen::Index k = 0; k < n; ++k) {
    out.middleCols(k * f.cols(), f.cols()) = block;
    block = d * block;
  }
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double nrm = out.col(j).norm();
    if (nrm > 0.0) out.col(j) /= nrm;
  }
  return out;
}

/// Hurwitz test from the eigenvalues of D; controllability from the rank
/// of the controllability matrix.
inline GainCheck check_gains(const Matrix& d, const Matrix& f) {
  if (d.rows() != d.cols()) throw ConfigError("check_gains: D must be square");
  if (f.rows() != d.rows()) throw ConfigError("check_gains: F row count must match D");
  GainCheck out;
  Eigen::EigenSolver<Matrix> es(d, false);
  out.hurwitz = (es.eigenvalues().real().array() < 0.0).all();
  out.controllable = numerical_rank(controllability_matrix(d, f)) == d.rows();
  return out;
}

/// Hurwitz test through the block parametrization's real parts.
inline GainCheck check_gains(const KklGains& g) {
  GainCheck out = check_gains(g.D(), g.F);
  out.hurwitz = g.max_real_part() < 0.0;
  return out;
}

namespace detail {

inline Eigen::Index window_samples(const ode::TimeGrid& grid, double t_c) {
  if (t_c < 0.0) throw ConfigError("observer: t_c must be non-negative");
  const double steps = t_c / grid.dt;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-6) {
    throw ConfigError("observer: t_c must be a multiple of the sampling step");
  }
  return static_cast<Eigen::Index>(rounded) + 1;
}

}  // namespace detail

/// Runs z' = D z + F·driver backward over [t0, t0 + t_c] starting from
/// z = 0 at t_c; returns z at t0.
inline Vector simulate_observer_backward(const KklGains& g, const ode::SampledSignal& driver,
                                         double t_c) {
  driver.validate();
  if (driver.channels() != g.input_dim()) {
    throw ConfigError("simulate_observer_backward: driver has wrong channel count");
  }
  const Eigen::Index n_c = detail::window_samples(driver.grid, t_c);
  if (n_c > driver.grid.n) {
    throw ConfigError("simulate_observer_backward: driver shorter than t_c");
  }
  if (n_c == 1) return Vector::Zero(g.dim());
  const Matrix d = g.D();
  const Matrix& f = g.F;
  ode::SampledSignal window = driver.prefix(n_c);
  auto field = [&](double, const Vector& z, const Vector& y) { return Vector(d * z + f * y); };
  Matrix zs = ode::integrate_backward(field, Vector::Zero(g.dim()), window.grid, window);
  return zs.row(0).transpose();
}

/// Batched, differentiable variant: driver samples are channels × batch.
inline ad::Var simulate_observer_backward(ad::Tape& tape, const KklGains& g,
                                          const ode::BatchSignal& driver, Eigen::Index n_c) {
  if (driver.channels() != g.input_dim()) {
    throw ConfigError("simulate_observer_backward: driver has wrong channel count");
  }
  if (n_c > driver.grid.n) throw ConfigError("simulate_observer_backward: driver shorter than t_c");
  const Eigen::Index batch = driver.batch();
  if (n_c <= 1) return tape.constant(Matrix::Zero(g.dim(), batch));
  ad::Var d = g.D(tape);
  ad::Var f = tape.constant(g.F);
  ode::TimeGrid grid = driver.grid.prefix(n_c);
  auto field = [&](double, const ad::Var& z, const Matrix& y) {
    return ad::matmul(d, z) + ad::matmul(f, tape.constant(y));
  };
  auto input = [&](double t) { return driver.at(t); };
  auto states = ode::integrate_states_backward(field, tape.constant(Matrix::Zero(g.dim(), batch)),
                                               grid, input);
  return states.front();
}

/// Linear specialization of the KKL transformation: T·A − D·T = F·C.
struct SylvesterSolution {
  Matrix T;
  std::optional<Matrix> left_inverse;
  Matrix A;
  Matrix C;
  Eigen::Index rank = 0;

  double residual(const Matrix& d, const Matrix& f) const { return (T * A - d * T - f * C).norm(); }
};

inline SylvesterSolution solve_sylvester(const Matrix& a, const Matrix& c, const Matrix& d,
                                         const Matrix& f) {
  const Eigen::Index nx = a.rows(), nz = d.rows();
  if (a.cols() != nx || d.cols() != nz || c.cols() != nx || f.rows() != nz ||
      f.cols() != c.rows()) {
    throw ConfigError("solve_sylvester: inconsistent dimensions");
  }
  Eigen::EigenSolver<Matrix> ea(a, false), ed(d, false);
  double scale = 1.0;
  for (Eigen::Index i = 0; i < nx; ++i) scale = std::max(scale, std::abs(ea.eigenvalues()(i)));
  for (Eigen::Index j = 0; j < nz; ++j) scale = std::max(scale, std::abs(ed.eigenvalues()(j)));
  for (Eigen::Index i = 0; i < nx; ++i) {
    for (Eigen::Index j = 0; j < nz; ++j) {
      if (std::abs(ea.eigenvalues()(i) - ed.eigenvalues()(j)) < 1e-9 * scale) {
        throw NumericalError("solve_sylvester: A and D share an eigenvalue; system is singular");
      }
    }
  }
  // vec(TA) = (Aᵀ ⊗ I) vec(T), vec(DT) = (I ⊗ D) vec(T), column-major vec.
  Matrix k = Matrix::Zero(nz * nx, nz * nx);
  for (Eigen::Index i = 0; i < nx; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      k.block(j * nz, i * nz, nz, nz) += a(i, j) * Matrix::Identity(nz, nz);
    }
    k.block(i * nz, i * nz, nz, nz) -= d;
  }
  Matrix rhs = f * c;
  Eigen::FullPivLU<Matrix> lu(k);
  if (!lu.isInvertible()) throw NumericalError("solve_sylvester: singular system");
  Vector vt = lu.solve(Eigen::Map<const Vector>(rhs.data(), rhs.size()));
  SylvesterSolution out;
  out.T = Eigen::Map<const Matrix>(vt.data(), nz, nx);
  out.A = a;
  out.C = c;
  out.rank = numerical_rank(out.T);
  if (out.rank == nx) {
    out.left_inverse = (out.T.transpose() * out.T).ldlt().solve(out.T.transpose());
  }
  return out;
}

inline SylvesterSolution solve_sylvester(const Matrix& a, const Matrix& c, const KklGains& g) {
  return solve_sylvester(a, c, g.D(), g.F);
}

}  // namespace structnode::obs
