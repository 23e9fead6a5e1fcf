#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "structnode/errors.hpp"
#include "structnode/odesolve/rk4.hpp"
#include "structnode/odesolve/signal.hpp"
#include "structnode/priors/model.hpp"

namespace structnode::bench {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using priors::Family;

/// Ground-truth system with its published coefficients.
struct BenchmarkSystem {
  Family kind = Family::HarmonicOscillator;
  double omega2 = 1.0;
  double mu = 1.0;
  double eps_fhn = 0.1;
  double gamma = 1.5;
  double beta = 0.8;
  double k_over_m = 10.0;

  Eigen::Index d_x() const { return priors::family_dims(kind).first; }
  Eigen::Index d_u() const { return priors::family_dims(kind).second; }
  Eigen::Index d_y() const { return 1; }
  /// Measured coordinate: x1 (or v) for every benchmark.
  std::vector<Eigen::Index> outputs() const { return {0}; }

  /// Coefficients in the order of priors::family_coefficients.
  std::vector<double> coefficients() const {
    switch (kind) {
      case Family::HarmonicOscillator: return {omega2};
      case Family::VanDerPol: return {mu};
      case Family::FitzHughNagumo: return {eps_fhn, gamma, beta};
      case Family::Earthquake: return {k_over_m};
    }
    return {};
  }
};

enum class InputKind { None, Constant, Sinusoid, Earthquake };

/// Concrete input of one trajectory. Sinusoid: amplitude·sin(ω_u t).
/// Earthquake: forcing -F0 ω² cos(ω t).
struct InputSpec {
  InputKind kind = InputKind::None;
  double value = 0.0;
  double amplitude = 0.0;
  double omega_u = 0.0;
  double F0 = 0.0;
  double omega = 0.0;

  static InputSpec none() { return {}; }
  static InputSpec constant(double v) { return {InputKind::Constant, v}; }
  static InputSpec sinusoid(double amplitude, double omega_u) {
    return {InputKind::Sinusoid, 0.0, amplitude, omega_u};
  }
  static InputSpec earthquake(double F0, double omega) {
    return {InputKind::Earthquake, 0.0, 0.0, 0.0, F0, omega};
  }

  Eigen::Index dim() const { return kind == InputKind::None ? 0 : 1; }

  Vector at(double t) const {
    switch (kind) {
      case InputKind::None: return Vector(0);
      case InputKind::Constant: return Vector::Constant(1, value);
      case InputKind::Sinusoid: return Vector::Constant(1, amplitude * std::sin(omega_u * t));
      case InputKind::Earthquake:
        return Vector::Constant(1, -F0 * omega * omega * std::cos(omega * t));
    }
    return Vector(0);
  }
};

/// Ranges from which per-trajectory input parameters are drawn.
struct InputRanges {
  InputKind kind = InputKind::None;
  double lo = 0.0, hi = 0.0;  // Constant value
  double amplitude = 1.2;
  double omega_u_lo = 0.5, omega_u_hi = 2.0;
  double F0_lo = 0.5, F0_hi = 1.5;
  double omega_lo = 1.0, omega_hi = 3.0;

  InputSpec draw(std::mt19937_64& rng) const {
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    switch (kind) {
      case InputKind::None: return InputSpec::none();
      case InputKind::Constant: return InputSpec::constant(uni(lo, hi));
      case InputKind::Sinusoid: return InputSpec::sinusoid(amplitude, uni(omega_u_lo, omega_u_hi));
      case InputKind::Earthquake: {
        const double f0 = uni(F0_lo, F0_hi);
        return InputSpec::earthquake(f0, uni(omega_lo, omega_hi));
      }
    }
    return {};
  }
};

/// Input family used by each benchmark.
inline InputRanges default_inputs(Family f) {
  InputRanges r;
  switch (f) {
    case Family::HarmonicOscillator: r.kind = InputKind::None; break;
    case Family::VanDerPol: r.kind = InputKind::Sinusoid; break;
    case Family::FitzHughNagumo:
      r.kind = InputKind::Constant;
      r.lo = 0.0;
      r.hi = 1.0;
      break;
    case Family::Earthquake: r.kind = InputKind::Earthquake; break;
  }
  return r;
}

struct NoiseSpec {
  double sigma2 = 0.0;
  std::uint64_t seed = 0;
};

/// Output-noise variance of the benchmark protocol.
inline double default_noise(Family f) {
  switch (f) {
    case Family::HarmonicOscillator: return 1e-4;
    case Family::VanDerPol: return 1e-3;
    case Family::FitzHughNagumo: return 5e-4;
    case Family::Earthquake: return 1e-4;
  }
  return 0.0;
}

/// Box sampler for x(0).
struct BoxSampler {
  Vector lo, hi;

  static BoxSampler unit(Eigen::Index d) { return {Vector::Constant(d, -1.0), Vector::Constant(d, 1.0)}; }

  Vector draw(std::mt19937_64& rng) const {
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      x(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(rng);
    }
    return x;
  }
};

/// Exact dynamics; u is the input value at time t (empty for the oscillator).
inline Vector true_field(const BenchmarkSystem& s, double t, const Vector& x, const Vector& u) {
  (void)t;
  if (x.size() != s.d_x() || u.size() != s.d_u()) {
    throw ConfigError("true_field: dimension mismatch for " + priors::to_string(s.kind));
  }
  Vector d(x.size());
  switch (s.kind) {
    case Family::HarmonicOscillator:
      d << x(1), -s.omega2 * x(0);
      break;
    case Family::VanDerPol:
      d << x(1), s.mu * (1.0 - x(0) * x(0)) * x(1) - x(0) + u(0);
      break;
    case Family::FitzHughNagumo:
      d << (x(0) - x(0) * x(0) * x(0) - x(1)) / s.eps_fhn + u(0), s.gamma * x(0) - x(1) + s.beta;
      break;
    case Family::Earthquake:
      d << x(1), s.k_over_m * (x(2) - 2.0 * x(0)) + u(0), x(3), s.k_over_m * (x(0) - x(2)) + u(0);
      break;
  }
  return d;
}

inline Vector true_field(const BenchmarkSystem& s, double t, const Vector& x, const InputSpec& in) {
  return true_field(s, t, x, in.at(t));
}

/// Samples of an input on a grid (n x d_u).
inline ode::SampledSignal input_signal(const InputSpec& in, const ode::TimeGrid& grid) {
  ode::SampledSignal s{grid, Matrix(grid.n, in.dim())};
  for (Eigen::Index i = 0; i < grid.n; ++i) {
    if (in.dim() > 0) s.values.row(i) = in.at(grid.time(i)).transpose();
  }
  return s;
}

/// Sinusoid generator: ω1' = ω2, ω2' = -ω3 ω1, ω3' = 0, with u = ω1.
inline Vector generator_field(const Vector& w) {
  Vector d(3);
  d << w(1), -w(2) * w(0), 0.0;
  return d;
}

/// Generator state reproducing amplitude·sin(ω_u t).
inline Vector generator_initial_state(double amplitude, double omega_u) {
  Vector w(3);
  w << 0.0, amplitude * omega_u, omega_u * omega_u;
  return w;
}

struct Trajectory {
  ode::TimeGrid grid;
  Matrix y;  // n x d_y
  Matrix u;  // n x d_u
  Matrix x;  // n x d_x (empty when the truth is unknown)
  InputSpec input;

  ode::SampledSignal outputs() const { return {grid, y}; }
  ode::SampledSignal inputs() const { return {grid, u}; }
  bool has_states() const { return x.size() > 0; }
};

/// Noise-free state trajectory sampled on `grid`, integrated with
/// `substeps` RK4 steps per sample interval.
inline Matrix simulate(const BenchmarkSystem& s, const InputSpec& in, const Vector& x0,
                       const ode::TimeGrid& grid, int substeps = 10) {
  auto field = [&](double t, const Vector& x, const auto&) { return true_field(s, t, x, in); };
  auto states = ode::integrate_states(field, x0, grid, ode::NoInput{}, substeps);
  Matrix out(grid.n, x0.size());
  for (Eigen::Index i = 0; i < grid.n; ++i) out.row(i) = states[static_cast<std::size_t>(i)].transpose();
  return out;
}

/// Generator for trajectory j of a dataset seeded with `seed`.
inline std::mt19937_64 trajectory_rng(std::uint64_t seed, std::uint64_t j) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(j >> 32)};
  return std::mt19937_64(seq);
}

struct DatasetOptions {
  InputRanges inputs;
  NoiseSpec noise;
  Eigen::Index N = 0;
  ode::TimeGrid grid;
  BoxSampler x0;
  int substeps = 10;
  int threads = 1;
};

/// N trajectories of the system: random x(0) and input parameters per
/// trajectory, fine-step integration, Gaussian output noise.
inline std::vector<Trajectory> generate_dataset(const BenchmarkSystem& s, const DatasetOptions& o) {
  if (o.N < 1) throw ConfigError("generate_dataset: N must be >= 1");
  if (o.noise.sigma2 < 0.0) throw ConfigError("generate_dataset: noise variance must be >= 0");
  if (o.x0.lo.size() != s.d_x() || o.x0.hi.size() != s.d_x() || !o.x0.lo.allFinite() ||
      !o.x0.hi.allFinite() || (o.x0.hi - o.x0.lo).minCoeff() < 0.0) {
    throw ConfigError("generate_dataset: invalid initial-state sampler");
  }
  if ((o.inputs.kind == InputKind::None) != (s.d_u() == 0)) {
    throw ConfigError("generate_dataset: input kind does not match the system");
  }
  o.grid.validate();
  std::vector<Trajectory> out(static_cast<std::size_t>(o.N));
  auto make = [&](std::size_t j) {
    std::mt19937_64 rng = trajectory_rng(o.noise.seed, j);
    Vector x0 = o.x0.draw(rng);
    InputSpec in = o.inputs.draw(rng);
    Trajectory tr{o.grid, Matrix(), input_signal(in, o.grid).values, simulate(s, in, x0, o.grid, o.substeps),
                  in};
    tr.y = Matrix(o.grid.n, s.d_y());
    std::normal_distribution<double> n01(0.0, 1.0);
    const double sigma = std::sqrt(o.noise.sigma2);
    const auto outs = s.outputs();
    for (Eigen::Index i = 0; i < o.grid.n; ++i) {
      for (std::size_t k = 0; k < outs.size(); ++k) {
        const double clean = tr.x(i, outs[k]);
        tr.y(i, static_cast<Eigen::Index>(k)) = sigma > 0.0 ? clean + sigma * n01(rng) : clean;
      }
    }
    out[j] = std::move(tr);
  };
  const int threads = std::max(1, std::min<int>(o.threads, static_cast<int>(o.N)));
  if (threads == 1) {
    for (std::size_t j = 0; j < out.size(); ++j) make(j);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t j = static_cast<std::size_t>(w); j < out.size(); j += static_cast<std::size_t>(threads)) {
          make(j);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace structnode::bench
