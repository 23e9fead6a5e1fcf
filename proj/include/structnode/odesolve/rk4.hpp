#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "structnode/diffcore/tape.hpp"
#include "structnode/odesolve/signal.hpp"

namespace structnode::ode {

namespace detail {

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }
inline bool all_finite(const ad::Var& v) { return v.value().allFinite(); }

}  // namespace detail

/// One classical Runge-Kutta step of x' = field(t, x). Negative dt integrates
/// backward. State may be an Eigen vector/matrix or an ad::Var.
template <class State, class Field>
State rk4_step(Field&& field, double t, const State& x, double dt) {
  if (dt == 0.0) throw ConfigError("rk4_step: dt must be nonzero");
  const double h2 = 0.5 * dt;
  State k1 = field(t, x);
  if (!detail::all_finite(k1)) throw IntegrationError("rk4_step: non-finite field value", t);
  State k2 = field(t + h2, State(x + h2 * k1));
  if (!detail::all_finite(k2)) throw IntegrationError("rk4_step: non-finite field value", t + h2);
  State k3 = field(t + h2, State(x + h2 * k2));
  if (!detail::all_finite(k3)) throw IntegrationError("rk4_step: non-finite field value", t + h2);
  State k4 = field(t + dt, State(x + dt * k3));
  if (!detail::all_finite(k4)) throw IntegrationError("rk4_step: non-finite field value", t + dt);
  State out = x + (dt / 6.0) * State(k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!detail::all_finite(out)) throw IntegrationError("rk4_step: non-finite state", t + dt);
  return out;
}

/// States at every grid time of x' = field(t, x, u(t)), starting from x0 at
/// grid.t0. `input(t)` supplies the exogenous signal; each grid interval is
/// split into `substeps` RK4 steps.
template <class State, class Field, class Input>
std::vector<State> integrate_states(Field&& field, const State& x0, const TimeGrid& grid,
                                    Input&& input, int substeps = 1) {
  grid.validate();
  if (substeps < 1) throw ConfigError("integrate: substeps must be >= 1");
  if (!detail::all_finite(x0)) throw IntegrationError("integrate: non-finite initial state", grid.t0);
  auto f = [&](double t, const State& x) { return field(t, x, input(t)); };
  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(grid.n));
  out.push_back(x0);
  const double h = grid.dt / substeps;
  State x = x0;
  for (Eigen::Index i = 0; i + 1 < grid.n; ++i) {
    const double ti = grid.time(i);
    for (int s = 0; s < substeps; ++s) x = rk4_step(f, ti + s * h, x, h);
    out.push_back(x);
  }
  return out;
}

/// Time-reversed integration: z'(s) = field(t_end - s, z, u(t_end - s)) for
/// s in [0, t_end - t0], z(s=0) = x_end. Result is indexed by the original
/// grid, so out[n-1] == x_end and out[0] is the state reached at t0.
template <class State, class Field, class Input>
std::vector<State> integrate_states_backward(Field&& field, const State& x_end,
                                             const TimeGrid& grid, Input&& input,
                                             int substeps = 1) {
  grid.validate();
  const double t_end = grid.t_end();
  auto reversed = [&](double s, const State& z, const auto&) {
    return field(t_end - s, z, input(t_end - s));
  };
  auto none = [](double) { return 0; };
  TimeGrid sgrid{0.0, grid.dt, grid.n};
  std::vector<State> fwd = integrate_states(reversed, x_end, sgrid, none, substeps);
  return {fwd.rbegin(), fwd.rend()};
}

/// Empty input for autonomous fields.
struct NoInput {
  Vector operator()(double) const { return Vector(); }
};

/// Rows of the returned matrix are the states at successive grid times.
template <class Field>
Matrix integrate(Field&& field, const Vector& x0, const TimeGrid& grid,
                 const std::optional<SampledSignal>& u = std::nullopt, int substeps = 1) {
  std::vector<Vector> states;
  if (u) {
    u->validate();
    if (u->grid.t0 > grid.t0 + kTimeSlack || u->grid.t_end() < grid.t_end() - kTimeSlack) {
      throw OutOfDomainError("integrate: input signal does not cover the grid");
    }
    states = integrate_states(field, x0, grid, [&](double t) { return interpolate(*u, t); },
                              substeps);
  } else {
    states = integrate_states(field, x0, grid, NoInput{}, substeps);
  }
  Matrix out(grid.n, x0.size());
  for (Eigen::Index i = 0; i < grid.n; ++i) out.row(i) = states[static_cast<std::size_t>(i)];
  return out;
}

/// Backward counterpart of integrate(); row i is the state at grid time t_i.
template <class Field>
Matrix integrate_backward(Field&& field, const Vector& x_end, const TimeGrid& grid,
                          const std::optional<SampledSignal>& driver = std::nullopt,
                          int substeps = 1) {
  std::vector<Vector> states;
  if (driver) {
    driver->validate();
    if (driver->grid.t0 > grid.t0 + kTimeSlack ||
        driver->grid.t_end() < grid.t_end() - kTimeSlack) {
      throw OutOfDomainError("integrate_backward: driver does not cover the grid");
    }
    states = integrate_states_backward(
        field, x_end, grid, [&](double t) { return interpolate(*driver, t); }, substeps);
  } else {
    states = integrate_states_backward(field, x_end, grid, NoInput{}, substeps);
  }
  Matrix out(grid.n, x_end.size());
  for (Eigen::Index i = 0; i < grid.n; ++i) out.row(i) = states[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace structnode::ode
