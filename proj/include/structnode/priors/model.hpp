#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "structnode/diffcore/mlp.hpp"
#include "structnode/diffcore/tape.hpp"
#include "structnode/errors.hpp"

namespace structnode::priors {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ad::Tape;
using ad::Var;

enum class ModelKind {
  Free,
  HamiltonianGeneral,
  HamiltonianSecondOrder,
  SecondOrderPairs,
  Parametric,
  ExtendedState,
  ResidualOnPrior
};

/// Known physical form used by Parametric and ExtendedState models.
enum class Family { HarmonicOscillator, VanDerPol, FitzHughNagumo, Earthquake };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Free: return "free";
    case ModelKind::HamiltonianGeneral: return "hamiltonian";
    case ModelKind::HamiltonianSecondOrder: return "hamiltonian_second_order";
    case ModelKind::SecondOrderPairs: return "second_order_pairs";
    case ModelKind::Parametric: return "parametric";
    case ModelKind::ExtendedState: return "extended_state";
    case ModelKind::ResidualOnPrior: return "residual";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  for (auto k : {ModelKind::Free, ModelKind::HamiltonianGeneral, ModelKind::HamiltonianSecondOrder,
                 ModelKind::SecondOrderPairs, ModelKind::Parametric, ModelKind::ExtendedState,
                 ModelKind::ResidualOnPrior}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown structure kind '" + s + "'");
}

inline std::string to_string(Family f) {
  switch (f) {
    case Family::HarmonicOscillator: return "harmonic_oscillator";
    case Family::VanDerPol: return "van_der_pol";
    case Family::FitzHughNagumo: return "fitzhugh_nagumo";
    case Family::Earthquake: return "earthquake";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (auto f : {Family::HarmonicOscillator, Family::VanDerPol, Family::FitzHughNagumo,
                 Family::Earthquake}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown system '" + s + "'");
}

/// Physical state and input counts of a family.
inline std::pair<Eigen::Index, Eigen::Index> family_dims(Family f) {
  switch (f) {
    case Family::HarmonicOscillator: return {2, 0};
    case Family::VanDerPol: return {2, 1};
    case Family::FitzHughNagumo: return {2, 1};
    case Family::Earthquake: return {4, 1};
  }
  return {0, 0};
}

/// Names of the coefficients entering the family's field.
inline std::vector<std::string> family_coefficients(Family f) {
  switch (f) {
    case Family::HarmonicOscillator: return {"omega2"};
    case Family::VanDerPol: return {"mu"};
    case Family::FitzHughNagumo: return {"eps_fhn", "gamma", "beta"};
    case Family::Earthquake: return {"k_over_m"};
  }
  return {};
}

/// Field of a family with coefficient rows c (each 1x1 or 1xB). x is d_x x B,
/// u is d_u x B (unused for the oscillator).
inline Var family_field(Family f, const std::vector<Var>& c, Var x, const std::optional<Var>& u) {
  auto need_u = [&] {
    if (!u) throw ConfigError("family_field: " + to_string(f) + " needs an input");
    return *u;
  };
  switch (f) {
    case Family::HarmonicOscillator: {
      Var x1 = ad::row(x, 0), x2 = ad::row(x, 1);
      return ad::vcat({x2, -(c[0] * x1)});
    }
    case Family::VanDerPol: {
      Var x1 = ad::row(x, 0), x2 = ad::row(x, 1);
      return ad::vcat({x2, c[0] * (1.0 - x1 * x1) * x2 - x1 + need_u()});
    }
    case Family::FitzHughNagumo: {
      Var v = ad::row(x, 0), w = ad::row(x, 1);
      Var dv = (v - v * v * v - w) / c[0] + need_u();
      return ad::vcat({dv, c[1] * v - w + c[2]});
    }
    case Family::Earthquake: {
      Var x1 = ad::row(x, 0), x2 = ad::row(x, 1), x3 = ad::row(x, 2), x4 = ad::row(x, 3);
      Var a = need_u();
      return ad::vcat({x2, c[0] * (x3 - 2.0 * x1) + a, x4, c[0] * (x1 - x3) + a});
    }
  }
  throw UsageError("family_field: unknown family");
}

/// Affine normalization applied at network boundaries.
struct Normalization {
  Vector x_mean, x_std, u_mean, u_std;

  static Normalization identity(Eigen::Index d_x, Eigen::Index d_u) {
    return {Vector::Zero(d_x), Vector::Ones(d_x), Vector::Zero(d_u), Vector::Ones(d_u)};
  }
};

/// Interval for the random initialization of a physical scalar.
struct ParamRange {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
};

/// A structured vector field: free NODE, Hamiltonian forms, coordinate
/// constraints, parametric and extended models, or a residual on a known
/// linear prior.
class ModelSpec {
 public:
  ModelKind kind = ModelKind::Free;
  Family family = Family::HarmonicOscillator;
  Eigen::Index d_x = 0;  // state dimension seen by the integrator
  Eigen::Index d_u = 0;
  std::vector<Eigen::Index> outputs;  // measured coordinates
  std::optional<ad::Mlp> f;           // f_θ
  std::optional<ad::Mlp> H;           // H_θ
  std::vector<ad::Param> params;      // Parametric: free physical scalars
  Matrix A_prior, B_prior;            // ResidualOnPrior
  double lambda_res = 0.0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pair_map;
  Normalization norm;

  Eigen::Index input_dim() const { return d_u; }

  /// Coordinates appended for ExtendedState (zero dynamics).
  Eigen::Index extended_dim() const {
    return kind == ModelKind::ExtendedState ? static_cast<Eigen::Index>(family_coefficients(family).size())
                                            : 0;
  }

  const ad::Param& param(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return p;
    }
    throw ConfigError("ModelSpec: no parameter '" + name + "'");
  }

  /// Value of a family coefficient for Parametric models. The oscillator is
  /// parametrized by ω and reports ω².
  double coefficient(const std::string& name) const {
    if (family == Family::HarmonicOscillator && name == "omega2") {
      const double w = param("omega").value(0, 0);
      return w * w;
    }
    return param(name).value(0, 0);
  }

  std::vector<ad::Param*> parameters() {
    std::vector<ad::Param*> out;
    if (f) out = f->parameters();
    if (H) {
      for (ad::Param* p : H->parameters()) out.push_back(p);
    }
    for (auto& p : params) out.push_back(&p);
    return out;
  }

  std::vector<const ad::Param*> parameters() const {
    auto self = const_cast<ModelSpec*>(this)->parameters();
    return {self.begin(), self.end()};
  }

  void validate() const {
    if (d_x <= 0 || d_u < 0) throw ConfigError("ModelSpec: invalid dimensions");
    if (norm.x_mean.size() != d_x || norm.x_std.size() != d_x || norm.u_mean.size() != d_u ||
        norm.u_std.size() != d_u) {
      throw ConfigError("ModelSpec: normalization dimensions do not match");
    }
    if (lambda_res < 0.0) throw ConfigError("ModelSpec: lambda_res must be >= 0");
    for (Eigen::Index i : outputs) {
      if (i < 0 || i >= d_x) throw ConfigError("ModelSpec: output index out of range");
    }
    switch (kind) {
      case ModelKind::HamiltonianGeneral:
      case ModelKind::HamiltonianSecondOrder:
        if (d_x % 2 != 0) throw ConfigError("ModelSpec: Hamiltonian kinds need an even state dimension");
        if (!H) throw ConfigError("ModelSpec: Hamiltonian kinds need H_theta");
        break;
      case ModelKind::ResidualOnPrior:
        if (A_prior.rows() != d_x || A_prior.cols() != d_x ||
            (d_u > 0 && (B_prior.rows() != d_x || B_prior.cols() != d_u))) {
          throw ConfigError("ModelSpec: prior matrices do not match the dimensions");
        }
        [[fallthrough]];
      case ModelKind::Free:
      case ModelKind::SecondOrderPairs:
        if (!f) throw ConfigError("ModelSpec: " + to_string(kind) + " needs f_theta");
        break;
      case ModelKind::Parametric:
      case ModelKind::ExtendedState:
        break;
    }
  }
};

namespace detail {

inline Var normalize(Tape& t, Var v, const Vector& mean, const Vector& std) {
  return (v - t.constant(mean)) * t.constant(std.cwiseInverse());
}

inline Var net_input(const ModelSpec& m, Tape& t, Var x, const std::optional<Var>& u) {
  Var xs = normalize(t, x, m.norm.x_mean, m.norm.x_std);
  if (m.d_u == 0) return xs;
  return ad::vcat({xs, normalize(t, *u, m.norm.u_mean, m.norm.u_std)});
}

// Scale of H so that J∇H has the magnitude of the state derivatives.
inline double hamiltonian_scale(const ModelSpec& m) {
  const Eigen::Index n = m.d_x / 2;
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += m.norm.x_std(i) * m.norm.x_std(i + n);
  return s / static_cast<double>(n);
}

inline Var residual_output(const ModelSpec& m, Tape& t, Var x, const std::optional<Var>& u) {
  return m.f->forward(t, net_input(m, t, x, u));
}

}  // namespace detail

/// H_θ on the tape (HamiltonianGeneral: H(x); SecondOrder: H(x_q)).
inline Var hamiltonian(const ModelSpec& m, Tape& t, Var x) {
  if (!m.H) throw UsageError("hamiltonian: model has no H_theta");
  const double c = detail::hamiltonian_scale(m);
  if (m.kind == ModelKind::HamiltonianSecondOrder) {
    const Eigen::Index n = m.d_x / 2;
    Var q = ad::rows(x, 0, n);
    return c * m.H->forward(t, detail::normalize(t, q, m.norm.x_mean.head(n), m.norm.x_std.head(n)));
  }
  return c * m.H->forward(t, detail::normalize(t, x, m.norm.x_mean, m.norm.x_std));
}

/// Structured vector field for a batch: x is d_x x B, u is d_u x B.
inline Var eval_field(const ModelSpec& m, Tape& t, double time, Var x, const std::optional<Var>& u) {
  (void)time;
  if (x.rows() != m.d_x) throw ConfigError("eval_field: state has the wrong dimension");
  if (m.d_u > 0 && (!u || u->rows() != m.d_u)) {
    throw ConfigError("eval_field: input has the wrong dimension");
  }
  switch (m.kind) {
    case ModelKind::Free: {
      return t.constant(m.norm.x_std) * detail::residual_output(m, t, x, u);
    }
    case ModelKind::HamiltonianGeneral: {
      if (m.d_x % 2 != 0) throw ConfigError("eval_field: Hamiltonian kinds need an even state dimension");
      const Eigen::Index n = m.d_x / 2;
      const double c = detail::hamiltonian_scale(m);
      Var xs = detail::normalize(t, x, m.norm.x_mean, m.norm.x_std);
      Var g = (c * m.H->input_gradient(t, xs)) * t.constant(m.norm.x_std.cwiseInverse());
      return ad::vcat({ad::rows(g, n, n), -ad::rows(g, 0, n)});
    }
    case ModelKind::HamiltonianSecondOrder: {
      if (m.d_x % 2 != 0) throw ConfigError("eval_field: Hamiltonian kinds need an even state dimension");
      const Eigen::Index n = m.d_x / 2;
      const double c = detail::hamiltonian_scale(m);
      Var q = ad::rows(x, 0, n);
      Var qs = detail::normalize(t, q, m.norm.x_mean.head(n), m.norm.x_std.head(n));
      Var g = (c * m.H->input_gradient(t, qs)) * t.constant(Vector(m.norm.x_std.head(n).cwiseInverse()));
      return ad::vcat({ad::rows(x, n, n), -g});
    }
    case ModelKind::SecondOrderPairs: {
      Var r = detail::residual_output(m, t, x, u);
      std::vector<Var> out;
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < m.d_x; ++i) {
        auto it = std::find_if(m.pair_map.begin(), m.pair_map.end(),
                               [i](const auto& p) { return p.first == i; });
        if (it != m.pair_map.end()) {
          out.push_back(ad::row(x, it->second));
        } else {
          out.push_back(m.norm.x_std(i) * ad::row(r, k++));
        }
      }
      return ad::vcat(out);
    }
    case ModelKind::Parametric: {
      std::vector<Var> c;
      for (const auto& p : m.params) c.push_back(t.param(p));
      if (m.family == Family::HarmonicOscillator) c[0] = c[0] * c[0];
      return family_field(m.family, c, x, u);
    }
    case ModelKind::ExtendedState: {
      const Eigen::Index k = m.extended_dim();
      const Eigen::Index d = m.d_x - k;
      std::vector<Var> c;
      for (Eigen::Index i = 0; i < k; ++i) c.push_back(ad::row(x, d + i));
      Var phys = family_field(m.family, c, ad::rows(x, 0, d), u);
      return ad::vcat({phys, t.constant(Matrix::Zero(k, x.cols()))});
    }
    case ModelKind::ResidualOnPrior: {
      Var prior = ad::matmul(t.constant(m.A_prior), x);
      if (m.d_u > 0) prior = prior + ad::matmul(t.constant(m.B_prior), *u);
      return prior + t.constant(m.norm.x_std) * detail::residual_output(m, t, x, u);
    }
  }
  throw UsageError("eval_field: unknown kind");
}

/// Off-tape evaluation at a single point.
inline Vector eval_field(const ModelSpec& m, double time, const Vector& x, const Vector& u = {}) {
  Tape t;
  std::optional<Var> uv;
  if (m.d_u > 0) uv = t.constant(u);
  return eval_field(m, t, time, t.constant(x), uv).value();
}

/// λ_res times the mean squared norm of the residual network output over
/// the columns of `states`.
inline Var residual_penalty(const ModelSpec& m, Tape& t, Var states, const std::optional<Var>& u) {
  if (m.kind != ModelKind::ResidualOnPrior) {
    throw UsageError("residual_penalty: model is not a residual model");
  }
  if (m.lambda_res == 0.0) return t.constant(Matrix::Zero(1, 1));
  Var r = detail::residual_output(m, t, states, u);
  return (m.lambda_res / static_cast<double>(states.cols())) * ad::sum_squares(r);
}

inline double residual_penalty(const ModelSpec& m, const Matrix& states, const Matrix& u = {}) {
  Tape t;
  std::optional<Var> uv;
  if (m.d_u > 0) uv = t.constant(u);
  return residual_penalty(m, t, t.constant(states), uv).scalar();
}

/// Default initialization ranges of the physical scalars.
inline std::vector<ParamRange> default_param_ranges(Family f) {
  switch (f) {
    case Family::HarmonicOscillator: return {{"omega", 0.5, 2.0}};
    case Family::VanDerPol: return {{"mu", 0.5, 1.5}};
    case Family::FitzHughNagumo: return {{"eps_fhn", 0.05, 0.15}, {"gamma", 1.0, 2.0}, {"beta", 0.5, 1.1}};
    case Family::Earthquake: return {{"k_over_m", 8.0, 12.0}};
  }
  return {};
}

struct ModelOptions {
  ModelKind kind = ModelKind::Free;
  Family family = Family::HarmonicOscillator;
  std::vector<Eigen::Index> outputs = {0};
  Eigen::Index d_x = 0;  // 0 = family default
  Eigen::Index d_u = -1;  // -1 = family default
  std::vector<int> hidden = {50, 50};
  std::vector<ParamRange> param_ranges;  // empty = family defaults
  Matrix A_prior, B_prior;
  double lambda_res = 0.0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pair_map;
};

/// Builds a model with freshly initialized networks and parameters.
inline ModelSpec make_model(const ModelOptions& o, std::mt19937_64& rng) {
  auto [fx, fu] = family_dims(o.family);
  ModelSpec m;
  m.kind = o.kind;
  m.family = o.family;
  m.d_x = o.d_x > 0 ? o.d_x : fx;
  m.d_u = o.d_u >= 0 ? o.d_u : fu;
  m.outputs = o.outputs;
  m.lambda_res = o.lambda_res;
  m.pair_map = o.pair_map;
  if (m.kind == ModelKind::ExtendedState) m.d_x = fx + m.extended_dim();
  auto widths = [&](Eigen::Index in, Eigen::Index out) {
    std::vector<int> w{static_cast<int>(in)};
    w.insert(w.end(), o.hidden.begin(), o.hidden.end());
    w.push_back(static_cast<int>(out));
    return w;
  };
  switch (m.kind) {
    case ModelKind::Free:
    case ModelKind::ResidualOnPrior:
      m.f = ad::Mlp("f", widths(m.d_x + m.d_u, m.d_x), rng);
      m.A_prior = o.A_prior;
      m.B_prior = o.B_prior;
      break;
    case ModelKind::SecondOrderPairs:
      m.f = ad::Mlp("f", widths(m.d_x + m.d_u, m.d_x - static_cast<Eigen::Index>(m.pair_map.size())),
                    rng);
      break;
    case ModelKind::HamiltonianGeneral:
      if (m.d_x % 2 != 0) throw ConfigError("make_model: Hamiltonian kinds need an even state dimension");
      m.H = ad::Mlp("H", widths(m.d_x, 1), rng);
      break;
    case ModelKind::HamiltonianSecondOrder:
      if (m.d_x % 2 != 0) throw ConfigError("make_model: Hamiltonian kinds need an even state dimension");
      m.H = ad::Mlp("H", widths(m.d_x / 2, 1), rng);
      break;
    case ModelKind::Parametric: {
      if (m.d_x != fx || m.d_u != fu) throw ConfigError("make_model: parametric dimensions fixed by the family");
      auto ranges = o.param_ranges.empty() ? default_param_ranges(o.family) : o.param_ranges;
      for (const auto& r : ranges) {
        if (!(r.lo <= r.hi)) throw ConfigError("make_model: empty range for " + r.name);
        std::uniform_real_distribution<double> dist(r.lo, r.hi);
        m.params.push_back({r.name, Matrix::Constant(1, 1, dist(rng))});
      }
      break;
    }
    case ModelKind::ExtendedState:
      break;
  }
  m.norm = Normalization::identity(m.d_x, m.d_u);
  m.validate();
  return m;
}

}  // namespace structnode::priors
