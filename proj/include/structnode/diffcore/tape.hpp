#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "structnode/errors.hpp"

namespace structnode::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A named trainable tensor. Modules own their Params; a Tape only refers to
/// them by address for the lifetime of one forward/backward pass.
struct Param {
  std::string name;
  Matrix value;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Wengert list over dense matrices. Every recorded node keeps its value and
/// a closure that pushes its adjoint into its operands. Scalars are 1x1.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), nullptr, false});
    return {this, nodes_.size() - 1};
  }

  Var variable(Matrix value) {
    nodes_.push_back({std::move(value), Matrix(), nullptr, true});
    return {this, nodes_.size() - 1};
  }

  Var constant(double v) { return constant(Matrix::Constant(1, 1, v)); }
  Var variable(double v) { return variable(Matrix::Constant(1, 1, v)); }

  /// Leaf bound to a Param. Repeated calls with the same Param return the
  /// same node, so gradients from every use accumulate in one place.
  Var param(const Param& p) {
    auto it = params_.find(&p);
    if (it != params_.end()) return {this, it->second};
    Var v = variable(p.value);
    params_.emplace(&p, v.id());
    return v;
  }

  /// Records an operation. `fn` is dropped when no operand needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> operands, Backprop fn) {
    bool needs = false;
    for (const Var& op : operands) needs = needs || nodes_[op.id()].needs_grad;
    nodes_.push_back({std::move(value), Matrix(), needs ? std::move(fn) : nullptr, needs});
    return {this, nodes_.size() - 1};
  }

  Var record(Matrix value, const std::vector<Var>& operands, Backprop fn) {
    bool needs = false;
    for (const Var& op : operands) needs = needs || nodes_[op.id()].needs_grad;
    nodes_.push_back({std::move(value), Matrix(), needs ? std::move(fn) : nullptr, needs});
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0) {
      n.adjoint = g;
    } else {
      n.adjoint += g;
    }
  }

  /// Reverse sweep from a scalar root.
  void backward(Var root) {
    const Matrix& v = root.value();
    if (v.rows() != 1 || v.cols() != 1) {
      throw UsageError("backward: root must be scalar, got " + std::to_string(v.rows()) + "x" +
                       std::to_string(v.cols()));
    }
    backward(root, Matrix::Ones(1, 1));
  }

  /// Reverse sweep with an explicit seed (vector-Jacobian product).
  void backward(Var root, const Matrix& seed) {
    if (seed.rows() != root.rows() || seed.cols() != root.cols()) {
      throw UsageError("backward: seed shape does not match root");
    }
    zero_adjoints();
    accumulate(root.id(), seed);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backprop || n.adjoint.size() == 0) continue;
      n.backprop(*this, n.adjoint);
    }
  }

  void zero_adjoints() {
    for (Node& n : nodes_) n.adjoint.resize(0, 0);
  }

  /// Adjoint of a node; zeros when nothing reached it.
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }

  Matrix grad(const Param& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
    return grad(Var(const_cast<Tape*>(this), it->second));
  }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    Backprop backprop;
    bool needs_grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> params_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw UsageError("scalar(): node is not 1x1");
  return v(0, 0);
}

namespace detail {

// Broadcasting: an operand may be 1x1, a column (rows match) or a row (cols
// match) and is replicated up to the full shape.
inline bool broadcastable(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return true;
  if (m.size() == 1) return true;
  if (m.cols() == 1 && m.rows() == rows) return true;
  if (m.rows() == 1 && m.cols() == cols) return true;
  return false;
}

inline Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.size() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.cols() == 1) return m.replicate(1, cols);
  return m.replicate(rows, 1);
}

inline Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (cols == 1) return g.rowwise().sum();
  return g.colwise().sum();
}

inline std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Var& a, const Var& b,
                                                             const char* op) {
  Eigen::Index r = std::max(a.rows(), b.rows());
  Eigen::Index c = std::max(a.cols(), b.cols());
  if (!broadcastable(a.value(), r, c) || !broadcastable(b.value(), r, c)) {
    throw ConfigError(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                      "x" + std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
  return {r, c};
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_prime(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double silu_second(double x) {
  const double s = sigmoid(x);
  return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}

// Elementwise unary op with derivative d(x) evaluated at the input.
template <class F, class D>
Var unary(Var a, F f, D d) {
  Matrix out = a.value().unaryExpr(f);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, d](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(d)));
  });
}

}  // namespace detail

inline Var operator+(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a, b, "add");
  Matrix out = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, detail::reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
    t.accumulate(ib, detail::reduce_to(g, t.value(ib).rows(), t.value(ib).cols()));
  });
}

inline Var operator-(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record(-a.value(), {a},
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, -g); });
}

inline Var operator-(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a, b, "sub");
  Matrix out = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, detail::reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
    t.accumulate(ib, -detail::reduce_to(g, t.value(ib).rows(), t.value(ib).cols()));
  });
}

/// Elementwise product with broadcasting.
inline Var operator*(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a, b, "mul");
  Matrix ea = detail::expand(a.value(), r, c);
  Matrix eb = detail::expand(b.value(), r, c);
  Matrix out = ea.cwiseProduct(eb);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, r, c](Tape& t, const Matrix& g) {
    const Matrix& va = t.value(ia);
    const Matrix& vb = t.value(ib);
    if (t.needs_grad(ia)) {
      t.accumulate(ia, detail::reduce_to(g.cwiseProduct(detail::expand(vb, r, c)), va.rows(),
                                         va.cols()));
    }
    if (t.needs_grad(ib)) {
      t.accumulate(ib, detail::reduce_to(g.cwiseProduct(detail::expand(va, r, c)), vb.rows(),
                                         vb.cols()));
    }
  });
}

/// Elementwise quotient with broadcasting.
inline Var operator/(Var a, Var b) {
  auto [r, c] = detail::broadcast_shape(a, b, "div");
  Matrix ea = detail::expand(a.value(), r, c);
  Matrix eb = detail::expand(b.value(), r, c);
  Matrix out = ea.cwiseQuotient(eb);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, r, c](Tape& t, const Matrix& g) {
    const Matrix& va = t.value(ia);
    const Matrix& vb = t.value(ib);
    Matrix eb = detail::expand(vb, r, c);
    if (t.needs_grad(ia)) {
      t.accumulate(ia, detail::reduce_to(g.cwiseQuotient(eb), va.rows(), va.cols()));
    }
    if (t.needs_grad(ib)) {
      Matrix ea = detail::expand(va, r, c);
      Matrix d = -g.cwiseProduct(ea).cwiseQuotient(eb.cwiseProduct(eb));
      t.accumulate(ib, detail::reduce_to(d, vb.rows(), vb.cols()));
    }
  });
}

inline Var operator*(double s, Var a) {
  const std::size_t ia = a.id();
  return a.tape().record(s * a.value(), {a},
                         [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, s * g); });
}

inline Var operator*(Var a, double s) { return s * a; }

inline Var operator+(Var a, double s) {
  const std::size_t ia = a.id();
  Matrix out = a.value().array() + s;
  return a.tape().record(std::move(out), {a},
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

inline Var operator+(double s, Var a) { return a + s; }
inline Var operator-(Var a, double s) { return a + (-s); }
inline Var operator-(double s, Var a) { return (-a) + s; }

/// Matrix product a·b.
inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// Transposed product aᵀ·b.
inline Var matmul_tn(Var a, Var b) {
  if (a.rows() != b.rows()) throw ConfigError("matmul_tn: row counts differ");
  Matrix out = a.value().transpose() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, t.value(ib) * g.transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia) * g);
  });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, [](double x) { return detail::sigmoid(x); },
                       [](double x) {
                         const double s = detail::sigmoid(x);
                         return s * (1.0 - s);
                       });
}

inline Var silu(Var a) {
  return detail::unary(a, [](double x) { return detail::silu(x); },
                       [](double x) { return detail::silu_prime(x); });
}

/// d/dx silu(x), itself differentiable (used to build input gradients).
inline Var silu_prime(Var a) {
  return detail::unary(a, [](double x) { return detail::silu_prime(x); },
                       [](double x) { return detail::silu_second(x); });
}

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double x) {
                         const double th = std::tanh(x);
                         return 1.0 - th * th;
                       });
}

inline Var exp(Var a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double x) { return std::exp(x); });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

/// Sum of all entries (1x1).
inline Var sum(Var a) {
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a},
                         [ia, r, c](Tape& t, const Matrix& g) {
                           t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                         });
}

/// Sum of squared entries (1x1).
inline Var sum_squares(Var a) {
  const std::size_t ia = a.id();
  return a.tape().record(Matrix::Constant(1, 1, a.value().squaredNorm()), {a},
                         [ia](Tape& t, const Matrix& g) {
                           t.accumulate(ia, 2.0 * g(0, 0) * t.value(ia));
                         });
}

/// Rows [start, start+count).
inline Var rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ConfigError("rows: slice out of range");
  }
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out = a.value().middleRows(start, count);
  return a.tape().record(std::move(out), {a}, [ia, r, c, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleRows(start, count) = g;
    t.accumulate(ia, full);
  });
}

inline Var row(Var a, Eigen::Index i) { return rows(a, i, 1); }

/// Vertical concatenation; all parts share the column count.
inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("vcat: no operands");
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw ConfigError("vcat: column counts differ");
    r += p.rows();
  }
  Matrix out(r, c);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, offsets](Tape& t, const Matrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.needs_grad(ids[k])) continue;
          t.accumulate(ids[k], g.middleRows(offsets[k], t.value(ids[k]).rows()));
        }
      });
}

}  // namespace structnode::ad
