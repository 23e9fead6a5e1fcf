#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "structnode/diffcore/tape.hpp"

namespace structnode::ad {

/// x·σ(x) on plain doubles.
inline double silu(double x) { return detail::silu(x); }

/// Uniform ±sqrt(6/(fan_in+fan_out)) initialization.
inline Matrix glorot_uniform(Eigen::Index out, Eigen::Index in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(out, in);
  for (Eigen::Index j = 0; j < in; ++j) {
    for (Eigen::Index i = 0; i < out; ++i) w(i, j) = dist(rng);
  }
  return w;
}

/// Fully connected network: SiLU on hidden layers, affine output layer.
/// Inputs are laid out one sample per column.
class Mlp {
 public:
  Mlp() = default;

  /// widths = {in, hidden..., out}; weights Glorot-uniform, biases zero.
  Mlp(std::string name, const std::vector<int>& widths, std::mt19937_64& rng)
      : name_(std::move(name)) {
    if (widths.size() < 2) throw ConfigError("Mlp " + name_ + ": need at least two widths");
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      if (widths[k] <= 0 || widths[k + 1] <= 0) {
        throw ConfigError("Mlp " + name_ + ": layer widths must be positive");
      }
      add_layer(glorot_uniform(widths[k + 1], widths[k], rng), Vector::Zero(widths[k + 1]));
    }
  }

  /// Explicit layers (weight out×in, bias out).
  Mlp(std::string name, const std::vector<std::pair<Matrix, Vector>>& layers)
      : name_(std::move(name)) {
    if (layers.empty()) throw ConfigError("Mlp " + name_ + ": no layers");
    for (const auto& [w, b] : layers) {
      if (!weights_.empty() && w.cols() != weights_.back().value.rows()) {
        throw ConfigError("Mlp " + name_ + ": layer dimensions are not chain-compatible");
      }
      if (b.size() != w.rows()) throw ConfigError("Mlp " + name_ + ": bias size mismatch");
      add_layer(w, b);
    }
  }

  const std::string& name() const { return name_; }
  std::size_t layer_count() const { return weights_.size(); }
  Eigen::Index input_dim() const { return weights_.front().value.cols(); }
  Eigen::Index output_dim() const { return weights_.back().value.rows(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      n += static_cast<std::size_t>(weights_[k].value.size() + biases_[k].value.size());
    }
    return n;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      out.push_back(&weights_[k]);
      out.push_back(&biases_[k]);
    }
    return out;
  }

  std::vector<const Param*> parameters() const {
    std::vector<const Param*> out;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      out.push_back(&weights_[k]);
      out.push_back(&biases_[k]);
    }
    return out;
  }

  Var forward(Tape& tape, Var input) const {
    check_input(input);
    Var h = input;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      Var a = matmul(tape.param(weights_[k]), h) + tape.param(biases_[k]);
      h = (k + 1 < weights_.size()) ? silu(a) : a;
    }
    return h;
  }

  /// Off-tape evaluation.
  Matrix evaluate(const Matrix& input) const {
    Tape tape;
    return forward(tape, tape.constant(input)).value();
  }

  /// Gradient of a scalar-output network with respect to its input, built
  /// from differentiable ops so it can itself be backpropagated.
  Var input_gradient(Tape& tape, Var input) const {
    check_input(input);
    if (output_dim() != 1) {
      throw ConfigError("Mlp " + name_ + ": input_gradient needs a scalar output");
    }
    const std::size_t layers = weights_.size();
    std::vector<Var> pre;
    Var h = input;
    for (std::size_t k = 0; k + 1 < layers; ++k) {
      Var a = matmul(tape.param(weights_[k]), h) + tape.param(biases_[k]);
      pre.push_back(a);
      h = silu(a);
    }
    Var ones = tape.constant(Matrix::Ones(1, input.cols()));
    Var g = matmul_tn(tape.param(weights_[layers - 1]), ones);
    for (std::size_t k = layers - 1; k-- > 0;) {
      Var delta = g * silu_prime(pre[k]);
      g = matmul_tn(tape.param(weights_[k]), delta);
    }
    return g;
  }

 private:
  void add_layer(const Matrix& w, const Vector& b) {
    const std::size_t k = weights_.size();
    weights_.push_back({name_ + ".W" + std::to_string(k), w});
    biases_.push_back({name_ + ".b" + std::to_string(k), Matrix(b)});
  }

  void check_input(const Var& input) const {
    if (weights_.empty()) throw ConfigError("Mlp " + name_ + ": uninitialized");
    if (input.rows() != input_dim()) {
      throw ConfigError("Mlp " + name_ + ": input has " + std::to_string(input.rows()) +
                        " rows, expected " + std::to_string(input_dim()));
    }
  }

  std::string name_;
  std::vector<Param> weights_;
  std::vector<Param> biases_;
};

}  // namespace structnode::ad
