#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "structnode/diffcore/mlp.hpp"
#include "structnode/diffcore/tape.hpp"

namespace structnode::ad {

/// Gated recurrent unit with update convention h' = (1-z)⊙ĥ + z⊙h.
class Gru {
 public:
  Gru() = default;

  Gru(std::string name, Eigen::Index input_dim, Eigen::Index hidden_dim, std::mt19937_64& rng)
      : name_(std::move(name)) {
    if (input_dim <= 0 || hidden_dim <= 0) throw ConfigError("Gru " + name_ + ": bad dimensions");
    for (const char* gate : {"z", "r", "h"}) {
      w_.push_back({name_ + ".W" + gate, glorot_uniform(hidden_dim, input_dim, rng)});
      u_.push_back({name_ + ".U" + gate, glorot_uniform(hidden_dim, hidden_dim, rng)});
      b_.push_back({name_ + ".b" + gate, Matrix::Zero(hidden_dim, 1)});
    }
  }

  /// All gate weights zero; handy for tests that set entries by hand.
  static Gru zeros(std::string name, Eigen::Index input_dim, Eigen::Index hidden_dim) {
    Gru g;
    g.name_ = std::move(name);
    for (const char* gate : {"z", "r", "h"}) {
      g.w_.push_back({g.name_ + ".W" + gate, Matrix::Zero(hidden_dim, input_dim)});
      g.u_.push_back({g.name_ + ".U" + gate, Matrix::Zero(hidden_dim, hidden_dim)});
      g.b_.push_back({g.name_ + ".b" + gate, Matrix::Zero(hidden_dim, 1)});
    }
    return g;
  }

  Eigen::Index input_dim() const { return w_[0].value.cols(); }
  Eigen::Index hidden_dim() const { return u_[0].value.rows(); }

  // Gate index: 0 update, 1 reset, 2 candidate.
  Param& input_weight(int gate) { return w_.at(gate); }
  Param& hidden_weight(int gate) { return u_.at(gate); }
  Param& bias(int gate) { return b_.at(gate); }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (std::size_t k = 0; k < 3; ++k) {
      out.push_back(&w_[k]);
      out.push_back(&u_[k]);
      out.push_back(&b_[k]);
    }
    return out;
  }

  std::vector<const Param*> parameters() const {
    std::vector<const Param*> out;
    for (std::size_t k = 0; k < 3; ++k) {
      out.push_back(&w_[k]);
      out.push_back(&u_[k]);
      out.push_back(&b_[k]);
    }
    return out;
  }

  Var step(Tape& tape, Var h, Var x) const {
    if (h.rows() != hidden_dim() || x.rows() != input_dim() || h.cols() != x.cols()) {
      throw ConfigError("Gru " + name_ + ": dimension mismatch in step");
    }
    auto pre = [&](int k, Var hidden) {
      return matmul(tape.param(w_[k]), x) + matmul(tape.param(u_[k]), hidden) +
             tape.param(b_[k]);
    };
    Var z = sigmoid(pre(0, h));
    Var r = sigmoid(pre(1, h));
    Var cand = tanh(pre(2, r * h));
    return (1.0 - z) * cand + z * h;
  }

 private:
  std::string name_;
  std::vector<Param> w_, u_, b_;
};

}  // namespace structnode::ad
