#pragma once

#include <cmath>
#include <vector>

#include "structnode/diffcore/tape.hpp"

namespace structnode::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed, ordered parameter list.
class Adam {
 public:
  Adam() = default;

  explicit Adam(std::vector<Param*> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (const Param* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  long steps() const { return step_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  void step(const std::vector<Matrix>& grads, double lr) {
    if (grads.size() != params_.size()) throw UsageError("Adam: gradient count mismatch");
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (grads[k].rows() != params_[k]->value.rows() ||
          grads[k].cols() != params_[k]->value.cols()) {
        throw UsageError("Adam: gradient shape mismatch for " + params_[k]->name);
      }
      if (!grads[k].allFinite()) {
        throw TrainingError("Adam: non-finite gradient for parameter " + params_[k]->name);
      }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * grads[k];
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * grads[k].cwiseProduct(grads[k]);
      auto m_hat = m_[k].array() / c1;
      auto v_hat = v_[k].array() / c2;
      params_[k]->value.array() -= lr * m_hat / (v_hat.sqrt() + cfg_.epsilon);
    }
  }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  long step_ = 0;
};

}  // namespace structnode::ad
