// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/optim.hpp"

#include <cmath>

#include "duallora/errors.hpp"

namespace duallora {

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ParameterError("Adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("Adam: betas must lie in [0, 1)");
}

void Adam::compute_step(std::size_t slot, std::span<const double> grad, std::span<double> step) {
  if (t_ == 0) throw StateError("Adam: begin_step was not called");
  if (step.size() != grad.size()) throw DimensionError("Adam: step and gradient sizes differ");
  if (slot >= m_.size()) {
    m_.resize(slot + 1);
    v_.resize(slot + 1);
  }
  Vec& m = m_[slot];
  Vec& v = v_[slot];
  if (m.empty()) {
    m.assign(grad.size(), 0.0);
    v.assign(grad.size(), 0.0);
  }
  if (m.size() != grad.size()) throw DimensionError("Adam: slot size changed");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
    v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
    step[i] = -lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
  }
}

void Adam::reset() noexcept {
  t_ = 0;
  m_.clear();
  v_.clear();
}

}  // namespace duallora
