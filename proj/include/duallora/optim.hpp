// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "duallora/linalg.hpp"

namespace duallora {

/// Adam with bias correction. Parameters are addressed by slot; the caller
/// applies the returned steps, which lets it post-process them first.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Advances the shared step counter; call once per optimisation step.
  void begin_step() noexcept { ++t_; }
  /// step[i] = −lr·m̂ᵢ/(√v̂ᵢ + eps). The slot is created on first use.
  void compute_step(std::size_t slot, std::span<const double> grad, std::span<double> step);
  /// Forgets all moments and the step counter.
  void reset() noexcept;

  [[nodiscard]] long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

}  // namespace duallora
