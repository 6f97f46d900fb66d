// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters attached to the key and value projections of every
// attention block, plus the value-stream residual adapter.
//
// Each task trains a fresh factor pair per stream; at the task boundary the
// product B·A is folded into a dense per-layer accumulator. The accumulators
// therefore hold Σ_τ ΔO_τ (and Σ_τ ΔR_τ), and the live factors hold only the
// current task's increment.

#pragma once

#include <cstddef>
#include <vector>

#include "duallora/linalg.hpp"
#include "duallora/rng.hpp"

namespace duallora {

/// W += B·A with A: r×d and B: d×r.
struct LoraPair {
  Mat a;
  Mat b;

  [[nodiscard]] std::size_t rank() const noexcept { return a.rows(); }
  [[nodiscard]] Mat product() const { return matmul(b, a); }
  friend bool operator==(const LoraPair&, const LoraPair&) = default;
};

struct LayerAdapters {
  LoraPair key;
  LoraPair value;
  LoraPair residual;
  Mat merged_key;       // Σ ΔO^k of finished tasks
  Mat merged_value;     // Σ ΔO^v of finished tasks
  Mat merged_residual;  // Σ ΔR of finished tasks

  /// Total residual adapter R (merged plus live increment).
  [[nodiscard]] Mat residual_total() const { return merged_residual + residual.product(); }
  friend bool operator==(const LayerAdapters&, const LayerAdapters&) = default;
};

class AdapterSet {
 public:
  AdapterSet() = default;
  /// All-zero adapters. Throws ParameterError unless 0 <= rank <= dim / 2.
  AdapterSet(std::size_t layers, std::size_t dim, std::size_t rank);

  [[nodiscard]] std::size_t rank() const noexcept { return rank_; }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }
  [[nodiscard]] bool empty() const noexcept { return layers_.empty(); }

  [[nodiscard]] LayerAdapters& layer(std::size_t l) { return layers_.at(l); }
  [[nodiscard]] const LayerAdapters& layer(std::size_t l) const { return layers_.at(l); }

  /// Fresh live factors for a new task: A ~ N(0, 1/d), B = 0, so every live
  /// product, including R's increment, starts at exactly zero.
  void begin_task(Rng& rng);

  /// Fold live products into the accumulators and zero the live factors.
  void merge_live();

  friend bool operator==(const AdapterSet&, const AdapterSet&) = default;

 private:
  std::size_t dim_ = 0;
  std::size_t rank_ = 0;
  std::vector<LayerAdapters> layers_;
};

/// One task's residual subspace at one layer, with Ψ_τ·R cached.
struct ResidualComponent {
  Mat psi;     // r_τ × d
  Mat psi_r;   // r_τ × d, Ψ_τ·R
};

/// Per-layer inputs for dynamic-memory inference.
struct LayerModulation {
  std::vector<ResidualComponent> components;  // one per finished task
};

struct ResidualModulation {
  std::vector<LayerModulation> layers;
};

/// ω_τ = ‖Ψ_τ·v‖ / (r_τ‖v‖); zero when Ψ_τ is empty or v is the zero vector.
[[nodiscard]] double relevance(const Mat& psi, std::span<const double> v);

}  // namespace duallora
