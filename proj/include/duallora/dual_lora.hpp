// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature-subspace memory and the projections that keep adapter updates away
// from it (orthogonal adapters) or inside the newest task's residual subspace
// (residual adapter), plus the relevance-weighted residual path used at
// inference.
//
// Stream orientation. The key update enters attention scores as
// Q₁·(ΔOᵏ)ᵀ·aⱼᵀ, so the key constraint is ΔOᵏ·(Φᵏ)ᵀ = 0; with ΔOᵏ = B·A this
// holds whenever the rows of A avoid span Φᵏ. The value update enters as
// S₁·ΔOᵛ, so the value constraint is Φᵛ·ΔOᵛ = 0, which holds whenever the
// columns of B avoid span Φᵛ.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "duallora/adapters.hpp"
#include "duallora/linalg.hpp"
#include "duallora/vit.hpp"

namespace duallora {

struct LayerMemory {
  Basis phi_k;
  Basis phi_v;
  std::vector<Basis> psi;  // one per finished task, rows appended to phi_v at that task

  [[nodiscard]] std::size_t r_prime() const noexcept { return phi_v.rank(); }
  friend bool operator==(const LayerMemory&, const LayerMemory&) = default;
};

class FeatureMemory {
 public:
  FeatureMemory() = default;
  FeatureMemory(std::size_t layers, std::size_t dim);

  [[nodiscard]] std::size_t layer_count() const noexcept { return layers_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t task_count() const noexcept {
    return layers_.empty() ? 0 : layers_.front().psi.size();
  }
  [[nodiscard]] const LayerMemory& layer(std::size_t l) const { return layers_.at(l); }
  [[nodiscard]] LayerMemory& layer(std::size_t l) { return layers_.at(l); }

  /// Throws StateError if an invariant is broken: orthonormal bases, phi_v equal to the
  /// concatenated psi blocks, and one psi block per task on every layer.
  void validate() const;

  friend bool operator==(const FeatureMemory&, const FeatureMemory&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<LayerMemory> layers_;
};

struct LayerFeatures {
  Mat keys;    // m × d, rows Q₁ per sample
  Mat values;  // m × d, rows S₁ per sample
};

struct TaskFeatures {
  std::vector<LayerFeatures> layers;
  Vec mean_final_value;  // mean of S₁ at the last block
  std::vector<std::size_t> sample_indices;
};

/// Taps m randomly chosen samples (training-mode forward). Throws ParameterError if
/// m is zero or exceeds the number of images.
[[nodiscard]] TaskFeatures collect_features(const VitModel& model, std::span<const Vec> images,
                                            std::size_t m, std::uint64_t seed,
                                            std::uint32_t task = 0);

/// Rows to append to phi so that it also covers `features` (rows of m × d) up to
/// the energy fraction epsilon of the part phi leaves unexplained.
[[nodiscard]] Basis extend_basis(const Basis& phi, const Mat& features, double epsilon);

struct MemoryUpdate {
  std::vector<std::size_t> key_added;    // per layer
  std::vector<std::size_t> value_added;  // per layer, the rank r_t of the new psi block
};

/// Grows both streams on every layer and records the new psi blocks.
MemoryUpdate update_feature_memory(FeatureMemory& memory, const TaskFeatures& features,
                                   double epsilon);

/// Key stream: grad A ← grad A·(I − ΦᵏᵀΦᵏ). Value stream: grad B ← (I − ΦᵛᵀΦᵛ)·grad B.
void project_orthogonal_gradients(LayerAdapterGrads& grads, const LayerMemory& memory);

/// grad B ← ΨᵀΨ·grad B. An empty Ψ freezes the residual adapter (both factor grads zeroed).
void project_residual_gradients(LoraGrads& grads, const Basis& psi);

/// Re-projects live factors so the invariants above hold before the first step of a task:
/// rows of key A avoid Φᵏ, columns of value B avoid Φᵛ, columns of residual B lie in Ψ.
void align_live_factors(AdapterSet& adapters, const FeatureMemory& memory, bool residual);

struct LayerDynamicMemory {
  Vec omega;       // ω_τ per task
  Mat omega_rows;  // Ω = blockdiag(√ω_τ·I) · [Ψ₁; …; Ψ_T], r′ × d
};

struct DynamicMemoryContext {
  std::vector<LayerDynamicMemory> layers;
  /// False when every psi block is empty; the residual path is then switched off.
  bool enabled = false;
};

/// Ω from the given relevance values (one per psi block).
[[nodiscard]] Mat assemble_omega(const std::vector<Basis>& psi, std::span<const double> omega);

/// ω_τ from v = S₁ of each layer, then Ω per layer.
[[nodiscard]] DynamicMemoryContext build_dm_context(const FeatureMemory& memory,
                                                    const std::vector<Vec>& v_per_layer);

/// a·ΩᵀΩ·R, the modulated residual contribution to V.
[[nodiscard]] Mat modulated_residual(const Mat& a, const Mat& omega_rows, const Mat& residual);

/// Per-layer Ψ_τ and Ψ_τ·R for the low-rank inference path.
[[nodiscard]] ResidualModulation build_residual_modulation(const FeatureMemory& memory,
                                                           const AdapterSet& adapters);

}  // namespace duallora
