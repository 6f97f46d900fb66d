// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task-identity prediction from per-task relevance signatures, and the logit
// scaling applied to the predicted head.

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "duallora/dual_lora.hpp"
#include "duallora/linalg.hpp"

namespace duallora {

struct Signature {
  Vec values;               // ω_τ for every psi block known at creation time
  bool degenerate = false;  // every psi block was empty
};

/// π = (ω₁, …, ω_t) of v against the psi blocks of one layer (normally the last).
[[nodiscard]] Signature compute_signature(std::span<const double> v, const LayerMemory& layer);

class SignatureSet {
 public:
  SignatureSet() = default;
  /// Throws ParameterError unless lambda >= 0.
  explicit SignatureSet(double lambda);

  [[nodiscard]] double lambda() const noexcept { return lambda_; }
  [[nodiscard]] std::size_t size() const noexcept { return signatures_.size(); }
  [[nodiscard]] bool empty() const noexcept { return signatures_.empty(); }
  [[nodiscard]] const Vec& at(std::size_t t) const { return signatures_.at(t); }
  [[nodiscard]] const std::vector<Vec>& all() const noexcept { return signatures_; }

  /// Stored signatures are never modified afterwards.
  void add(Vec signature);

  friend bool operator==(const SignatureSet&, const SignatureSet&) = default;

 private:
  double lambda_ = 2.0;
  std::vector<Vec> signatures_;
};

/// Cosine similarity after zero-extending the shorter vector; 0 if either is zero.
[[nodiscard]] double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct TaskPrediction {
  bool valid = false;  // false when π* is the zero vector
  std::size_t task = 0;
  double confidence = 0.0;  // δ̂ = λ·(g_best − g_runner_up), runner-up 0 for a single task
  Vec similarities;
};

/// Throws StateError if no signature is stored.
[[nodiscard]] TaskPrediction predict_task(std::span<const double> pi_star, const SignatureSet& set);

/// Multiplies logits[range.first, range.second) by (1 + delta).
void scale_logits(std::span<double> logits, std::pair<std::size_t, std::size_t> range, double delta);

}  // namespace duallora
