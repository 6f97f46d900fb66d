// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytical matmul FLOPs for a ViT encoder and several parameter-efficient
// continual-learning schemes. Only 2mnp multiply terms are counted; softmax,
// normalisation and activations are ignored.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace duallora::flops {

enum class Scheme { kVit, kLora, kDualLora, kL2p, kDualPrompt, kCoda, kInfLora };
enum class Phase { kTrain, kInfer };

[[nodiscard]] std::string_view scheme_name(Scheme s) noexcept;
[[nodiscard]] std::string_view phase_name(Phase p) noexcept;
/// Throws ParameterError on an unknown name.
[[nodiscard]] Scheme parse_scheme(std::string_view name);
[[nodiscard]] const std::vector<Scheme>& all_schemes() noexcept;

struct ArchParams {
  double layers = 12;      // L
  double batch = 16;       // b
  double seq_len = 197;    // n
  double dim = 768;        // d
  double rank = 10;        // r
  double samples = 150;    // m, feature rows per SVD
  // Prompt-scheme parameters; only the schemes that use them require them.
  std::optional<double> pool;          // p
  std::optional<double> prompt_len;    // e
  std::optional<double> e_prompt_len;  // e_E
  std::optional<double> g_prompt_len;  // e_G
  std::optional<double> top_k;         // k
  std::optional<double> prompt_layers; // l

  /// Throws ParameterError unless every set field is positive.
  void validate() const;
};

/// Table-level defaults for a scheme: L=12, b=16, n=197, d=768, r=10, m=150 plus
/// that scheme's own prompt settings.
[[nodiscard]] ArchParams reference_params(Scheme s);

struct Term {
  std::string name;
  double flops = 0.0;
};

struct FlopsProfile {
  Scheme scheme = Scheme::kVit;
  Phase phase = Phase::kInfer;
  double flops = 0.0;
  bool lower_bound = false;  // matching/optimisation cost left out
  std::vector<Term> terms;   // sums to flops
  std::string note;
};

[[nodiscard]] double vit_forward(double layers, double batch, double n, double d) noexcept;
[[nodiscard]] double vit_backward(double layers, double batch, double n, double d) noexcept;
[[nodiscard]] double svd_flops(double d, double m) noexcept;

enum class AdapterKind { kLora, kDualLora };
/// Extra forward cost of the adapters. The strict form omits the batch factor.
[[nodiscard]] double adapter_flops(AdapterKind kind, double layers, double batch, double n,
                                   double d, double r, bool strict_paper) noexcept;

/// Throws ParameterError when a prompt scheme lacks one of its parameters.
[[nodiscard]] FlopsProfile scheme_flops(Scheme s, Phase phase, const ArchParams& p,
                                        bool strict_paper = false);

}  // namespace duallora::flops
