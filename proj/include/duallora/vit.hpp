// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// A miniature single-head vision transformer with pre-norm blocks:
//
//   x0     = [cls; patches·P + p] + pos
//   a      = LN1(x)
//   h      = softmax(Q·Kᵀ/√d)·V,  Q = a·Wq, K = a·(Wk + Oᵏ), V = a·(Wv + Oᵛ) + a·R
//   x      = x + h·Wo + bo
//   x      = x + GELU(LN2(x)·W1 + b1)·W2 + b2
//   logits = heads(LNf(x_L)[0])
//
// Only the key/value adapters, the residual adapter and the classifier heads
// are trainable after backbone pretraining.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "duallora/adapters.hpp"
#include "duallora/linalg.hpp"

namespace duallora {

struct EncoderConfig {
  int layers = 4;
  int embed_dim = 32;
  int ffn_ratio = 4;
  int image_side = 8;
  int patch_side = 4;
  int channels = 1;

  [[nodiscard]] int patches_per_side() const noexcept { return image_side / patch_side; }
  [[nodiscard]] int patch_count() const noexcept { return patches_per_side() * patches_per_side(); }
  /// Patches plus the class token.
  [[nodiscard]] int seq_len() const noexcept { return patch_count() + 1; }
  [[nodiscard]] int patch_dim() const noexcept { return patch_side * patch_side * channels; }
  [[nodiscard]] int pixel_count() const noexcept { return image_side * image_side * channels; }
  /// Throws ParameterError on d < 4, L < 1, n < 2 or a side not divisible by the patch.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct BlockWeights {
  Mat wq, wk, wv, wo;
  Vec out_bias;
  Mat ffn_in;  // d × ratio·d
  Vec ffn_in_bias;
  Mat ffn_out;  // ratio·d × d
  Vec ffn_out_bias;
  Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

/// The frozen part of the model. Also reused as the gradient container during pretraining.
struct Backbone {
  EncoderConfig config;
  Mat patch_proj;  // patch_dim × d
  Vec patch_bias;
  Vec cls_token;
  Mat pos_embed;  // n × d
  std::vector<BlockWeights> blocks;
  Vec final_gain, final_bias;

  [[nodiscard]] static Backbone random(const EncoderConfig& config, std::uint64_t seed);
  [[nodiscard]] static Backbone zeros_like(const Backbone& other);
  /// Every tensor in a fixed order (the order used by checkpoints and optimizers).
  [[nodiscard]] std::vector<std::span<double>> tensors();
  [[nodiscard]] std::vector<std::span<const double>> tensors() const;
  /// FNV-1a over the raw bytes of every tensor.
  [[nodiscard]] std::uint64_t fingerprint() const;

  friend bool operator==(const Backbone&, const Backbone&) = default;
};

struct Head {
  Mat weight;  // d × C
  Vec bias;
  int label_offset = 0;

  [[nodiscard]] int classes() const noexcept { return static_cast<int>(bias.size()); }
  friend bool operator==(const Head&, const Head&) = default;
};

/// Expanding set of per-task heads over disjoint, contiguous label ranges.
struct ClassifierBank {
  std::vector<Head> heads;

  [[nodiscard]] std::size_t size() const noexcept { return heads.size(); }
  [[nodiscard]] int total_classes() const noexcept;
  /// [begin, end) positions of head k inside the concatenated logits.
  [[nodiscard]] std::pair<std::size_t, std::size_t> range(std::size_t k) const;
  /// Appends a randomly initialised head; throws ParameterError if labels overlap.
  void add_head(std::size_t dim, int classes, int label_offset, Rng& rng);

  friend bool operator==(const ClassifierBank&, const ClassifierBank&) = default;
};

struct VitModel {
  Backbone backbone;
  AdapterSet adapters;  // empty: plain ViT
  ClassifierBank classifier;
  bool use_residual = true;

  friend bool operator==(const VitModel&, const VitModel&) = default;
};

enum class ForwardMode { kTrain, kInfer, kInferDm };

struct LayerTap {
  Vec q_class;  // Q₁, first row of Q
  Vec s_class;  // S₁, first row of softmax(QKᵀ/√d)·a
  Mat a_in;
  Mat h_out;
  Vec omega;  // per-task relevance (dynamic-memory mode only)
};

/// Intermediates of one attention block.
struct AttentionCache {
  Mat a, q, k, v, p, h;
  Mat a_bk, a_bv, a_br;  // a·B for each live adapter
};

struct BlockCache {
  Mat x_in;
  AttentionCache attn;
  Mat ln1_hat;
  Vec ln1_rstd;
  Mat x_mid;
  Mat ln2_hat;
  Vec ln2_rstd;
  Mat c, u, g;
};

/// Everything backward needs from a training-mode forward pass.
struct Tape {
  bool recorded = false;
  Mat patches;
  std::vector<BlockCache> blocks;
  Vec final_hat;
  double final_rstd = 0.0;
  Vec feature;
};

struct ForwardOptions {
  ForwardMode mode = ForwardMode::kInfer;
  /// Required for kInferDm.
  const ResidualModulation* modulation = nullptr;
  bool record_taps = false;
};

struct ForwardResult {
  Vec logits;   // concatenation over all heads
  Vec feature;  // normalised class token fed to the heads
  std::vector<LayerTap> taps;
};

/// Effective weights seen by one attention block.
struct AttentionWeights {
  const Mat* wq = nullptr;
  Mat wk;  // W₀ᵏ + merged Oᵏ
  Mat wv;  // W₀ᵛ + merged Oᵛ (+ merged R when the residual path is raw)
  const LoraPair* key = nullptr;
  const LoraPair* value = nullptr;
  const LoraPair* residual = nullptr;
  const LayerModulation* modulation = nullptr;  // replaces the residual path when set
};

/// Builds the effective weights of block `layer` for the given mode.
[[nodiscard]] AttentionWeights attention_weights(const VitModel& model, std::size_t layer,
                                                 const ForwardOptions& options);

/// h = softmax(Q·Kᵀ/√d)·V for input activations a (n × d).
/// Throws NumericError carrying `layer` if h is not finite.
[[nodiscard]] Mat attention_block(const Mat& a, const AttentionWeights& weights, int layer,
                                  AttentionCache* cache = nullptr, LayerTap* tap = nullptr);

/// Pixel layout: channel-major, then row, then column.
[[nodiscard]] Mat patchify(std::span<const double> pixels, const EncoderConfig& config);

/// Throws StateError if the classifier bank is empty.
[[nodiscard]] ForwardResult forward(const VitModel& model, std::span<const double> pixels,
                                    const ForwardOptions& options, Tape* tape = nullptr);

/// Same as forward over many images, preparing the effective weights once.
[[nodiscard]] std::vector<ForwardResult> forward_batch(const VitModel& model, std::span<const Vec> images,
                                                       const ForwardOptions& options,
                                                       std::vector<Tape>* tapes = nullptr);

/// The embedded input sequence x0.
[[nodiscard]] Mat embed(const Backbone& backbone, std::span<const double> pixels);

struct LoraGrads {
  Mat a, b;
};

struct LayerAdapterGrads {
  LoraGrads key, value, residual;
};

struct Gradients {
  std::vector<LayerAdapterGrads> adapters;
  std::size_t head = 0;
  Mat head_weight;
  Vec head_bias;
  /// Present only when backbone training was requested; the continual phase never fills it.
  std::optional<Backbone> backbone;

  [[nodiscard]] static Gradients zeros(const VitModel& model, std::size_t head, bool with_backbone);
};

/// Accumulates into `grads` the gradient given dL/dlogits of head `grads.head`.
/// Throws StateError if `tape` was not recorded by a training-mode forward.
void backward(const VitModel& model, const Tape& tape, std::span<const double> head_logit_grad,
              Gradients& grads);

/// Mean cross-entropy over the logits of one head; labels are global class ids.
[[nodiscard]] double head_loss(const VitModel& model, std::span<const Vec> images,
                               std::span<const int> labels, std::size_t head);

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

[[nodiscard]] LossAndGradients loss_and_gradients(const VitModel& model, std::span<const Vec> images,
                                                  std::span<const int> labels, std::size_t head,
                                                  bool with_backbone);

}  // namespace duallora
