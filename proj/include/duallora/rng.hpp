// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Philox4x32-10 counter-based generator (Salmon et al., Random123). Each
// stream is addressed by (seed, stream id); the 64-bit block counter is the
// only state, so any draw can be reproduced from its coordinates alone.
//
// Derived draws, documented so other implementations can match bit for bit:
//   next_u32     words of successive blocks, word 0 first
//   uniform      ((a << 32 | b) >> 11) * 2^-53 for consecutive words a, b
//   normal       Box-Muller cosine branch on two uniforms, one normal per call

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace duallora {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// The raw bijection: ten Philox rounds of `ctr` under `key`.
[[nodiscard]] PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept;

/// Well-known stream ids so that unrelated consumers never share draws.
enum class Stream : std::uint32_t {
  kDataCenters = 1,
  kDataNoise = 2,
  kBackboneInit = 3,
  kAdapterInit = 4,
  kHeadInit = 5,
  kShuffle = 6,
  kFeatureSample = 7,
  kTest = 99,
};

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t substream = 0) noexcept;
  Rng(std::uint64_t seed, Stream stream, std::uint32_t substream = 0) noexcept
      : Rng(seed, static_cast<std::uint32_t>(stream), substream) {}

  std::uint32_t next_u32() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Standard normal.
  double normal() noexcept;
  /// Uniform integer on [0, bound) by rejection; bound > 0.
  std::uint32_t below(std::uint32_t bound) noexcept;

  /// Fisher-Yates, last index first.
  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(static_cast<std::uint32_t>(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  [[nodiscard]] std::uint64_t block_counter() const noexcept { return block_; }

 private:
  void refill() noexcept;

  PhiloxKey key_;
  std::uint32_t stream_;
  std::uint32_t substream_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
};

/// The first `count` distinct indices of a seeded permutation of [0, n).
[[nodiscard]] std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                                  Rng& rng);

}  // namespace duallora
