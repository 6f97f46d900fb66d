// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace duallora {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// FNV-1a, 64-bit. Chain calls by passing the previous result as `state`.
[[nodiscard]] inline std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                                           std::uint64_t state = kFnvOffset) noexcept {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= 0x100000001b3ULL;
  }
  return state;
}

}  // namespace duallora
