// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoints. The byte layout is documented in
// docs/checkpoint.md; all integers are little-endian and reals are IEEE-754
// doubles, so a round trip is bit-exact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "duallora/config.hpp"
#include "duallora/dual_lora.hpp"
#include "duallora/task_identity.hpp"
#include "duallora/trainer.hpp"
#include "duallora/vit.hpp"

namespace duallora {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  VitModel model;
  FeatureMemory memory;
  SignatureSet signatures;
  AccMatrix acc;  // as recorded by the run that wrote the checkpoint

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

[[nodiscard]] std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on a bad magic, unsupported version, checksum mismatch,
/// truncation or inconsistent contents.
[[nodiscard]] Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stand-alone feature-memory blob for inspection tools.
[[nodiscard]] std::vector<std::byte> encode_feature_memory(const FeatureMemory& memory);
[[nodiscard]] FeatureMemory decode_feature_memory(std::span<const std::byte> bytes);

/// Whole-file helpers shared by the writers; both throw FormatError on I/O failure.
[[nodiscard]] std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace duallora
