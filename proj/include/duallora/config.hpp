// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// File-backed run configuration. One JSON document; every object rejects keys
// it does not know. The schema is documented in docs/config.md.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "duallora/data.hpp"
#include "duallora/trainer.hpp"
#include "duallora/vit.hpp"

namespace duallora {

struct FileDataset {
  std::string path;
  double test_fraction = 0.25;
  int pretext_classes = 8;

  friend bool operator==(const FileDataset&, const FileDataset&) = default;
};

struct RunConfig {
  CLConfig learner;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  /// Exactly one of the two sources is set. Task and class counts always come from
  /// `learner`; image geometry from the dataset.
  std::optional<SyntheticTaskSpec> synthetic = SyntheticTaskSpec{};
  std::optional<FileDataset> file;
  std::string output_dir = "out";
  bool strict_paper = false;

  /// Cross-field checks; throws ParameterError.
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws FormatError on malformed JSON, a wrong type or an unknown key, and
/// ParameterError on out-of-range values.
[[nodiscard]] RunConfig parse_run_config(std::string_view json_text);
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical form with sorted keys; parse_run_config(to_json(c)) == c.
[[nodiscard]] std::string to_json(const RunConfig& config, int indent = 2);

/// Builds the task stream the configuration describes.
[[nodiscard]] TaskStream load_task_stream(const RunConfig& config);

}  // namespace duallora
