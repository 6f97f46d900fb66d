// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task streams for class-incremental runs: a seeded synthetic generator and a
// flat binary dataset container.
//
// Dataset file layout (little-endian):
//   char[4]  magic "DLDS"
//   u32      version (1)
//   u32      count
//   u32      side
//   u32      channels
//   f32      pixels[count][channels][side][side]
//   u16      labels[count]

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "duallora/linalg.hpp"

namespace duallora {

struct Dataset {
  std::vector<Vec> images;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return images.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// One task: global labels in [label_offset, label_offset + classes).
struct TaskSplit {
  Dataset train;
  Dataset test;
  int label_offset = 0;
  int classes = 0;
};

struct SyntheticTaskSpec {
  int tasks = 5;
  int classes_per_task = 2;
  int samples_per_class = 60;
  int test_per_class = 40;
  int image_side = 8;
  int patch_side = 4;
  int channels = 1;
  /// Radius of the sphere the class centres are drawn on. Together with noise this
  /// sets separability: s/σ is the knob.
  double separation = 10.0;
  /// RMS norm σ of the Gaussian noise vector added to each image; every pixel gets
  /// σ/√D for D pixels, so s/σ means the same thing at any image size.
  double noise = 1.0;
  /// Classes reserved for backbone pretraining; never reused by any task.
  int pretext_classes = 8;
  int pretext_samples_per_class = 60;

  /// Throws ParameterError on non-positive counts, negative noise or a bad patch size.
  void validate() const;
  friend bool operator==(const SyntheticTaskSpec&, const SyntheticTaskSpec&) = default;
};

struct TaskStream {
  Dataset pretext;  // labels in [0, pretext_classes)
  int pretext_classes = 0;
  std::vector<TaskSplit> tasks;
  int image_side = 0;
  int channels = 0;
};

[[nodiscard]] TaskStream generate_tasks(const SyntheticTaskSpec& spec, std::uint64_t seed);

struct ImageSet {
  Dataset data;
  int side = 0;
  int channels = 0;
};

/// Throws FormatError on I/O failure or a label above 65535.
void write_dataset(const std::filesystem::path& path, const ImageSet& set);
/// Throws FormatError on a bad magic, version or truncated file.
[[nodiscard]] ImageSet read_dataset(const std::filesystem::path& path);

/// Splits a labelled image set by class id: classes are shuffled with the seed,
/// the first `pretext_classes` go to pretraining and the next tasks·classes_per_task
/// form the tasks. Labels are remapped to contiguous ids. Throws ParameterError if
/// there are not enough classes.
[[nodiscard]] TaskStream split_by_class(const ImageSet& set, int tasks, int classes_per_task,
                                        int pretext_classes, double test_fraction,
                                        std::uint64_t seed);

}  // namespace duallora
