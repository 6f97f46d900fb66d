// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <string>

#include "duallora/errors.hpp"
#include "duallora/rng.hpp"

namespace duallora {

namespace {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'D', 'L', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

Vec random_center(std::size_t dim, double radius, Rng& rng) {
  Vec c(dim);
  for (double& x : c) x = rng.normal();
  const double n = norm2(c);
  for (double& x : c) x *= radius / n;
  return c;
}

void fill_class(Dataset& out, const Vec& center, int label, int count, double noise, Rng& rng) {
  const double per_pixel = noise / std::sqrt(static_cast<double>(center.size()));
  for (int i = 0; i < count; ++i) {
    Vec img = center;
    for (double& x : img) x += per_pixel * rng.normal();
    out.images.push_back(std::move(img));
    out.labels.push_back(label);
  }
}

template <typename T>
void put(std::ofstream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw FormatError("dataset: truncated file");
  return value;
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (tasks < 1 || classes_per_task < 1 || samples_per_class < 1 || test_per_class < 1)
    throw ParameterError("SyntheticTaskSpec: counts must be positive");
  if (pretext_classes < 0 || (pretext_classes > 0 && pretext_samples_per_class < 1))
    throw ParameterError("SyntheticTaskSpec: invalid pretext set");
  if (channels < 1 || image_side < 1 || patch_side < 1 || image_side % patch_side != 0)
    throw ParameterError("SyntheticTaskSpec: image side must be a positive multiple of the patch side");
  if (!(noise >= 0.0) || !(separation > 0.0))
    throw ParameterError("SyntheticTaskSpec: separation must be positive and noise non-negative");
}

TaskStream generate_tasks(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t dim = static_cast<std::size_t>(spec.image_side) * spec.image_side * spec.channels;
  Rng centers(seed, Stream::kDataCenters);
  Rng noise(seed, Stream::kDataNoise);
  TaskStream out;
  out.image_side = spec.image_side;
  out.channels = spec.channels;
  out.pretext_classes = spec.pretext_classes;
  for (int c = 0; c < spec.pretext_classes; ++c)
    fill_class(out.pretext, random_center(dim, spec.separation, centers), c,
               spec.pretext_samples_per_class, spec.noise, noise);
  for (int t = 0; t < spec.tasks; ++t) {
    TaskSplit split;
    split.label_offset = t * spec.classes_per_task;
    split.classes = spec.classes_per_task;
    for (int c = 0; c < spec.classes_per_task; ++c) {
      const Vec center = random_center(dim, spec.separation, centers);
      const int label = split.label_offset + c;
      fill_class(split.train, center, label, spec.samples_per_class, spec.noise, noise);
      fill_class(split.test, center, label, spec.test_per_class, spec.noise, noise);
    }
    out.tasks.push_back(std::move(split));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const ImageSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("dataset: cannot open " + path.string() + " for writing");
  const std::size_t pixels = static_cast<std::size_t>(set.side) * set.side * set.channels;
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(set.data.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(set.side));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(set.channels));
  for (const Vec& img : set.data.images) {
    if (img.size() != pixels) throw DimensionError("dataset: image size does not match the header");
    for (double x : img) put<float>(os, static_cast<float>(x));
  }
  for (int label : set.data.labels) {
    if (label < 0 || label > 0xFFFF) throw FormatError("dataset: label out of u16 range");
    put<std::uint16_t>(os, static_cast<std::uint16_t>(label));
  }
  if (!os) throw FormatError("dataset: write failed for " + path.string());
}

ImageSet read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("dataset: cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError("dataset: bad magic in " + path.string());
  if (get<std::uint32_t>(is) != kVersion) throw FormatError("dataset: unsupported version");
  const std::uint32_t count = get<std::uint32_t>(is);
  ImageSet set;
  set.side = static_cast<int>(get<std::uint32_t>(is));
  set.channels = static_cast<int>(get<std::uint32_t>(is));
  if (set.side < 1 || set.channels < 1) throw FormatError("dataset: invalid image geometry");
  const std::size_t pixels = static_cast<std::size_t>(set.side) * set.side * set.channels;
  set.data.images.assign(count, Vec(pixels));
  for (Vec& img : set.data.images)
    for (double& x : img) x = get<float>(is);
  set.data.labels.resize(count);
  for (int& label : set.data.labels) label = get<std::uint16_t>(is);
  return set;
}

TaskStream split_by_class(const ImageSet& set, int tasks, int classes_per_task, int pretext_classes,
                          double test_fraction, std::uint64_t seed) {
  if (tasks < 1 || classes_per_task < 1 || pretext_classes < 0)
    throw ParameterError("split_by_class: counts must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ParameterError("split_by_class: test fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.data.size(); ++i) by_class[set.data.labels[i]].push_back(i);
  const std::size_t needed = static_cast<std::size_t>(pretext_classes + tasks * classes_per_task);
  if (by_class.size() < needed)
    throw ParameterError("split_by_class: dataset has " + std::to_string(by_class.size()) +
                         " classes, " + std::to_string(needed) + " required");
  std::vector<int> ids;
  for (const auto& [label, _] : by_class) ids.push_back(label);
  Rng rng(seed, Stream::kShuffle, 0xC1A55u);
  rng.shuffle(std::span<int>(ids));

  TaskStream out;
  out.image_side = set.side;
  out.channels = set.channels;
  out.pretext_classes = pretext_classes;
  for (int c = 0; c < pretext_classes; ++c)
    for (std::size_t i : by_class[ids[static_cast<std::size_t>(c)]]) {
      out.pretext.images.push_back(set.data.images[i]);
      out.pretext.labels.push_back(c);
    }
  for (int t = 0; t < tasks; ++t) {
    TaskSplit split;
    split.label_offset = t * classes_per_task;
    split.classes = classes_per_task;
    for (int c = 0; c < classes_per_task; ++c) {
      const int label = split.label_offset + c;
      std::vector<std::size_t> members = by_class[ids[static_cast<std::size_t>(pretext_classes + label)]];
      rng.shuffle(std::span<std::size_t>(members));
      const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * members.size()));
      for (std::size_t k = 0; k < members.size(); ++k) {
        Dataset& dst = k < n_test ? split.test : split.train;
        dst.images.push_back(set.data.images[members[k]]);
        dst.labels.push_back(label);
      }
    }
    out.tasks.push_back(std::move(split));
  }
  return out;
}

}  // namespace duallora
