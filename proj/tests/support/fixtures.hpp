// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "duallora/vit.hpp"
#include "oracles.hpp"

namespace duallora::testing {

inline EncoderConfig small_config(int d = 8, int layers = 2) {
  EncoderConfig c;
  c.embed_dim = d;
  c.layers = layers;
  c.image_side = 4;
  c.patch_side = 2;
  return c;
}

inline void fill_random(Mat& m, Rng& rng, double scale) {
  for (double& x : m.values()) x = scale * rng.normal();
}

/// A model whose live and merged adapters are all non-zero, with `heads` heads of 2 classes.
inline VitModel small_model(std::uint64_t seed, int d = 8, int layers = 2, std::size_t rank = 2,
                            int heads = 1, bool nonzero_adapters = true) {
  VitModel model;
  model.backbone = Backbone::random(small_config(d, layers), seed);
  model.adapters = AdapterSet(layers, d, rank);
  Rng rng(seed, Stream::kTest, 1);
  if (nonzero_adapters) {
    for (std::size_t l = 0; l < model.adapters.layer_count(); ++l) {
      LayerAdapters& ad = model.adapters.layer(l);
      for (LoraPair* p : {&ad.key, &ad.value, &ad.residual}) {
        fill_random(p->a, rng, 0.4);
        fill_random(p->b, rng, 0.4);
      }
      fill_random(ad.merged_key, rng, 0.1);
      fill_random(ad.merged_value, rng, 0.1);
      fill_random(ad.merged_residual, rng, 0.1);
    }
  }
  Rng head_rng(seed, Stream::kHeadInit);
  for (int h = 0; h < heads; ++h) model.classifier.add_head(d, 2, 2 * h, head_rng);
  return model;
}

inline std::vector<Vec> random_images(const EncoderConfig& c, std::size_t count, std::uint64_t seed) {
  Rng rng(seed, Stream::kTest, 2);
  std::vector<Vec> out(count, Vec(c.pixel_count()));
  for (auto& img : out)
    for (double& x : img) x = rng.normal();
  return out;
}

}  // namespace duallora::testing
