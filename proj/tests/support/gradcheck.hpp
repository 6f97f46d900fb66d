// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "duallora/vit.hpp"

namespace duallora::testing {

struct TensorCheck {
  std::string name;
  double rel_error = 0.0;  // ‖g − fd‖_max / ‖fd‖_max
  double fd_max = 0.0;
};

inline double rel_error(std::span<const double> analytic, const std::vector<double>& fd,
                        double* fd_max = nullptr) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - fd[i]));
    scale = std::max(scale, std::abs(fd[i]));
  }
  if (fd_max) *fd_max = scale;
  return scale == 0.0 ? diff : diff / scale;
}

/// Central differences of head_loss for every entry of `param`.
inline std::vector<double> central_differences(VitModel& model, std::span<double> param,
                                               std::span<const Vec> images,
                                               std::span<const int> labels, std::size_t head,
                                               double step = 1e-5) {
  std::vector<double> fd(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + step;
    const double up = head_loss(model, images, labels, head);
    param[i] = saved - step;
    const double down = head_loss(model, images, labels, head);
    param[i] = saved;
    fd[i] = (up - down) / (2.0 * step);
  }
  return fd;
}

/// Compares every adapter factor and the current head against finite differences.
inline std::vector<TensorCheck> check_trainable_gradients(VitModel& model, std::span<const Vec> images,
                                                          std::span<const int> labels,
                                                          std::size_t head) {
  const LossAndGradients lg = loss_and_gradients(model, images, labels, head, false);
  std::vector<TensorCheck> out;
  auto run = [&](const std::string& name, std::span<double> param, std::span<const double> g) {
    TensorCheck c{name};
    c.rel_error = rel_error(g, central_differences(model, param, images, labels, head), &c.fd_max);
    out.push_back(c);
  };
  for (std::size_t l = 0; l < model.adapters.layer_count(); ++l) {
    LayerAdapters& ad = model.adapters.layer(l);
    const LayerAdapterGrads& g = lg.grads.adapters[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    run(p + "key.a", ad.key.a.values(), g.key.a.values());
    run(p + "key.b", ad.key.b.values(), g.key.b.values());
    run(p + "value.a", ad.value.a.values(), g.value.a.values());
    run(p + "value.b", ad.value.b.values(), g.value.b.values());
    run(p + "residual.a", ad.residual.a.values(), g.residual.a.values());
    run(p + "residual.b", ad.residual.b.values(), g.residual.b.values());
  }
  Head& h = model.classifier.heads[head];
  run("head.weight", h.weight.values(), lg.grads.head_weight.values());
  run("head.bias", h.bias, lg.grads.head_bias);
  return out;
}

}  // namespace duallora::testing
