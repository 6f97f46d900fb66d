// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/adapters.hpp"

#include <cmath>
#include <string>

#include "duallora/errors.hpp"

namespace duallora {

namespace {

LoraPair zero_pair(std::size_t dim, std::size_t rank) { return {Mat(rank, dim), Mat(dim, rank)}; }

}  // namespace

AdapterSet::AdapterSet(std::size_t layers, std::size_t dim, std::size_t rank)
    : dim_(dim), rank_(rank) {
  if (2 * rank > dim)
    throw ParameterError("AdapterSet: rank " + std::to_string(rank) + " exceeds dim/2 for dim " +
                         std::to_string(dim));
  layers_.resize(layers);
  for (auto& l : layers_) {
    l.key = l.value = l.residual = zero_pair(dim, rank);
    l.merged_key = l.merged_value = l.merged_residual = Mat(dim, dim);
  }
}

void AdapterSet::begin_task(Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (auto& l : layers_) {
    for (LoraPair* pair : {&l.key, &l.value, &l.residual}) {
      pair->a = Mat(rank_, dim_);
      for (double& x : pair->a.values()) x = scale * rng.normal();
      pair->b = Mat(dim_, rank_);
    }
  }
}

void AdapterSet::merge_live() {
  for (auto& l : layers_) {
    l.merged_key += l.key.product();
    l.merged_value += l.value.product();
    l.merged_residual += l.residual.product();
    l.key = l.value = l.residual = zero_pair(dim_, rank_);
  }
}

double relevance(const Mat& psi, std::span<const double> v) {
  if (psi.rows() == 0) return 0.0;
  if (psi.cols() != v.size()) throw DimensionError("relevance: basis/vector dimension mismatch");
  const double nv = norm2(v);
  if (nv == 0.0) return 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < psi.rows(); ++i) {
    const double c = dot(psi.row(i), v);
    sq += c * c;
  }
  return std::sqrt(sq) / (static_cast<double>(psi.rows()) * nv);
}

}  // namespace duallora
