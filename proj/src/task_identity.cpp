// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/task_identity.hpp"

#include <algorithm>
#include <cmath>

#include "duallora/errors.hpp"

namespace duallora {

Signature compute_signature(std::span<const double> v, const LayerMemory& layer) {
  Signature s;
  s.degenerate = true;
  for (const Basis& p : layer.psi) {
    if (!p.empty()) s.degenerate = false;
    s.values.push_back(relevance(p.vectors(), v));
  }
  return s;
}

SignatureSet::SignatureSet(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ParameterError("SignatureSet: lambda must be a finite non-negative number");
}

void SignatureSet::add(Vec signature) { signatures_.push_back(std::move(signature)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = std::max(a.size(), b.size());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = i < a.size() ? a[i] : 0.0;
    const double y = i < b.size() ? b[i] : 0.0;
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

TaskPrediction predict_task(std::span<const double> pi_star, const SignatureSet& set) {
  if (set.empty()) throw StateError("predict_task: no stored signatures");
  TaskPrediction out;
  if (std::all_of(pi_star.begin(), pi_star.end(), [](double x) { return x == 0.0; })) return out;
  out.valid = true;
  for (const Vec& pi : set.all()) out.similarities.push_back(cosine_similarity(pi, pi_star));
  const auto best = std::max_element(out.similarities.begin(), out.similarities.end());
  out.task = static_cast<std::size_t>(best - out.similarities.begin());
  double runner_up = 0.0;
  bool any = false;
  for (std::size_t t = 0; t < out.similarities.size(); ++t) {
    if (t == out.task) continue;
    runner_up = any ? std::max(runner_up, out.similarities[t]) : out.similarities[t];
    any = true;
  }
  out.confidence = set.lambda() * (*best - runner_up);
  return out;
}

void scale_logits(std::span<double> logits, std::pair<std::size_t, std::size_t> range, double delta) {
  if (range.first > range.second || range.second > logits.size())
    throw DimensionError("scale_logits: head range outside the logits");
  const double factor = 1.0 + delta;
  for (std::size_t i = range.first; i < range.second; ++i) logits[i] *= factor;
}

}  // namespace duallora
