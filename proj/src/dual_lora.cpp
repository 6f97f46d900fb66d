// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/dual_lora.hpp"

#include <cmath>
#include <string>

#include "duallora/errors.hpp"
#include "duallora/rng.hpp"

namespace duallora {

namespace {

// Singular values this far below the feature norm are rounding residue of
// directions the basis already covers.
constexpr double kNoiseFloor = 1e-10;
constexpr double kDropTolerance = 1e-6;

// Orthonormalise the candidate rows against `phi` and each other (two MGS
// passes); rows that collapse are dropped.
Mat orthonormal_complement_rows(const Basis& phi, const Mat& candidates) {
  const std::size_t d = candidates.cols();
  std::vector<Vec> kept;
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    Vec v(candidates.row(i).begin(), candidates.row(i).end());
    const double start = norm2(v);
    if (start == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < phi.rank(); ++j) {
        const double c = dot(phi.vectors().row(j), v);
        for (std::size_t k = 0; k < d; ++k) v[k] -= c * phi.vectors()(j, k);
      }
      for (const Vec& u : kept) {
        const double c = dot(u, v);
        for (std::size_t k = 0; k < d; ++k) v[k] -= c * u[k];
      }
    }
    const double nv = norm2(v);
    if (nv <= kDropTolerance * start) continue;
    for (double& x : v) x /= nv;
    kept.push_back(std::move(v));
  }
  Mat out(kept.size(), d);
  for (std::size_t i = 0; i < kept.size(); ++i)
    std::copy(kept[i].begin(), kept[i].end(), out.row(i).begin());
  return out;
}

void check_layers(const FeatureMemory& memory, std::size_t layers, const char* who) {
  if (memory.layer_count() != layers)
    throw DimensionError(std::string(who) + ": memory has " + std::to_string(memory.layer_count()) +
                         " layers, expected " + std::to_string(layers));
}

}  // namespace

FeatureMemory::FeatureMemory(std::size_t layers, std::size_t dim) : dim_(dim) {
  layers_.resize(layers);
  for (LayerMemory& l : layers_) {
    l.phi_k = Basis(dim);
    l.phi_v = Basis(dim);
  }
}

void FeatureMemory::validate() const {
  const std::size_t tasks = task_count();
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerMemory& l = layers_[li];
    const std::string where = "FeatureMemory layer " + std::to_string(li) + ": ";
    if (l.psi.size() != tasks) throw StateError(where + "psi block count differs across layers");
    if (l.phi_k.dim() != dim_ || l.phi_v.dim() != dim_)
      throw StateError(where + "basis dimension mismatch");
    if (orthonormality_error(l.phi_k.vectors()) > 1e-8 ||
        orthonormality_error(l.phi_v.vectors()) > 1e-8)
      throw StateError(where + "basis is not orthonormal");
    Mat stacked(0, dim_);
    for (const Basis& p : l.psi) stacked = vstack(stacked, p.vectors());
    if (!(stacked == l.phi_v.vectors()))
      throw StateError(where + "value basis differs from the concatenated psi blocks");
  }
}

TaskFeatures collect_features(const VitModel& model, std::span<const Vec> images, std::size_t m,
                              std::uint64_t seed, std::uint32_t task) {
  if (m == 0) throw ParameterError("collect_features: sample count must be positive");
  if (m > images.size())
    throw ParameterError("collect_features: requested " + std::to_string(m) + " samples from " +
                         std::to_string(images.size()));
  Rng rng(seed, Stream::kFeatureSample, task);
  TaskFeatures out;
  out.sample_indices = sample_without_replacement(images.size(), m, rng);
  const std::size_t layers = model.backbone.blocks.size();
  const std::size_t d = model.backbone.cls_token.size();
  out.layers.assign(layers, LayerFeatures{Mat(m, d), Mat(m, d)});
  out.mean_final_value.assign(d, 0.0);

  ForwardOptions opt;
  opt.mode = ForwardMode::kTrain;
  opt.record_taps = true;
  std::vector<Vec> chosen;
  chosen.reserve(m);
  for (std::size_t idx : out.sample_indices) chosen.push_back(images[idx]);
  const auto results = forward_batch(model, chosen, opt);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerTap& tap = results[i].taps[l];
      std::copy(tap.q_class.begin(), tap.q_class.end(), out.layers[l].keys.row(i).begin());
      std::copy(tap.s_class.begin(), tap.s_class.end(), out.layers[l].values.row(i).begin());
    }
    const Vec& last = results[i].taps.back().s_class;
    for (std::size_t j = 0; j < d; ++j) out.mean_final_value[j] += last[j] / static_cast<double>(m);
  }
  return out;
}

Basis extend_basis(const Basis& phi, const Mat& features, double epsilon) {
  if (features.cols() != phi.dim()) throw DimensionError("extend_basis: feature width mismatch");
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw ParameterError("extend_basis: epsilon must lie in (0, 1]");
  const Mat residual = project_rows_out(features, phi);
  SvdResult svd = thin_svd(residual);
  const double floor = kNoiseFloor * frobenius_norm(features);
  for (double& s : svd.sigma)
    if (s <= floor) s = 0.0;
  const Basis selected = select_basis(svd, epsilon);
  return Basis(orthonormal_complement_rows(phi, selected.vectors()));
}

MemoryUpdate update_feature_memory(FeatureMemory& memory, const TaskFeatures& features,
                                   double epsilon) {
  check_layers(memory, features.layers.size(), "update_feature_memory");
  MemoryUpdate update;
  for (std::size_t l = 0; l < memory.layer_count(); ++l) {
    LayerMemory& lm = memory.layer(l);
    const Basis new_k = extend_basis(lm.phi_k, features.layers[l].keys, epsilon);
    const Basis new_v = extend_basis(lm.phi_v, features.layers[l].values, epsilon);
    lm.phi_k = lm.phi_k.concatenated(new_k);
    lm.phi_v = lm.phi_v.concatenated(new_v);
    lm.psi.push_back(new_v);
    update.key_added.push_back(new_k.rank());
    update.value_added.push_back(new_v.rank());
  }
  return update;
}

void project_orthogonal_gradients(LayerAdapterGrads& grads, const LayerMemory& memory) {
  if (!memory.phi_k.empty()) grads.key.a = project_rows_out(grads.key.a, memory.phi_k);
  if (!memory.phi_v.empty()) grads.value.b = project_out(grads.value.b, memory.phi_v);
}

void project_residual_gradients(LoraGrads& grads, const Basis& psi) {
  if (psi.empty()) {
    grads.a = Mat(grads.a.rows(), grads.a.cols());
    grads.b = Mat(grads.b.rows(), grads.b.cols());
    return;
  }
  grads.b = project_into(grads.b, psi);
}

void align_live_factors(AdapterSet& adapters, const FeatureMemory& memory, bool residual) {
  check_layers(memory, adapters.layer_count(), "align_live_factors");
  for (std::size_t l = 0; l < adapters.layer_count(); ++l) {
    LayerAdapters& ad = adapters.layer(l);
    const LayerMemory& lm = memory.layer(l);
    if (!lm.phi_k.empty()) ad.key.a = project_rows_out(ad.key.a, lm.phi_k);
    if (!lm.phi_v.empty()) ad.value.b = project_out(ad.value.b, lm.phi_v);
    if (residual) {
      const Basis latest = lm.psi.empty() ? Basis(memory.dim()) : lm.psi.back();
      ad.residual.b = project_into(ad.residual.b, latest);
    }
  }
}

Mat assemble_omega(const std::vector<Basis>& psi, std::span<const double> omega) {
  if (psi.size() != omega.size())
    throw DimensionError("assemble_omega: one relevance value per psi block is required");
  std::size_t rows = 0, dim = 0;
  for (const Basis& p : psi) {
    rows += p.rank();
    dim = p.dim();
  }
  Mat out(rows, dim);
  std::size_t r = 0;
  for (std::size_t t = 0; t < psi.size(); ++t) {
    if (omega[t] < 0.0) throw ParameterError("assemble_omega: relevance must be non-negative");
    const double s = std::sqrt(omega[t]);
    for (std::size_t i = 0; i < psi[t].rank(); ++i, ++r)
      for (std::size_t j = 0; j < dim; ++j) out(r, j) = s * psi[t].vectors()(i, j);
  }
  return out;
}

DynamicMemoryContext build_dm_context(const FeatureMemory& memory, const std::vector<Vec>& v_per_layer) {
  check_layers(memory, v_per_layer.size(), "build_dm_context");
  DynamicMemoryContext ctx;
  for (std::size_t l = 0; l < memory.layer_count(); ++l) {
    const LayerMemory& lm = memory.layer(l);
    LayerDynamicMemory ldm;
    for (const Basis& p : lm.psi) {
      ldm.omega.push_back(relevance(p.vectors(), v_per_layer[l]));
      if (!p.empty()) ctx.enabled = true;
    }
    ldm.omega_rows = assemble_omega(lm.psi, ldm.omega);
    ctx.layers.push_back(std::move(ldm));
  }
  return ctx;
}

Mat modulated_residual(const Mat& a, const Mat& omega_rows, const Mat& residual) {
  if (omega_rows.rows() == 0) return Mat(a.rows(), residual.cols());
  const Mat proj = matmul(omega_rows.transposed(), omega_rows);
  return matmul(matmul(a, proj), residual);
}

ResidualModulation build_residual_modulation(const FeatureMemory& memory, const AdapterSet& adapters) {
  check_layers(memory, adapters.layer_count(), "build_residual_modulation");
  ResidualModulation mod;
  for (std::size_t l = 0; l < memory.layer_count(); ++l) {
    const Mat r = adapters.layer(l).residual_total();
    LayerModulation lm;
    for (const Basis& p : memory.layer(l).psi)
      lm.components.push_back({p.vectors(), p.empty() ? Mat(0, r.cols()) : matmul(p.vectors(), r)});
    mod.layers.push_back(std::move(lm));
  }
  return mod;
}

}  // namespace duallora
