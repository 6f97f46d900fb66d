// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "duallora/dual_lora.hpp"
#include "duallora/errors.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

namespace duallora {
namespace {

using testing::naive_matmul;
using testing::naive_transpose;
using testing::random_mat;

Basis unit_rows(std::size_t d, std::initializer_list<std::size_t> axes) {
  Mat m(axes.size(), d);
  std::size_t r = 0;
  for (std::size_t axis : axes) m(r++, axis) = 1.0;
  return Basis(std::move(m));
}

// Orthonormal rows spanning the row space of a random k × d matrix.
Basis random_basis(std::size_t k, std::size_t d, std::uint64_t seed) {
  return Basis(thin_svd(random_mat(k, d, seed)).vt);
}

TaskFeatures single_layer(const Mat& keys, const Mat& values) {
  TaskFeatures f;
  f.layers.push_back({keys, values});
  return f;
}

double max_inner_product(const Basis& a, const Basis& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rank(); ++i)
    for (std::size_t j = 0; j < b.rank(); ++j)
      worst = std::max(worst, std::abs(dot(a.vectors().row(i), b.vectors().row(j))));
  return worst;
}

TEST(ExtendBasis, RankOneFeaturesAddOneRow) {
  Mat f(6, 5);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j) f(i, j) = (i + 1.0) * (j + 2.0);
  EXPECT_EQ(extend_basis(Basis(5), f, 0.95).rank(), 1u);
}

TEST(ExtendBasis, RejectsBadEpsilon) {
  const Mat f = random_mat(3, 4, 1);
  EXPECT_THROW((void)extend_basis(Basis(4), f, 0.0), ParameterError);
  EXPECT_THROW((void)extend_basis(Basis(4), f, 1.5), ParameterError);
  EXPECT_THROW((void)extend_basis(Basis(5), f, 0.9), DimensionError);
}

TEST(FeatureMemory, RepeatedFeaturesGiveEmptyPsi) {
  FeatureMemory mem(1, 8);
  const Mat f = naive_matmul(random_mat(10, 3, 2), random_mat(3, 8, 3));
  const MemoryUpdate first = update_feature_memory(mem, single_layer(f, f), 0.99);
  EXPECT_EQ(first.value_added[0], 3u);
  const MemoryUpdate second = update_feature_memory(mem, single_layer(f, f), 0.99);
  EXPECT_EQ(second.value_added[0], 0u);
  EXPECT_EQ(second.key_added[0], 0u);
  EXPECT_TRUE(mem.layer(0).psi[1].empty());
  EXPECT_NO_THROW(mem.validate());
}

TEST(FeatureMemory, OrthogonalRankTwoTasks) {
  // Task one lives on e0, e1 and task two on e2, e3, each with full rank 2.
  FeatureMemory mem(1, 6);
  Mat t1(8, 6), t2(8, 6);
  const Mat mix = random_mat(8, 2, 4);
  for (std::size_t i = 0; i < 8; ++i) {
    t1(i, 0) = mix(i, 0);
    t1(i, 1) = mix(i, 1);
    t2(i, 2) = mix(i, 1);
    t2(i, 3) = mix(i, 0);
  }
  const MemoryUpdate u1 = update_feature_memory(mem, single_layer(t1, t1), 0.99);
  const MemoryUpdate u2 = update_feature_memory(mem, single_layer(t2, t2), 0.99);
  EXPECT_EQ(u1.value_added[0], 2u);
  EXPECT_EQ(u2.value_added[0], 2u);
  EXPECT_LE(max_inner_product(mem.layer(0).psi[0], mem.layer(0).psi[1]), 1e-8);
  EXPECT_LE(orthonormality_error(mem.layer(0).phi_v.vectors()), 1e-8);
}

TEST(FeatureMemory, PsiBlocksStayDisjointOverManyTasks) {
  FeatureMemory mem(2, 16);
  for (std::uint64_t t = 0; t < 5; ++t) {
    TaskFeatures f;
    for (int l = 0; l < 2; ++l) {
      const Mat low = naive_matmul(random_mat(12, 3, 100 + t, 1.0, l), random_mat(3, 16, 200 + t, 1.0, l));
      f.layers.push_back({low, low});
    }
    (void)update_feature_memory(mem, f, 0.95);
  }
  EXPECT_NO_THROW(mem.validate());
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& psi = mem.layer(l).psi;
    ASSERT_EQ(psi.size(), 5u);
    for (std::size_t a = 0; a < psi.size(); ++a)
      for (std::size_t b = a + 1; b < psi.size(); ++b) EXPECT_LE(max_inner_product(psi[a], psi[b]), 1e-8);
  }
}

TEST(FeatureMemory, ValidateCatchesBrokenConcatenation) {
  FeatureMemory mem(1, 4);
  mem.layer(0).psi.push_back(unit_rows(4, {0}));
  mem.layer(0).phi_v = unit_rows(4, {1});
  EXPECT_THROW(mem.validate(), StateError);
}

TEST(CollectFeatures, SingleSampleMatchesTappedForward) {
  const VitModel model = testing::small_model(3);
  const auto images = testing::random_images(model.backbone.config, 4, 9);
  const TaskFeatures f = collect_features(model, images, 1, 11);
  ForwardOptions opt;
  opt.mode = ForwardMode::kTrain;
  opt.record_taps = true;
  const ForwardResult r = forward(model, images[f.sample_indices[0]], opt);
  for (std::size_t l = 0; l < f.layers.size(); ++l) {
    for (std::size_t j = 0; j < r.taps[l].q_class.size(); ++j) {
      EXPECT_EQ(f.layers[l].keys(0, j), r.taps[l].q_class[j]);
      EXPECT_EQ(f.layers[l].values(0, j), r.taps[l].s_class[j]);
    }
  }
  EXPECT_EQ(f.mean_final_value, r.taps.back().s_class);
}

TEST(CollectFeatures, RowsReplayIndependentForwardsAndAreDeterministic) {
  const VitModel model = testing::small_model(4);
  const auto images = testing::random_images(model.backbone.config, 12, 5);
  const TaskFeatures f = collect_features(model, images, 5, 21);
  const TaskFeatures again = collect_features(model, images, 5, 21);
  ForwardOptions opt;
  opt.mode = ForwardMode::kTrain;
  opt.record_taps = true;
  for (std::size_t i = 0; i < 5; ++i) {
    const ForwardResult r = forward(model, images[f.sample_indices[i]], opt);
    for (std::size_t l = 0; l < f.layers.size(); ++l)
      for (std::size_t j = 0; j < r.taps[l].q_class.size(); ++j) {
        EXPECT_EQ(f.layers[l].keys(i, j), r.taps[l].q_class[j]);
        EXPECT_EQ(f.layers[l].values(i, j), r.taps[l].s_class[j]);
      }
  }
  EXPECT_EQ(f.layers[0].keys, again.layers[0].keys);
  EXPECT_EQ(f.sample_indices, again.sample_indices);
}

TEST(CollectFeatures, RejectsTooManySamples) {
  const VitModel model = testing::small_model(5);
  const auto images = testing::random_images(model.backbone.config, 3, 1);
  EXPECT_THROW((void)collect_features(model, images, 4, 1), ParameterError);
  EXPECT_THROW((void)collect_features(model, images, 0, 1), ParameterError);
}

LayerAdapterGrads random_grads(std::size_t d, std::size_t r, std::uint64_t seed) {
  LayerAdapterGrads g;
  g.key = {random_mat(r, d, seed, 1.0, 1), random_mat(d, r, seed, 1.0, 2)};
  g.value = {random_mat(r, d, seed, 1.0, 3), random_mat(d, r, seed, 1.0, 4)};
  g.residual = {random_mat(r, d, seed, 1.0, 5), random_mat(d, r, seed, 1.0, 6)};
  return g;
}

TEST(OrthogonalProjection, EmptyMemoryLeavesGradientsUnchanged) {
  const LayerAdapterGrads g = random_grads(8, 2, 1);
  LayerAdapterGrads p = g;
  LayerMemory mem{Basis(8), Basis(8), {}};
  project_orthogonal_gradients(p, mem);
  EXPECT_EQ(p.key.a, g.key.a);
  EXPECT_EQ(p.key.b, g.key.b);
  EXPECT_EQ(p.value.a, g.value.a);
  EXPECT_EQ(p.value.b, g.value.b);
}

TEST(OrthogonalProjection, FullSpanKillsTheUpdate) {
  LayerAdapterGrads p = random_grads(4, 2, 2);
  const Basis full = unit_rows(4, {0, 1, 2, 3});
  LayerMemory mem{full, full, {full}};
  project_orthogonal_gradients(p, mem);
  // Key update enters as B·ΔA and value update as ΔB·A.
  EXPECT_LE(max_abs(p.key.a), 1e-15);
  EXPECT_LE(max_abs(p.value.b), 1e-15);
}

TEST(OrthogonalProjection, RankThreeMemoryAnnihilatesEachStream) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LayerAdapterGrads g = random_grads(8, 3, seed);
    LayerAdapterGrads p = g;
    const Basis phi_k = random_basis(3, 8, seed + 50);
    const Basis phi_v = random_basis(3, 8, seed + 90);
    LayerMemory mem{phi_k, phi_v, {phi_v}};
    project_orthogonal_gradients(p, mem);
    // Composite key update B·ΔA must satisfy ΔOᵏ·Φᵏᵀ = 0; value update Φᵛ·ΔOᵛ = 0.
    const Mat key_update = naive_matmul(g.key.b, p.key.a);
    const Mat value_update = naive_matmul(p.value.b, g.value.a);
    EXPECT_LE(max_abs(naive_matmul(key_update, naive_transpose(phi_k.vectors()))), 1e-12);
    EXPECT_LE(max_abs(naive_matmul(phi_v.vectors(), value_update)), 1e-12);
  }
}

TEST(ResidualProjection, EmptyPsiFreezesTheAdapter) {
  LoraGrads g = random_grads(6, 2, 3).residual;
  project_residual_gradients(g, Basis(6));
  EXPECT_EQ(max_abs(g.a), 0.0);
  EXPECT_EQ(max_abs(g.b), 0.0);
}

TEST(ResidualProjection, FullSpanKeepsTheUpdate) {
  const LoraGrads g = random_grads(4, 2, 4).residual;
  LoraGrads p = g;
  project_residual_gradients(p, unit_rows(4, {0, 1, 2, 3}));
  EXPECT_EQ(p.b, g.b);
  EXPECT_EQ(p.a, g.a);
}

TEST(ResidualProjection, MatchesExplicitProjector) {
  const LoraGrads g = random_grads(8, 2, 5).residual;
  LoraGrads p = g;
  const Basis psi = random_basis(2, 8, 77);
  project_residual_gradients(p, psi);
  const Mat projector = naive_matmul(naive_transpose(psi.vectors()), psi.vectors());
  const Mat expected = naive_matmul(projector, g.b);
  for (std::size_t i = 0; i < expected.rows(); ++i)
    for (std::size_t j = 0; j < expected.cols(); ++j) EXPECT_NEAR(p.b(i, j), expected(i, j), 1e-14);
  const Mat escape = naive_matmul(Mat::identity(8) - projector, p.b);
  EXPECT_LE(max_abs(escape), 1e-10 * max_abs(g.b));
}

TEST(AlignLiveFactors, EstablishesStreamInvariants) {
  VitModel model = testing::small_model(6);
  FeatureMemory mem(2, 8);
  for (std::size_t l = 0; l < 2; ++l) {
    LayerMemory& lm = mem.layer(l);
    lm.phi_k = random_basis(3, 8, 10 + l);
    lm.psi.push_back(random_basis(2, 8, 20 + l));
    lm.phi_v = lm.psi.back();
  }
  align_live_factors(model.adapters, mem, true);
  for (std::size_t l = 0; l < 2; ++l) {
    const LayerAdapters& ad = model.adapters.layer(l);
    const LayerMemory& lm = mem.layer(l);
    EXPECT_LE(max_abs(naive_matmul(ad.key.a, naive_transpose(lm.phi_k.vectors()))), 1e-12);
    EXPECT_LE(max_abs(naive_matmul(lm.phi_v.vectors(), ad.value.b)), 1e-12);
    const Mat p = naive_matmul(naive_transpose(lm.psi.back().vectors()), lm.psi.back().vectors());
    EXPECT_LE(max_abs(naive_matmul(Mat::identity(8) - p, ad.residual.b)), 1e-12);
  }
}

TEST(Relevance, HandExamples) {
  const Mat e1 = unit_rows(2, {0}).vectors();
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_DOUBLE_EQ(relevance(e1, std::vector<double>{1.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(relevance(e1, std::vector<double>{0.0, 1.0}), 0.0);
  EXPECT_NEAR(relevance(e1, std::vector<double>{s, s}), 0.70711, 1e-5);
  EXPECT_EQ(relevance(e1, std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_EQ(relevance(Mat(0, 2), std::vector<double>{1.0, 0.0}), 0.0);
}

TEST(Relevance, BoundedByInverseRank) {
  Rng rng(42, Stream::kTest, 7);
  for (std::size_t r : {1u, 2u, 3u, 5u}) {
    const Basis psi = random_basis(r, 10, 300 + r);
    for (int i = 0; i < 1000; ++i) {
      Vec v(10);
      for (double& x : v) x = rng.normal();
      const double w = relevance(psi.vectors(), v);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0 / static_cast<double>(r) + 1e-15);
    }
  }
}

TEST(DynamicMemory, FullRelevanceIsTransparent) {
  const Basis psi = random_basis(2, 6, 8);
  // R trained inside span Ψ.
  const Mat r = naive_matmul(naive_matmul(naive_transpose(psi.vectors()), psi.vectors()), random_mat(6, 6, 9));
  const Mat a = random_mat(3, 6, 10);
  const std::vector<double> one{1.0};
  const Mat out = modulated_residual(a, assemble_omega({psi}, one), r);
  const Mat expected = naive_matmul(a, r);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) EXPECT_NEAR(out(i, j), expected(i, j), 1e-12);
}

TEST(DynamicMemory, ZeroRelevanceRemovesResidual) {
  const std::vector<Basis> psi{random_basis(2, 6, 11), Basis(6)};
  const std::vector<double> zeros{0.0, 0.0};
  EXPECT_EQ(max_abs(modulated_residual(random_mat(3, 6, 12), assemble_omega(psi, zeros), random_mat(6, 6, 13))),
            0.0);
}

TEST(DynamicMemory, OnlyRelevantComponentSurvives) {
  const Basis both = random_basis(3, 6, 14);
  const Basis psi1(both.vectors().row_block(0, 1));
  const Basis psi2(both.vectors().row_block(1, 3));
  const Mat p1 = naive_matmul(naive_transpose(psi1.vectors()), psi1.vectors());
  const Mat p2 = naive_matmul(naive_transpose(psi2.vectors()), psi2.vectors());
  const Mat r1 = naive_matmul(p1, random_mat(6, 6, 15));
  const Mat r2 = naive_matmul(p2, random_mat(6, 6, 16));
  Mat r = r1;
  r += r2;
  const Mat a = random_mat(4, 6, 17);
  const std::vector<double> omega{1.0, 0.0};
  const Mat omega_rows = assemble_omega({psi1, psi2}, omega);
  const Mat out = modulated_residual(a, omega_rows, r);
  const Mat expected = naive_matmul(a, r1);
  const Mat explicit_out =
      naive_matmul(naive_matmul(a, naive_matmul(naive_transpose(omega_rows), omega_rows)), r);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) {
      EXPECT_NEAR(out(i, j), expected(i, j), 1e-12);
      EXPECT_NEAR(out(i, j), explicit_out(i, j), 1e-12);
    }
}

TEST(DynamicMemory, OmegaGramIsWeightedProjectorSum) {
  const Basis both = random_basis(4, 7, 18);
  const std::vector<Basis> psi{Basis(both.vectors().row_block(0, 1)), Basis(both.vectors().row_block(1, 4))};
  const std::vector<double> omega{0.3, 0.05};
  const Mat rows = assemble_omega(psi, omega);
  const Mat gram = naive_matmul(naive_transpose(rows), rows);
  Mat expected(7, 7);
  for (std::size_t t = 0; t < 2; ++t) {
    Mat p = naive_matmul(naive_transpose(psi[t].vectors()), psi[t].vectors());
    p *= omega[t];
    expected += p;
  }
  EXPECT_LE(max_abs(gram - expected), 1e-14);
  EXPECT_THROW((void)assemble_omega(psi, std::vector<double>{0.1}), DimensionError);
  EXPECT_THROW((void)assemble_omega(psi, std::vector<double>{0.1, -0.1}), ParameterError);
}

TEST(DynamicMemory, ContextDisabledWhenEveryPsiIsEmpty) {
  FeatureMemory mem(1, 4);
  mem.layer(0).psi.push_back(Basis(4));
  const DynamicMemoryContext ctx = build_dm_context(mem, {Vec{1.0, 0.0, 0.0, 0.0}});
  EXPECT_FALSE(ctx.enabled);
  EXPECT_EQ(ctx.layers[0].omega_rows.rows(), 0u);
}

TEST(DynamicMemory, LowRankPathMatchesExplicitOmega) {
  VitModel model = testing::small_model(19);
  FeatureMemory mem(2, 8);
  for (std::size_t l = 0; l < 2; ++l) {
    const Basis both = random_basis(3, 8, 40 + l);
    LayerMemory& lm = mem.layer(l);
    lm.psi = {Basis(both.vectors().row_block(0, 2)), Basis(both.vectors().row_block(2, 3))};
    lm.phi_v = both;
  }
  const ResidualModulation mod = build_residual_modulation(mem, model.adapters);
  ForwardOptions dm;
  dm.mode = ForwardMode::kInferDm;
  dm.modulation = &mod;
  const Mat a = random_mat(5, 8, 20);
  for (std::size_t l = 0; l < 2; ++l) {
    const AttentionWeights low = attention_weights(model, l, dm);
    LayerTap tap;
    const Mat h_low = attention_block(a, low, static_cast<int>(l), nullptr, &tap);

    // Same block with the residual folded in through the dense ΩᵀΩ.
    AttentionWeights dense = attention_weights(model, l, dm);
    dense.modulation = nullptr;
    const Mat omega_rows = assemble_omega(mem.layer(l).psi, tap.omega);
    const Mat gram = naive_matmul(naive_transpose(omega_rows), omega_rows);
    dense.wv += naive_matmul(gram, model.adapters.layer(l).residual_total());
    const Mat h_dense = attention_block(a, dense, static_cast<int>(l));
    EXPECT_LE(max_abs(h_low - h_dense), 1e-12 * std::max(1.0, max_abs(h_dense)));

    // The relevance values come from S₁ of this very block.
    for (std::size_t t = 0; t < 2; ++t)
      EXPECT_DOUBLE_EQ(tap.omega[t], relevance(mem.layer(l).psi[t].vectors(), tap.s_class));
  }
}

}  // namespace
}  // namespace duallora
