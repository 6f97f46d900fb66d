// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "duallora/errors.hpp"
#include "duallora/vit.hpp"

using namespace duallora;
namespace t = duallora::testing;

namespace {

AttentionWeights plain_weights(const Mat& wq, const Mat& wk, const Mat& wv) {
  AttentionWeights w;
  w.wq = &wq;
  w.wk = wk;
  w.wv = wv;
  return w;
}

}  // namespace

TEST(AttentionBlock, SingleTokenReturnsValueRow) {
  const Mat id = Mat::identity(4);
  const Mat a = Mat::from_rows({{0.5, -1.0, 2.0, 3.0}});
  EXPECT_EQ(attention_block(a, plain_weights(id, id, id), 0), a);
}

TEST(AttentionBlock, NullValuePathGivesZero) {
  const Mat wq = t::random_mat(4, 4, 1), wk = t::random_mat(4, 4, 2);
  const Mat a = t::random_mat(3, 4, 3);
  EXPECT_EQ(attention_block(a, plain_weights(wq, wk, Mat(4, 4)), 0), Mat(3, 4));
}

TEST(AttentionBlock, MatchesStraightLineFormula) {
  const Mat wq = t::random_mat(4, 4, 4), wk = t::random_mat(4, 4, 5), wv = t::random_mat(4, 4, 6);
  const Mat a = t::random_mat(3, 4, 7);
  const Mat h = attention_block(a, plain_weights(wq, wk, wv), 0);
  const Mat ref = t::straight_line_attention(a, wq, wk, wv);
  EXPECT_LE(t::max_abs_diff(h, ref), 1e-12 * max_abs(ref));
}

TEST(AttentionBlock, AttentionRowsSumToOne) {
  const Mat wq = t::random_mat(8, 8, 8), wk = t::random_mat(8, 8, 9), wv = t::random_mat(8, 8, 10);
  AttentionCache cache;
  (void)attention_block(t::random_mat(5, 8, 11, 3.0), plain_weights(wq, wk, wv), 0, &cache);
  for (std::size_t i = 0; i < cache.p.rows(); ++i) {
    double s = 0.0;
    for (double v : cache.p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(AttentionBlock, TapsHoldFirstRows) {
  const Mat wq = t::random_mat(4, 4, 12), wk = t::random_mat(4, 4, 13), wv = t::random_mat(4, 4, 14);
  const Mat a = t::random_mat(3, 4, 15);
  LayerTap tap;
  AttentionCache cache;
  const Mat h = attention_block(a, plain_weights(wq, wk, wv), 0, &cache, &tap);
  const Mat q = t::naive_matmul(a, wq);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(tap.q_class[j], q(0, j));
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += cache.p(0, i) * a(i, j);
    EXPECT_NEAR(tap.s_class[j], s, 1e-14);
  }
  EXPECT_EQ(tap.h_out, h);
  EXPECT_EQ(tap.a_in, a);
}

TEST(AttentionBlock, NanInputReportsLayer) {
  const Mat id = Mat::identity(4);
  Mat a = t::random_mat(2, 4, 16);
  a(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)attention_block(a, plain_weights(id, id, id), 3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 3);
  }
}

TEST(Patchify, OrdersPatchesRowMajor) {
  EncoderConfig c = t::small_config();
  Vec pixels(16);
  for (int i = 0; i < 16; ++i) pixels[i] = i;
  const Mat p = patchify(pixels, c);
  ASSERT_EQ(p.rows(), 4u);
  EXPECT_EQ(p, Mat::from_rows({{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}}));
}

TEST(EncoderConfig, RejectsTinyDims) {
  EncoderConfig c = t::small_config();
  c.embed_dim = 3;
  EXPECT_THROW(c.validate(), ParameterError);
  c = t::small_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = t::small_config();
  c.patch_side = 3;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Forward, LogitsSpanEveryHead) {
  const VitModel one = t::small_model(1, 8, 2, 2, 1);
  const auto img = t::random_images(one.backbone.config, 1, 1);
  EXPECT_EQ(forward(one, img[0], {}).logits.size(), 2u);
  const VitModel three = t::small_model(1, 8, 2, 2, 3);
  EXPECT_EQ(forward(three, img[0], {}).logits.size(), 6u);
}

TEST(Forward, EmptyClassifierThrows) {
  VitModel m = t::small_model(2);
  m.classifier.heads.clear();
  const auto img = t::random_images(m.backbone.config, 1, 2);
  EXPECT_THROW((void)forward(m, img[0], {}), StateError);
}

TEST(Forward, BitIdenticalAcrossRuns) {
  const VitModel a = t::small_model(3), b = t::small_model(3);
  const auto img = t::random_images(a.backbone.config, 1, 3);
  EXPECT_EQ(forward(a, img[0], {}).logits, forward(b, img[0], {}).logits);
}

TEST(Forward, ZeroAdaptersMatchFrozenBackbone) {
  VitModel adapted = t::small_model(4, 8, 2, 2, 1, false);
  VitModel plain = adapted;
  plain.adapters = AdapterSet();
  const auto img = t::random_images(adapted.backbone.config, 3, 4);
  for (const Vec& x : img)
    EXPECT_EQ(forward(adapted, x, {}).logits, forward(plain, x, {}).logits);
}

TEST(Forward, BatchMatchesSingle) {
  const VitModel m = t::small_model(5);
  const auto imgs = t::random_images(m.backbone.config, 3, 5);
  const auto batch = forward_batch(m, imgs, {});
  for (std::size_t i = 0; i < imgs.size(); ++i) EXPECT_EQ(batch[i].logits, forward(m, imgs[i], {}).logits);
}

TEST(Forward, WrongPixelCountThrows) {
  const VitModel m = t::small_model(6);
  EXPECT_THROW((void)forward(m, Vec(15), {}), DimensionError);
}

TEST(Forward, CountsOnlyBlockMatmuls) {
  VitModel m = t::small_model(7, 8, 3, 2, 1, false);
  m.adapters = AdapterSet();
  const auto img = t::random_images(m.backbone.config, 1, 7);
  const double n = m.backbone.config.seq_len(), d = 8, layers = 3;
  FlopsScope scope;
  (void)forward(m, img[0], {});
  EXPECT_EQ(static_cast<double>(scope.count()), layers * (24 * n * d * d + 4 * n * n * d));
}

TEST(Backward, WithoutForwardThrows) {
  const VitModel m = t::small_model(8);
  Gradients g = Gradients::zeros(m, 0, false);
  EXPECT_THROW(backward(m, Tape{}, Vec(2, 0.0), g), StateError);
}

TEST(Backward, InferenceTapeIsNotRecorded) {
  const VitModel m = t::small_model(9);
  const auto img = t::random_images(m.backbone.config, 1, 9);
  Tape tape;
  (void)forward(m, img[0], {}, &tape);
  EXPECT_FALSE(tape.recorded);
}

TEST(Backward, FrozenBackboneReceivesNoGradient) {
  const VitModel m = t::small_model(10);
  const auto img = t::random_images(m.backbone.config, 2, 10);
  const int labels[] = {0, 1};
  EXPECT_FALSE(loss_and_gradients(m, img, labels, 0, false).grads.backbone.has_value());
}

TEST(Backward, UnusedHeadDoesNotAffectLoss) {
  VitModel m = t::small_model(11, 8, 2, 2, 2);
  const auto img = t::random_images(m.backbone.config, 3, 11);
  const int labels[] = {2, 3, 2};
  const double before = head_loss(m, img, labels, 1);
  for (double& w : m.classifier.heads[0].weight.values()) w += 1.0;
  EXPECT_EQ(head_loss(m, img, labels, 1), before);
}

TEST(Backward, LabelOutsideHeadThrows) {
  const VitModel m = t::small_model(12, 8, 2, 2, 2);
  const auto img = t::random_images(m.backbone.config, 1, 12);
  const int labels[] = {0};
  EXPECT_THROW((void)loss_and_gradients(m, img, labels, 1, false), ParameterError);
}

TEST(Backward, AdapterAndHeadGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    VitModel m = t::small_model(seed);
    const auto img = t::random_images(m.backbone.config, 4, seed);
    const int labels[] = {0, 1, 1, 0};
    for (const auto& c : t::check_trainable_gradients(m, img, labels, 0))
      EXPECT_LE(c.rel_error, 1e-4) << "seed " << seed << " " << c.name;
  }
}

TEST(Backward, BackboneGradientsMatchFiniteDifferences) {
  VitModel m = t::small_model(31);
  const auto img = t::random_images(m.backbone.config, 2, 31);
  const int labels[] = {1, 0};
  const LossAndGradients lg = loss_and_gradients(m, img, labels, 0, true);
  ASSERT_TRUE(lg.grads.backbone.has_value());
  auto params = m.backbone.tensors();
  const auto grads = lg.grads.backbone->tensors();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto fd = t::central_differences(m, params[i], img, labels, 0);
    double fd_max = 0.0;
    const double err = t::rel_error(grads[i], fd, &fd_max);
    if (fd_max > 1e-9) EXPECT_LE(err, 1e-4) << "tensor " << i;
  }
}

TEST(Backbone, FingerprintTracksWeights) {
  Backbone a = Backbone::random(t::small_config(), 1);
  const auto h = a.fingerprint();
  EXPECT_EQ(h, Backbone::random(t::small_config(), 1).fingerprint());
  a.blocks[0].wq(0, 0) += 1e-12;
  EXPECT_NE(h, a.fingerprint());
}

TEST(ClassifierBank, RangesAndOverlap) {
  ClassifierBank bank;
  Rng rng(1, Stream::kHeadInit);
  bank.add_head(8, 2, 0, rng);
  bank.add_head(8, 3, 2, rng);
  EXPECT_EQ(bank.total_classes(), 5);
  EXPECT_EQ(bank.range(1), (std::pair<std::size_t, std::size_t>{2, 5}));
  EXPECT_THROW(bank.add_head(8, 2, 4, rng), ParameterError);
}
