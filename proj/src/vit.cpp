// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/vit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "duallora/errors.hpp"
#include "duallora/hash.hpp"

namespace duallora {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Embedding and classifier matmuls are outside the per-block inventory.
class FlopsPause {
 public:
  FlopsPause() : was_(flops_counter::enabled()) { flops_counter::set_enabled(false); }
  ~FlopsPause() { flops_counter::set_enabled(was_); }
  FlopsPause(const FlopsPause&) = delete;
  FlopsPause& operator=(const FlopsPause&) = delete;

 private:
  bool was_;
};

Mat random_mat(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Mat m(r, c);
  for (double& x : m.values()) x = scale * rng.normal();
  return m;
}

Vec random_vec(std::size_t n, double scale, Rng& rng) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

void add_row_bias(Mat& m, const Vec& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row[j] += bias[j];
  }
}

void add_col_sums(const Mat& m, Vec& out) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j];
  }
}

// y = xhat·gain + bias, per row.
Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, Mat& xhat, Vec& rstd) {
  const std::size_t d = x.cols();
  xhat = Mat(x.rows(), d);
  rstd.assign(x.rows(), 0.0);
  Mat y(x.rows(), d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (in[j] - mean) * rs;
      y(i, j) = xhat(i, j) * gain[j] + bias[j];
    }
  }
  return y;
}

// Returns dx; accumulates gain/bias grads when the pointers are set.
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Vec& gain,
                        Vec* dgain, Vec* dbias) {
  const std::size_t d = dy.cols();
  Mat dx(dy.rows(), d);
  Vec dxhat(d);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dxhat[j] = dy(i, j) * gain[j];
      mean_g += dxhat[j];
      mean_gx += dxhat[j] * xhat(i, j);
      if (dgain) (*dgain)[j] += dy(i, j) * xhat(i, j);
      if (dbias) (*dbias)[j] += dy(i, j);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = rstd[i] * (dxhat[j] - mean_g - xhat(i, j) * mean_gx);
  }
  return dx;
}

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

void check_finite(const Mat& m, const char* what, int layer) {
  if (!m.all_finite()) throw NumericError(what, layer);
}

std::vector<AttentionWeights> prepare_weights(const VitModel& model, const ForwardOptions& options) {
  std::vector<AttentionWeights> out;
  out.reserve(model.backbone.blocks.size());
  for (std::size_t l = 0; l < model.backbone.blocks.size(); ++l)
    out.push_back(attention_weights(model, l, options));
  return out;
}

ForwardResult forward_prepared(const VitModel& model, std::span<const double> pixels,
                               const ForwardOptions& options,
                               const std::vector<AttentionWeights>& weights, Tape* tape) {
  if (model.classifier.size() == 0) throw StateError("forward: classifier bank is empty");
  const Backbone& bb = model.backbone;
  const bool record = tape != nullptr && options.mode == ForwardMode::kTrain;
  if (tape) *tape = Tape{};

  Mat x = embed(bb, pixels);
  check_finite(x, "non-finite embedding", 0);
  if (record) {
    tape->patches = patchify(pixels, bb.config);
    tape->blocks.resize(bb.blocks.size());
  }

  ForwardResult result;
  if (options.record_taps) result.taps.resize(bb.blocks.size());

  for (std::size_t l = 0; l < bb.blocks.size(); ++l) {
    const BlockWeights& w = bb.blocks[l];
    const int layer = static_cast<int>(l);
    BlockCache local;
    BlockCache& c = record ? tape->blocks[l] : local;
    c.x_in = x;
    const Mat a = layer_norm(x, w.ln1_gain, w.ln1_bias, c.ln1_hat, c.ln1_rstd);
    LayerTap* tap = options.record_taps ? &result.taps[l] : nullptr;
    const Mat h = attention_block(a, weights[l], layer, record ? &c.attn : nullptr, tap);
    Mat o = matmul(h, w.wo);
    add_row_bias(o, w.out_bias);
    x += o;
    if (record) c.x_mid = x;
    c.c = layer_norm(x, w.ln2_gain, w.ln2_bias, c.ln2_hat, c.ln2_rstd);
    c.u = matmul(c.c, w.ffn_in);
    add_row_bias(c.u, w.ffn_in_bias);
    c.g = c.u;
    for (double& v : c.g.values()) v = gelu(v);
    Mat f = matmul(c.g, w.ffn_out);
    add_row_bias(f, w.ffn_out_bias);
    x += f;
    check_finite(x, "non-finite block output", layer);
  }

  // Final norm on the class token only.
  Mat cls = x.row_block(0, 1);
  Mat hat;
  Vec rstd;
  const Mat feat = layer_norm(cls, bb.final_gain, bb.final_bias, hat, rstd);
  result.feature.assign(feat.row(0).begin(), feat.row(0).end());
  {
    FlopsPause pause;
    for (const Head& head : model.classifier.heads) {
      Vec z = vecmat(result.feature, head.weight);
      for (std::size_t j = 0; j < z.size(); ++j) result.logits.push_back(z[j] + head.bias[j]);
    }
  }
  if (record) {
    tape->final_hat.assign(hat.row(0).begin(), hat.row(0).end());
    tape->final_rstd = rstd[0];
    tape->feature = result.feature;
    tape->recorded = true;
  }
  return result;
}

// da += dY·Aᵀ·Bᵀ and the factor grads for Y += (a·B)·A.
void lora_backward(const Mat& a, const Mat& a_b, const LoraPair& pair, const Mat& dy, LoraGrads& g,
                   Mat& da) {
  const Mat dy_at = matmul(dy, pair.a.transposed());  // n × r
  g.b += matmul(a.transposed(), dy_at);
  g.a += matmul(a_b.transposed(), dy);
  da += matmul(dy_at, pair.b.transposed());
}

}  // namespace

void EncoderConfig::validate() const {
  if (embed_dim < 4) throw ParameterError("EncoderConfig: embed_dim must be >= 4");
  if (layers < 1) throw ParameterError("EncoderConfig: layers must be >= 1");
  if (ffn_ratio < 1) throw ParameterError("EncoderConfig: ffn_ratio must be >= 1");
  if (channels < 1) throw ParameterError("EncoderConfig: channels must be >= 1");
  if (patch_side < 1 || image_side < patch_side || image_side % patch_side != 0)
    throw ParameterError("EncoderConfig: image side " + std::to_string(image_side) +
                         " not divisible by patch side " + std::to_string(patch_side));
  if (seq_len() < 2) throw ParameterError("EncoderConfig: sequence length must be >= 2");
}

Backbone Backbone::random(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, Stream::kBackboneInit);
  const std::size_t d = config.embed_dim;
  const std::size_t hidden = d * config.ffn_ratio;
  const std::size_t n = config.seq_len();
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  Backbone bb;
  bb.config = config;
  bb.patch_proj = random_mat(config.patch_dim(), d, 1.0 / std::sqrt(double(config.patch_dim())), rng);
  bb.patch_bias = Vec(d, 0.0);
  bb.cls_token = random_vec(d, 0.1, rng);
  bb.pos_embed = random_mat(n, d, 0.1, rng);
  bb.blocks.resize(config.layers);
  for (BlockWeights& w : bb.blocks) {
    w.wq = random_mat(d, d, sd, rng);
    w.wk = random_mat(d, d, sd, rng);
    w.wv = random_mat(d, d, sd, rng);
    w.wo = random_mat(d, d, sd, rng);
    w.out_bias = Vec(d, 0.0);
    w.ffn_in = random_mat(d, hidden, sd, rng);
    w.ffn_in_bias = Vec(hidden, 0.0);
    w.ffn_out = random_mat(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    w.ffn_out_bias = Vec(d, 0.0);
    w.ln1_gain = w.ln2_gain = Vec(d, 1.0);
    w.ln1_bias = w.ln2_bias = Vec(d, 0.0);
  }
  bb.final_gain = Vec(d, 1.0);
  bb.final_bias = Vec(d, 0.0);
  return bb;
}

Backbone Backbone::zeros_like(const Backbone& other) {
  Backbone z = other;
  for (auto t : z.tensors())
    for (double& x : t) x = 0.0;
  return z;
}

std::vector<std::span<double>> Backbone::tensors() {
  std::vector<std::span<double>> out{patch_proj.values(), patch_bias, cls_token, pos_embed.values()};
  for (BlockWeights& w : blocks) {
    out.insert(out.end(), {w.wq.values(), w.wk.values(), w.wv.values(), w.wo.values(), w.out_bias,
                           w.ffn_in.values(), w.ffn_in_bias, w.ffn_out.values(), w.ffn_out_bias,
                           w.ln1_gain, w.ln1_bias, w.ln2_gain, w.ln2_bias});
  }
  out.push_back(final_gain);
  out.push_back(final_bias);
  return out;
}

std::vector<std::span<const double>> Backbone::tensors() const {
  auto mut = const_cast<Backbone*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::uint64_t Backbone::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (auto t : tensors()) h = fnv1a64(std::as_bytes(t), h);
  return h;
}

int ClassifierBank::total_classes() const noexcept {
  int total = 0;
  for (const Head& h : heads) total += h.classes();
  return total;
}

std::pair<std::size_t, std::size_t> ClassifierBank::range(std::size_t k) const {
  if (k >= heads.size()) throw ParameterError("ClassifierBank: head index out of range");
  std::size_t begin = 0;
  for (std::size_t i = 0; i < k; ++i) begin += heads[i].classes();
  return {begin, begin + heads[k].classes()};
}

void ClassifierBank::add_head(std::size_t dim, int classes, int label_offset, Rng& rng) {
  if (classes < 1) throw ParameterError("ClassifierBank: a head needs at least one class");
  for (const Head& h : heads) {
    const bool disjoint = label_offset + classes <= h.label_offset ||
                          h.label_offset + h.classes() <= label_offset;
    if (!disjoint) throw ParameterError("ClassifierBank: label range overlaps an existing head");
  }
  Head h;
  h.weight = random_mat(dim, classes, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  h.bias = Vec(classes, 0.0);
  h.label_offset = label_offset;
  heads.push_back(std::move(h));
}

AttentionWeights attention_weights(const VitModel& model, std::size_t layer,
                                   const ForwardOptions& options) {
  const BlockWeights& w = model.backbone.blocks.at(layer);
  AttentionWeights out;
  out.wq = &w.wq;
  out.wk = w.wk;
  out.wv = w.wv;
  if (model.adapters.empty()) return out;
  const LayerAdapters& ad = model.adapters.layer(layer);
  out.wk += ad.merged_key;
  out.wv += ad.merged_value;
  out.key = &ad.key;
  out.value = &ad.value;
  if (options.mode == ForwardMode::kInferDm) {
    if (options.modulation == nullptr)
      throw StateError("forward: dynamic-memory mode needs a residual modulation");
    out.modulation = &options.modulation->layers.at(layer);
  } else if (model.use_residual) {
    out.wv += ad.merged_residual;
    out.residual = &ad.residual;
  }
  return out;
}

Mat attention_block(const Mat& a, const AttentionWeights& weights, int layer, AttentionCache* cache,
                    LayerTap* tap) {
  const std::size_t d = a.cols();
  if (weights.wq == nullptr || weights.wq->rows() != d || weights.wk.rows() != d ||
      weights.wv.rows() != d)
    throw DimensionError("attention_block: weight shape does not match activations");
  check_finite(a, "non-finite attention input", layer);

  const Mat q = matmul(a, *weights.wq);
  Mat k = matmul(a, weights.wk);
  Mat v = matmul(a, weights.wv);
  Mat a_bk, a_bv, a_br;
  if (weights.key) {
    a_bk = matmul(a, weights.key->b);
    k += matmul(a_bk, weights.key->a);
  }
  if (weights.value) {
    a_bv = matmul(a, weights.value->b);
    v += matmul(a_bv, weights.value->a);
  }
  if (weights.residual) {
    a_br = matmul(a, weights.residual->b);
    v += matmul(a_br, weights.residual->a);
  }

  Mat scores = matmul(q, k.transposed());
  scores *= 1.0 / std::sqrt(static_cast<double>(d));
  const Mat p = softmax_rows(scores);
  const Vec s1 = vecmat(p.row(0), a);

  Vec omega;
  if (weights.modulation) {
    for (const ResidualComponent& comp : weights.modulation->components) {
      const double w = relevance(comp.psi, s1);
      omega.push_back(w);
      if (w == 0.0) continue;
      Mat coef = matmul(a, comp.psi.transposed());  // n × r_τ
      coef *= w;
      v += matmul(coef, comp.psi_r);
    }
  }

  Mat h = matmul(p, v);
  check_finite(h, "non-finite attention output", layer);

  if (tap) {
    tap->q_class.assign(q.row(0).begin(), q.row(0).end());
    tap->s_class = s1;
    tap->a_in = a;
    tap->h_out = h;
    tap->omega = omega;
  }
  if (cache) {
    cache->a = a;
    cache->q = q;
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->p = p;
    cache->h = h;
    cache->a_bk = std::move(a_bk);
    cache->a_bv = std::move(a_bv);
    cache->a_br = std::move(a_br);
  }
  return h;
}

Mat patchify(std::span<const double> pixels, const EncoderConfig& config) {
  if (pixels.size() != static_cast<std::size_t>(config.pixel_count()))
    throw DimensionError("patchify: expected " + std::to_string(config.pixel_count()) +
                         " pixels, got " + std::to_string(pixels.size()));
  const int g = config.patches_per_side();
  const int ps = config.patch_side;
  const int side = config.image_side;
  Mat out(config.patch_count(), config.patch_dim());
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      auto row = out.row(static_cast<std::size_t>(py * g + px));
      std::size_t f = 0;
      for (int ch = 0; ch < config.channels; ++ch)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            row[f++] = pixels[static_cast<std::size_t>((ch * side + py * ps + y) * side + px * ps + x)];
    }
  return out;
}

Mat embed(const Backbone& backbone, std::span<const double> pixels) {
  const Mat patches = patchify(pixels, backbone.config);
  FlopsPause pause;
  const Mat e = matmul(patches, backbone.patch_proj);
  const std::size_t d = backbone.cls_token.size();
  Mat x(patches.rows() + 1, d);
  for (std::size_t j = 0; j < d; ++j) x(0, j) = backbone.cls_token[j] + backbone.pos_embed(0, j);
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j)
      x(i + 1, j) = e(i, j) + backbone.patch_bias[j] + backbone.pos_embed(i + 1, j);
  return x;
}

ForwardResult forward(const VitModel& model, std::span<const double> pixels,
                      const ForwardOptions& options, Tape* tape) {
  return forward_prepared(model, pixels, options, prepare_weights(model, options), tape);
}

std::vector<ForwardResult> forward_batch(const VitModel& model, std::span<const Vec> images,
                                         const ForwardOptions& options, std::vector<Tape>* tapes) {
  const auto weights = prepare_weights(model, options);
  if (tapes) tapes->resize(images.size());
  std::vector<ForwardResult> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    out.push_back(forward_prepared(model, images[i], options, weights, tapes ? &(*tapes)[i] : nullptr));
  return out;
}

Gradients Gradients::zeros(const VitModel& model, std::size_t head, bool with_backbone) {
  Gradients g;
  g.head = head;
  const Head& h = model.classifier.heads.at(head);
  g.head_weight = Mat(h.weight.rows(), h.weight.cols());
  g.head_bias = Vec(h.bias.size(), 0.0);
  for (std::size_t l = 0; l < model.adapters.layer_count(); ++l) {
    const LayerAdapters& ad = model.adapters.layer(l);
    auto zero = [](const LoraPair& p) {
      return LoraGrads{Mat(p.a.rows(), p.a.cols()), Mat(p.b.rows(), p.b.cols())};
    };
    g.adapters.push_back({zero(ad.key), zero(ad.value), zero(ad.residual)});
  }
  if (with_backbone) g.backbone = Backbone::zeros_like(model.backbone);
  return g;
}

void backward(const VitModel& model, const Tape& tape, std::span<const double> head_logit_grad,
              Gradients& grads) {
  if (!tape.recorded) throw StateError("backward: no training-mode forward pass was recorded");
  const Backbone& bb = model.backbone;
  const Head& head = model.classifier.heads.at(grads.head);
  if (head_logit_grad.size() != head.bias.size())
    throw DimensionError("backward: logit gradient does not match the head");
  const std::size_t d = bb.cls_token.size();
  Backbone* gbb = grads.backbone ? &*grads.backbone : nullptr;
  const bool with_adapters = !model.adapters.empty();
  if (with_adapters && grads.adapters.size() != model.adapters.layer_count())
    throw StateError("backward: gradient container does not match the adapter set");

  // Head and final norm (class token only).
  Vec dfeat(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t c = 0; c < head_logit_grad.size(); ++c) {
      grads.head_weight(i, c) += tape.feature[i] * head_logit_grad[c];
      dfeat[i] += head.weight(i, c) * head_logit_grad[c];
    }
  for (std::size_t c = 0; c < head_logit_grad.size(); ++c) grads.head_bias[c] += head_logit_grad[c];

  const std::size_t n = bb.config.seq_len();
  Mat dx(n, d);
  {
    const Mat dy = Mat::row_vector(dfeat);
    const Mat hat = Mat::row_vector(tape.final_hat);
    const Mat dcls = layer_norm_backward(dy, hat, Vec{tape.final_rstd}, bb.final_gain,
                                         gbb ? &gbb->final_gain : nullptr,
                                         gbb ? &gbb->final_bias : nullptr);
    for (std::size_t j = 0; j < d; ++j) dx(0, j) = dcls(0, j);
  }

  ForwardOptions train;
  train.mode = ForwardMode::kTrain;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t li = bb.blocks.size(); li-- > 0;) {
    const BlockWeights& w = bb.blocks[li];
    const BlockCache& c = tape.blocks[li];
    BlockWeights* gw = gbb ? &gbb->blocks[li] : nullptr;

    // FFN branch.
    const Mat dg = matmul(dx, w.ffn_out.transposed());
    if (gw) {
      gw->ffn_out += matmul(c.g.transposed(), dx);
      add_col_sums(dx, gw->ffn_out_bias);
    }
    Mat du = dg;
    {
      auto duv = du.values();
      auto uv = c.u.values();
      for (std::size_t i = 0; i < duv.size(); ++i) duv[i] *= gelu_grad(uv[i]);
    }
    if (gw) {
      gw->ffn_in += matmul(c.c.transposed(), du);
      add_col_sums(du, gw->ffn_in_bias);
    }
    const Mat dc = matmul(du, w.ffn_in.transposed());
    dx += layer_norm_backward(dc, c.ln2_hat, c.ln2_rstd, w.ln2_gain, gw ? &gw->ln2_gain : nullptr,
                              gw ? &gw->ln2_bias : nullptr);

    // Attention branch.
    const AttentionCache& at = c.attn;
    const Mat dh = matmul(dx, w.wo.transposed());
    if (gw) {
      gw->wo += matmul(at.h.transposed(), dx);
      add_col_sums(dx, gw->out_bias);
    }
    const Mat dp = matmul(dh, at.v.transposed());
    const Mat dv = matmul(at.p.transposed(), dh);
    Mat dz(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = dot(dp.row(i), at.p.row(i));
      for (std::size_t j = 0; j < n; ++j) dz(i, j) = at.p(i, j) * (dp(i, j) - s) * inv_sqrt_d;
    }
    const Mat dq = matmul(dz, at.k);
    const Mat dk = matmul(dz.transposed(), at.q);

    const AttentionWeights aw = attention_weights(model, li, train);
    Mat da = matmul(dq, w.wq.transposed());
    da += matmul(dk, aw.wk.transposed());
    da += matmul(dv, aw.wv.transposed());
    if (with_adapters) {
      LayerAdapterGrads& ga = grads.adapters[li];
      lora_backward(at.a, at.a_bk, *aw.key, dk, ga.key, da);
      lora_backward(at.a, at.a_bv, *aw.value, dv, ga.value, da);
      if (aw.residual) lora_backward(at.a, at.a_br, *aw.residual, dv, ga.residual, da);
    }
    if (gw) {
      const Mat at_t = at.a.transposed();
      gw->wq += matmul(at_t, dq);
      gw->wk += matmul(at_t, dk);
      gw->wv += matmul(at_t, dv);
    }
    dx += layer_norm_backward(da, c.ln1_hat, c.ln1_rstd, w.ln1_gain, gw ? &gw->ln1_gain : nullptr,
                              gw ? &gw->ln1_bias : nullptr);
  }

  if (gbb) {
    for (std::size_t j = 0; j < d; ++j) gbb->cls_token[j] += dx(0, j);
    gbb->pos_embed += dx;
    const Mat dpatch = dx.row_block(1, n);
    gbb->patch_proj += matmul(tape.patches.transposed(), dpatch);
    add_col_sums(dpatch, gbb->patch_bias);
  }
}

namespace {

// Cross-entropy of one head's slice; fills dlogits when non-null.
double head_cross_entropy(const VitModel& model, const Vec& logits, int label, std::size_t head,
                          Vec* dlogits) {
  const auto [begin, end] = model.classifier.range(head);
  const int local = label - model.classifier.heads[head].label_offset;
  if (local < 0 || local >= static_cast<int>(end - begin))
    throw ParameterError("loss: label " + std::to_string(label) + " is outside head " +
                         std::to_string(head));
  const Vec p = softmax(std::span<const double>(logits).subspan(begin, end - begin));
  if (dlogits) {
    *dlogits = p;
    (*dlogits)[static_cast<std::size_t>(local)] -= 1.0;
  }
  return -std::log(std::max(p[static_cast<std::size_t>(local)], 1e-300));
}

}  // namespace

double head_loss(const VitModel& model, std::span<const Vec> images, std::span<const int> labels,
                 std::size_t head) {
  if (images.size() != labels.size() || images.empty())
    throw DimensionError("head_loss: images and labels must be non-empty and equal in count");
  ForwardOptions opt;
  opt.mode = ForwardMode::kTrain;
  const auto results = forward_batch(model, images, opt);
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i)
    total += head_cross_entropy(model, results[i].logits, labels[i], head, nullptr);
  return total / static_cast<double>(images.size());
}

LossAndGradients loss_and_gradients(const VitModel& model, std::span<const Vec> images,
                                    std::span<const int> labels, std::size_t head,
                                    bool with_backbone) {
  if (images.size() != labels.size() || images.empty())
    throw DimensionError("loss_and_gradients: images and labels must be non-empty and equal in count");
  ForwardOptions opt;
  opt.mode = ForwardMode::kTrain;
  const auto weights = prepare_weights(model, opt);
  LossAndGradients out{0.0, Gradients::zeros(model, head, with_backbone)};
  const double scale = 1.0 / static_cast<double>(images.size());
  Tape tape;
  Vec dlogits;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ForwardResult r = forward_prepared(model, images[i], opt, weights, &tape);
    out.loss += scale * head_cross_entropy(model, r.logits, labels[i], head, &dlogits);
    for (double& g : dlogits) g *= scale;
    backward(model, tape, dlogits, out.grads);
  }
  return out;
}

}  // namespace duallora
