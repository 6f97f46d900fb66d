// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "duallora/errors.hpp"
#include "duallora/rng.hpp"

namespace duallora {

namespace {

constexpr std::array<Mode, 6> kModes{Mode::kLora,     Mode::kLoraO,        Mode::kLoraOR,
                                     Mode::kDualLora, Mode::kDualLoraPlus, Mode::kOracleId};

// Trainable tensors in slot order: per layer key A/B, value A/B, residual A/B, then the head.
std::vector<std::span<double>> parameter_views(VitModel& model, std::size_t head) {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < model.adapters.layer_count(); ++l) {
    LayerAdapters& ad = model.adapters.layer(l);
    out.insert(out.end(), {ad.key.a.values(), ad.key.b.values(), ad.value.a.values(),
                           ad.value.b.values(), ad.residual.a.values(), ad.residual.b.values()});
  }
  Head& h = model.classifier.heads.at(head);
  out.push_back(h.weight.values());
  out.push_back(h.bias);
  return out;
}

std::vector<std::span<double>> gradient_views(Gradients& g) {
  std::vector<std::span<double>> out;
  for (LayerAdapterGrads& ag : g.adapters)
    out.insert(out.end(), {ag.key.a.values(), ag.key.b.values(), ag.value.a.values(),
                           ag.value.b.values(), ag.residual.a.values(), ag.residual.b.values()});
  out.push_back(g.head_weight.values());
  out.push_back(g.head_bias);
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Global label of the logit at position `index`.
int label_at(const ClassifierBank& bank, std::size_t index) {
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const auto [b, e] = bank.range(k);
    if (index < e) return bank.heads[k].label_offset + static_cast<int>(index - b);
  }
  throw StateError("label_at: logit index outside every head");
}

}  // namespace

ModeTraits traits(Mode mode) noexcept {
  ModeTraits t;
  switch (mode) {
    case Mode::kLora:
      break;
    case Mode::kLoraO:
      t.orthogonal = true;
      break;
    case Mode::kLoraOR:
      t.orthogonal = t.residual = true;
      break;
    case Mode::kDualLora:
      t.orthogonal = t.residual = t.dynamic_memory = t.predict_task = true;
      break;
    case Mode::kDualLoraPlus:
      t.orthogonal = t.residual = t.dynamic_memory = t.predict_task = t.batch_signature = true;
      break;
    case Mode::kOracleId:
      t.orthogonal = t.residual = t.dynamic_memory = t.oracle_task = true;
      break;
  }
  return t;
}

std::string_view mode_name(Mode mode) noexcept {
  switch (mode) {
    case Mode::kLora: return "lora";
    case Mode::kLoraO: return "lora_o";
    case Mode::kLoraOR: return "lora_o_r";
    case Mode::kDualLora: return "duallora";
    case Mode::kDualLoraPlus: return "duallora_plus";
    case Mode::kOracleId: return "oracle_id";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : kModes)
    if (mode_name(m) == name) return m;
  throw ParameterError("unknown mode '" + std::string(name) +
                       "' (expected lora, lora_o, lora_o_r, duallora, duallora_plus or oracle_id)");
}

const std::array<Mode, 6>& all_modes() noexcept { return kModes; }

void CLConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ParameterError(std::string("CLConfig: ") + what);
  };
  require(tasks >= 1, "tasks must be >= 1");
  require(classes_per_task >= 1, "classes_per_task must be >= 1");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch >= 1, "batch must be >= 1");
  require(eval_batch >= 1, "eval_batch must be >= 1");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(rank >= 1, "rank must be >= 1");
  require(epsilon > 0.0 && epsilon <= 1.0, "epsilon must lie in (0, 1]");
  require(!samples || *samples >= 1, "samples must be >= 1");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be non-negative");
}

int CLConfig::default_samples() const noexcept {
  if (tasks <= 5) return 200;
  if (tasks <= 10) return 150;
  return 100;
}

std::size_t CLConfig::feature_samples(std::size_t task_size) const {
  if (samples) {
    if (static_cast<std::size_t>(*samples) > task_size)
      throw ParameterError("CLConfig: samples " + std::to_string(*samples) + " exceeds task size " +
                           std::to_string(task_size));
    return static_cast<std::size_t>(*samples);
  }
  return std::min(static_cast<std::size_t>(default_samples()), task_size);
}

Backbone pretrain_backbone(const EncoderConfig& config, const Dataset& pretext, int classes,
                           const PretrainConfig& pretrain, std::uint64_t seed) {
  VitModel model;
  model.backbone = Backbone::random(config, seed);
  if (classes < 1 || pretext.size() == 0 || pretrain.epochs < 1) return model.backbone;
  Rng head_rng(seed, Stream::kHeadInit, 0xFFFFu);
  model.classifier.add_head(config.embed_dim, classes, 0, head_rng);
  Adam adam(pretrain.lr);
  Rng shuffle(seed, Stream::kShuffle, 0xFFFFu);
  std::vector<std::size_t> order(pretext.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < pretrain.epochs; ++epoch) {
    shuffle.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += pretrain.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(pretrain.batch));
      std::vector<Vec> xs;
      std::vector<int> ys;
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(pretext.images[order[i]]);
        ys.push_back(pretext.labels[order[i]]);
      }
      LossAndGradients lg = loss_and_gradients(model, xs, ys, 0, true);
      total += lg.loss * static_cast<double>(end - start);
      adam.begin_step();
      auto params = model.backbone.tensors();
      auto grads = lg.grads.backbone->tensors();
      params.push_back(model.classifier.heads[0].weight.values());
      params.push_back(model.classifier.heads[0].bias);
      grads.push_back(lg.grads.head_weight.values());
      grads.push_back(lg.grads.head_bias);
      Vec step;
      for (std::size_t s = 0; s < params.size(); ++s) {
        step.assign(params[s].size(), 0.0);
        adam.compute_step(s, grads[s], step);
        for (std::size_t i = 0; i < step.size(); ++i) params[s][i] += step[i];
      }
    }
    spdlog::debug("pretrain epoch {} loss {:.4f}", epoch, total / static_cast<double>(order.size()));
  }
  return model.backbone;
}

AccMatrix::AccMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

void AccMatrix::set(std::size_t after, std::size_t task, double value) {
  if (after >= tasks_ || task > after)
    throw ParameterError("AccMatrix: entry (" + std::to_string(after) + ", " + std::to_string(task) +
                         ") is outside the lower triangle");
  if (!(value >= 0.0 && value <= 100.0)) throw ParameterError("AccMatrix: accuracy must be in [0, 100]");
  cells_[after * tasks_ + task] = value;
}

std::optional<double> AccMatrix::get(std::size_t after, std::size_t task) const {
  if (after >= tasks_ || task > after) return std::nullopt;
  return cells_[after * tasks_ + task];
}

std::size_t AccMatrix::completed_rows() const noexcept {
  std::size_t rows = 0;
  for (std::size_t a = 0; a < tasks_; ++a) {
    for (std::size_t t = 0; t <= a; ++t)
      if (!cells_[a * tasks_ + t]) return rows;
    ++rows;
  }
  return rows;
}

Metrics compute_metrics(const AccMatrix& m, std::optional<std::size_t> after) {
  const std::size_t rows = m.completed_rows();
  if (rows == 0) throw StateError("compute_metrics: no completed row");
  const std::size_t last = after.value_or(rows - 1);
  if (last >= rows) throw StateError("compute_metrics: requested row is incomplete");
  Metrics out;
  const std::size_t count = last + 1;
  for (std::size_t t = 0; t < count; ++t) out.acc += *m.get(last, t);
  out.acc /= static_cast<double>(count);
  if (count == 1) return out;
  out.ft_defined = true;
  for (std::size_t t = 0; t + 1 < count; ++t) {
    double best = *m.get(t, t);
    for (std::size_t a = t; a <= last; ++a) best = std::max(best, *m.get(a, t));
    out.ft += best - *m.get(last, t);
  }
  out.ft /= static_cast<double>(count - 1);
  return out;
}

ContinualLearner::ContinualLearner(const CLConfig& config, Backbone backbone)
    : config_(config), traits_(traits(config.mode)), signatures_(config.lambda) {
  config_.validate();
  const std::size_t d = backbone.cls_token.size();
  const std::size_t layers = backbone.blocks.size();
  model_.backbone = std::move(backbone);
  model_.adapters = AdapterSet(layers, d, static_cast<std::size_t>(config_.rank));
  model_.use_residual = traits_.residual;
  memory_ = FeatureMemory(layers, d);
}

ContinualLearner::ContinualLearner(const CLConfig& config, VitModel model, FeatureMemory memory,
                                   SignatureSet signatures)
    : config_(config),
      traits_(traits(config.mode)),
      model_(std::move(model)),
      memory_(std::move(memory)),
      signatures_(std::move(signatures)) {
  config_.validate();
  model_.use_residual = traits_.residual;
  memory_.validate();
}

void ContinualLearner::project(Gradients& g) const {
  for (std::size_t l = 0; l < g.adapters.size(); ++l) {
    LayerAdapterGrads& ag = g.adapters[l];
    if (traits_.orthogonal) project_orthogonal_gradients(ag, memory_.layer(l));
    if (traits_.residual) {
      const LayerMemory& lm = memory_.layer(l);
      project_residual_gradients(ag.residual, lm.psi.empty() ? Basis(memory_.dim()) : lm.psi.back());
    } else {
      project_residual_gradients(ag.residual, Basis(memory_.dim()));
    }
  }
}

void ContinualLearner::apply_step(Adam& optimizer, const Gradients& grads) {
  Gradients g = grads;
  project(g);
  Gradients step = g;
  optimizer.begin_step();
  {
    auto gv = gradient_views(g);
    auto sv = gradient_views(step);
    for (std::size_t s = 0; s < gv.size(); ++s) optimizer.compute_step(s, gv[s], sv[s]);
  }
  // Elementwise moment scaling leaves the projected subspace; map the step back.
  // Projection reallocates the matrices, so views are taken afterwards.
  project(step);
  auto sv = gradient_views(step);
  auto pv = parameter_views(model_, grads.head);
  for (std::size_t s = 0; s < pv.size(); ++s)
    for (std::size_t i = 0; i < pv[s].size(); ++i) pv[s][i] += sv[s][i];
}

TrainStats ContinualLearner::train_task(const TaskSplit& task) {
  if (task.train.size() == 0) throw ParameterError("train_task: empty task data");
  const std::size_t t = model_.classifier.size();
  const std::uint64_t seed = config_.seed;
  Rng head_rng(seed, Stream::kHeadInit, static_cast<std::uint32_t>(t));
  model_.classifier.add_head(model_.adapters.dim(), task.classes, task.label_offset, head_rng);
  Rng adapter_rng(seed, Stream::kAdapterInit, static_cast<std::uint32_t>(t));
  model_.adapters.begin_task(adapter_rng);
  if (traits_.orthogonal || traits_.residual)
    align_live_factors(model_.adapters, memory_, traits_.residual);

  Adam adam(config_.lr, config_.beta1, config_.beta2);
  Rng shuffle(seed, Stream::kShuffle, static_cast<std::uint32_t>(t));
  std::vector<std::size_t> order(task.train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainStats stats;
  std::vector<Vec> xs;
  std::vector<int> ys;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    shuffle.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config_.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch));
      xs.clear();
      ys.clear();
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(task.train.images[order[i]]);
        ys.push_back(task.train.labels[order[i]]);
      }
      const LossAndGradients lg = loss_and_gradients(model_, xs, ys, t, false);
      total += lg.loss * static_cast<double>(end - start);
      apply_step(adam, lg.grads);
    }
    stats.epoch_loss.push_back(total / static_cast<double>(order.size()));
    spdlog::debug("task {} epoch {} loss {:.4f}", t, epoch, stats.epoch_loss.back());
  }
  return stats;
}

MemoryUpdate ContinualLearner::finish_task(const TaskSplit& task) {
  const std::size_t t = model_.classifier.size();
  if (t == 0 || memory_.task_count() + 1 != t)
    throw StateError("finish_task: call once after each train_task");
  model_.adapters.merge_live();
  const TaskFeatures feats =
      collect_features(model_, task.train.images, config_.feature_samples(task.train.size()),
                       config_.seed, static_cast<std::uint32_t>(t - 1));
  MemoryUpdate update = update_feature_memory(memory_, feats, config_.epsilon);
  const Signature sig = compute_signature(feats.mean_final_value, memory_.layer(memory_.layer_count() - 1));
  if (sig.degenerate) spdlog::warn("task {}: signature is degenerate (no residual directions)", t - 1);
  signatures_.add(sig.values);
  return update;
}

EvalResult ContinualLearner::evaluate(std::span<const TaskSplit> seen) const {
  if (seen.size() > model_.classifier.size())
    throw StateError("evaluate: more test sets than trained tasks");
  EvalResult out;
  ForwardOptions opt;
  ResidualModulation modulation;
  if (traits_.dynamic_memory && memory_.task_count() > 0) {
    modulation = build_residual_modulation(memory_, model_.adapters);
    opt.mode = ForwardMode::kInferDm;
    opt.modulation = &modulation;
  } else {
    opt.mode = ForwardMode::kInfer;
  }
  const bool identify = traits_.predict_task && !signatures_.empty();
  opt.record_taps = identify;
  const LayerMemory* last_layer = memory_.layer_count() ? &memory_.layer(memory_.layer_count() - 1) : nullptr;

  for (std::size_t tau = 0; tau < seen.size(); ++tau) {
    const Dataset& test = seen[tau].test;
    std::size_t correct = 0;
    const std::size_t group = traits_.batch_signature ? static_cast<std::size_t>(config_.eval_batch)
                                                      : std::size_t{1};
    for (std::size_t start = 0; start < test.size(); start += group) {
      const std::size_t end = std::min(test.size(), start + group);
      auto results = forward_batch(model_, std::span<const Vec>(test.images).subspan(start, end - start), opt);
      std::vector<TaskPrediction> preds(results.size());
      if (identify) {
        if (traits_.batch_signature) {
          Vec mean(results[0].taps.back().s_class.size(), 0.0);
          for (const auto& r : results)
            for (std::size_t j = 0; j < mean.size(); ++j)
              mean[j] += r.taps.back().s_class[j] / static_cast<double>(results.size());
          const TaskPrediction p = predict_task(compute_signature(mean, *last_layer).values, signatures_);
          std::fill(preds.begin(), preds.end(), p);
        } else {
          for (std::size_t i = 0; i < results.size(); ++i)
            preds[i] = predict_task(compute_signature(results[i].taps.back().s_class, *last_layer).values,
                                    signatures_);
        }
      }
      for (std::size_t i = 0; i < results.size(); ++i) {
        Vec& logits = results[i].logits;
        int predicted;
        if (traits_.oracle_task) {
          const auto [b, e] = model_.classifier.range(tau);
          predicted = label_at(model_.classifier,
                               b + argmax(std::span<const double>(logits).subspan(b, e - b)));
        } else {
          if (identify) {
            ++out.task_id.total;
            if (preds[i].valid) {
              if (preds[i].task == tau) ++out.task_id.correct;
              scale_logits(logits, model_.classifier.range(preds[i].task), preds[i].confidence);
            }
          }
          predicted = label_at(model_.classifier, argmax(logits));
        }
        if (predicted == test.labels[start + i]) ++correct;
      }
    }
    out.accuracy.push_back(test.size() == 0 ? 0.0
                                            : 100.0 * static_cast<double>(correct) /
                                                  static_cast<double>(test.size()));
  }
  return out;
}

RunReport run_continual(ContinualLearner& learner, const std::vector<TaskSplit>& tasks) {
  const auto started = std::chrono::steady_clock::now();
  RunReport report;
  report.config = learner.config();
  report.acc = AccMatrix(tasks.size());
  report.backbone_fingerprint = learner.model().backbone.fingerprint();
  try {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      report.training.push_back(learner.train_task(tasks[t]));
      const MemoryUpdate update = learner.finish_task(tasks[t]);
      report.psi_ranks.push_back(update.value_added);
      const EvalResult eval = learner.evaluate(std::span<const TaskSplit>(tasks).first(t + 1));
      for (std::size_t tau = 0; tau <= t; ++tau) report.acc.set(t, tau, eval.accuracy[tau]);
      if (eval.task_id.total > 0) report.task_id_accuracy.push_back(eval.task_id.accuracy());
      const Metrics m = compute_metrics(report.acc, t);
      report.acc_per_step.push_back(m.acc);
      spdlog::info("[{}] after task {}: ACC {:.2f} FT {:.2f}", mode_name(learner.config().mode), t,
                   m.acc, m.ft);
    }
    if (learner.model().backbone.fingerprint() != report.backbone_fingerprint)
      throw StateError("run_continual: the frozen backbone changed during training");
  } catch (const std::exception& e) {
    report.aborted = true;
    report.error = e.what();
    spdlog::error("run aborted: {}", e.what());
  }
  if (report.acc.completed_rows() > 0) report.metrics = compute_metrics(report.acc);
  if (!report.acc_per_step.empty())
    report.avg_acc = std::accumulate(report.acc_per_step.begin(), report.acc_per_step.end(), 0.0) /
                     static_cast<double>(report.acc_per_step.size());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace duallora
