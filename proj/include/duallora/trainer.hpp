// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// The continual loop: per-task Adam training with mode-dependent projections,
// post-task subspace extraction, evaluation over all seen tasks, and metrics.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duallora/data.hpp"
#include "duallora/dual_lora.hpp"
#include "duallora/optim.hpp"
#include "duallora/task_identity.hpp"
#include "duallora/vit.hpp"

namespace duallora {

enum class Mode { kLora, kLoraO, kLoraOR, kDualLora, kDualLoraPlus, kOracleId };

struct ModeTraits {
  bool orthogonal = false;       // project key/value updates away from Φ
  bool residual = false;         // train R inside the newest Ψ
  bool dynamic_memory = false;   // relevance-weighted residual at inference
  bool predict_task = false;     // task-identity scaling of logits
  bool batch_signature = false;  // identity from the mean feature of a same-task batch
  bool oracle_task = false;      // argmax restricted to the true task's head
};

[[nodiscard]] ModeTraits traits(Mode mode) noexcept;
[[nodiscard]] std::string_view mode_name(Mode mode) noexcept;
/// Accepts lora, lora_o, lora_o_r, duallora, duallora_plus, oracle_id.
[[nodiscard]] Mode parse_mode(std::string_view name);
[[nodiscard]] const std::array<Mode, 6>& all_modes() noexcept;

struct CLConfig {
  int tasks = 5;
  int classes_per_task = 2;
  int epochs = 5;
  int batch = 16;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int rank = 10;
  double epsilon = 0.95;
  /// Feature samples per task; unset means the default for the task count,
  /// capped at the task's training set size.
  std::optional<int> samples;
  double lambda = 2.0;
  Mode mode = Mode::kDualLora;
  std::uint64_t seed = 0;
  /// Test batch size, also the group size for batch-level identity.
  int eval_batch = 16;

  /// Throws ParameterError on any out-of-range field.
  void validate() const;
  /// 200, 150 or 100 for up to 5, 10 or more tasks.
  [[nodiscard]] int default_samples() const noexcept;
  /// Throws ParameterError if an explicit sample count exceeds `task_size`.
  [[nodiscard]] std::size_t feature_samples(std::size_t task_size) const;

  friend bool operator==(const CLConfig&, const CLConfig&) = default;
};

struct PretrainConfig {
  int epochs = 8;
  int batch = 16;
  double lr = 2e-3;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

/// Trains every backbone weight plus a throwaway head on the pretext set, then
/// returns the backbone, which stays frozen from here on.
[[nodiscard]] Backbone pretrain_backbone(const EncoderConfig& config, const Dataset& pretext,
                                         int classes, const PretrainConfig& pretrain,
                                         std::uint64_t seed);

/// acc[after][task] in percent, defined for task <= after.
class AccMatrix {
 public:
  AccMatrix() = default;
  explicit AccMatrix(std::size_t tasks);

  [[nodiscard]] std::size_t tasks() const noexcept { return tasks_; }
  /// Throws ParameterError if task > after or either index is out of range.
  void set(std::size_t after, std::size_t task, double value);
  [[nodiscard]] std::optional<double> get(std::size_t after, std::size_t task) const;
  /// Number of leading rows that are completely filled.
  [[nodiscard]] std::size_t completed_rows() const noexcept;

  friend bool operator==(const AccMatrix&, const AccMatrix&) = default;

 private:
  std::size_t tasks_ = 0;
  std::vector<std::optional<double>> cells_;
};

struct Metrics {
  double acc = 0.0;
  double ft = 0.0;
  bool ft_defined = false;  // false for a single task
};

/// ACC and FT after row `after` (default: the last completed row).
/// Throws StateError if no row is complete.
[[nodiscard]] Metrics compute_metrics(const AccMatrix& m, std::optional<std::size_t> after = {});

struct TaskIdStats {
  std::size_t correct = 0;
  std::size_t total = 0;
  [[nodiscard]] double accuracy() const noexcept {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct EvalResult {
  std::vector<double> accuracy;  // per seen task, percent
  TaskIdStats task_id;
};

struct TrainStats {
  std::vector<double> epoch_loss;
};

class ContinualLearner {
 public:
  ContinualLearner(const CLConfig& config, Backbone backbone);
  /// Rebuilds a learner from persisted state.
  ContinualLearner(const CLConfig& config, VitModel model, FeatureMemory memory,
                   SignatureSet signatures);

  /// Trains a new head and fresh adapter increments on one task.
  /// Throws ParameterError on an empty task.
  TrainStats train_task(const TaskSplit& task);
  /// Merges the task's increments, grows the feature memory and stores the signature.
  MemoryUpdate finish_task(const TaskSplit& task);
  /// Accuracy on each of `seen` (which must not exceed the trained tasks).
  [[nodiscard]] EvalResult evaluate(std::span<const TaskSplit> seen) const;

  [[nodiscard]] const CLConfig& config() const noexcept { return config_; }
  [[nodiscard]] const VitModel& model() const noexcept { return model_; }
  [[nodiscard]] VitModel& mutable_model() noexcept { return model_; }
  [[nodiscard]] const FeatureMemory& memory() const noexcept { return memory_; }
  [[nodiscard]] const SignatureSet& signatures() const noexcept { return signatures_; }
  [[nodiscard]] std::size_t tasks_trained() const noexcept { return model_.classifier.size(); }

  /// Applies one optimisation step with the mode's projections; exposed for analysis.
  void apply_step(Adam& optimizer, const Gradients& grads);

 private:
  void project(Gradients& g) const;

  CLConfig config_;
  ModeTraits traits_;
  VitModel model_;
  FeatureMemory memory_;
  SignatureSet signatures_;
};

struct RunReport {
  CLConfig config;
  AccMatrix acc;
  Metrics metrics;
  std::vector<double> acc_per_step;  // ACC after each task
  double avg_acc = 0.0;              // mean of acc_per_step
  std::vector<double> task_id_accuracy;  // per step, percent (identity-predicting modes)
  std::vector<std::vector<std::size_t>> psi_ranks;  // [task][layer]
  std::vector<TrainStats> training;
  std::uint64_t backbone_fingerprint = 0;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string error;
};

/// Train, extract, evaluate for every task in order. Exceptions abort the run and
/// return the partial report with `aborted` set.
[[nodiscard]] RunReport run_continual(ContinualLearner& learner, const std::vector<TaskSplit>& tasks);

}  // namespace duallora
