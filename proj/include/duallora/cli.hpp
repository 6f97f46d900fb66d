// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// The run pipeline behind the command-line tool, exposed so tests can drive it
// without spawning processes.

#pragma once

#include "duallora/checkpoint.hpp"
#include "duallora/config.hpp"
#include "duallora/trainer.hpp"

namespace duallora {

/// The encoder the configuration describes, with image geometry taken from the stream.
[[nodiscard]] EncoderConfig encoder_for(const RunConfig& config, const TaskStream& stream);
[[nodiscard]] Backbone pretrain_for(const RunConfig& config, const TaskStream& stream);

struct Experiment {
  RunReport report;
  Checkpoint checkpoint;
};

[[nodiscard]] Experiment run_experiment(const RunConfig& config, const TaskStream& stream,
                                        const Backbone& backbone);
/// Generates or loads the data, pretrains the backbone and runs every task.
[[nodiscard]] Experiment run_experiment(const RunConfig& config);

/// Re-evaluates every task the checkpoint has seen on the configured test data.
[[nodiscard]] EvalResult evaluate_checkpoint(const Checkpoint& checkpoint, const TaskStream& stream);

/// Entry point of the `duallora` tool; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace duallora
