// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text run outputs. Numbers use the shortest representation that reads
// back to the same double, and JSON keys are sorted, so identical runs give
// identical bytes (apart from the wall-time field).

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "duallora/config.hpp"
#include "duallora/flops.hpp"
#include "duallora/task_identity.hpp"
#include "duallora/trainer.hpp"

namespace duallora {

/// Row = after-task index, column = task; cells above the diagonal are empty.
[[nodiscard]] std::string acc_matrix_csv(const AccMatrix& acc);
[[nodiscard]] std::string summary_json(const RunConfig& config, const RunReport& report);
/// One row per task: task index then π entries, zero-padded to the longest.
[[nodiscard]] std::string signatures_csv(const SignatureSet& signatures);

struct AblationRow {
  Mode mode = Mode::kLora;
  RunReport report;
};
[[nodiscard]] std::string ablation_csv(const std::vector<AblationRow>& rows);
[[nodiscard]] std::string ablation_table(const std::vector<AblationRow>& rows);

[[nodiscard]] std::string flops_json(const std::vector<flops::FlopsProfile>& profiles,
                                     const flops::ArchParams& params, bool strict_paper);
[[nodiscard]] std::string flops_table(const std::vector<flops::FlopsProfile>& profiles);

/// Writes through a temporary file; throws FormatError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace duallora
