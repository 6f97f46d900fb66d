// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/report.hpp"

#include <algorithm>
#include <cstring>

#include <spdlog/fmt/fmt.h>

#include "duallora/checkpoint.hpp"
#include "json.hpp"

namespace duallora {

namespace {

using nlohmann::json;

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

std::string acc_matrix_csv(const AccMatrix& acc) {
  std::string out = "after_task";
  for (std::size_t t = 0; t < acc.tasks(); ++t) out += fmt::format(",task_{}", t);
  out += '\n';
  for (std::size_t a = 0; a < acc.tasks(); ++a) {
    out += std::to_string(a);
    for (std::size_t t = 0; t < acc.tasks(); ++t) {
      out += ',';
      if (const auto v = t <= a ? acc.get(a, t) : std::nullopt) out += num(*v);
    }
    out += '\n';
  }
  return out;
}

std::string summary_json(const RunConfig& config, const RunReport& r) {
  json out;
  out["config"] = json::parse(to_json(config));
  out["mode"] = std::string(mode_name(r.config.mode));
  out["seed"] = r.config.seed;
  out["acc"] = r.metrics.acc;
  out["ft"] = r.metrics.ft;
  out["ft_defined"] = r.metrics.ft_defined;
  out["acc_per_step"] = r.acc_per_step;
  out["avg_acc"] = r.avg_acc;
  out["task_id_accuracy"] = r.task_id_accuracy;
  out["psi_ranks"] = r.psi_ranks;
  json final_row = json::array();
  if (const std::size_t rows = r.acc.completed_rows(); rows > 0)
    for (std::size_t t = 0; t < rows; ++t) final_row.push_back(*r.acc.get(rows - 1, t));
  out["final_accuracy"] = final_row;
  json losses = json::array();
  for (const TrainStats& s : r.training) losses.push_back(s.epoch_loss);
  out["epoch_loss"] = losses;
  out["backbone_fingerprint"] = fmt::format("{:016x}", r.backbone_fingerprint);
  out["aborted"] = r.aborted;
  out["error"] = r.error;
  out["wall_seconds"] = r.wall_seconds;
  return out.dump(2) + "\n";
}

std::string signatures_csv(const SignatureSet& signatures) {
  std::size_t width = 0;
  for (const Vec& v : signatures.all()) width = std::max(width, v.size());
  std::string out = "task";
  for (std::size_t k = 0; k < width; ++k) out += fmt::format(",pi_{}", k);
  out += '\n';
  for (std::size_t t = 0; t < signatures.size(); ++t) {
    out += std::to_string(t);
    const Vec& v = signatures.at(t);
    for (std::size_t k = 0; k < width; ++k) out += ',' + num(k < v.size() ? v[k] : 0.0);
    out += '\n';
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "mode,acc,ft,avg_acc,task_id_accuracy\n";
  for (const AblationRow& row : rows) {
    const RunReport& r = row.report;
    out += fmt::format("{},{},{},{},{}\n", mode_name(row.mode), num(r.metrics.acc), num(r.metrics.ft),
                       num(r.avg_acc), r.task_id_accuracy.empty() ? "" : num(r.task_id_accuracy.back()));
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = fmt::format("{:<14} {:>8} {:>8} {:>8} {:>8}\n", "mode", "ACC", "FT", "avgACC", "taskID");
  for (const AblationRow& row : rows) {
    const RunReport& r = row.report;
    const std::string tid = r.task_id_accuracy.empty() ? "-" : fmt::format("{:.2f}", r.task_id_accuracy.back());
    out += fmt::format("{:<14} {:>8.2f} {:>8.2f} {:>8.2f} {:>8}{}\n", mode_name(row.mode), r.metrics.acc,
                       r.metrics.ft, r.avg_acc, tid, r.aborted ? "  (aborted: " + r.error + ")" : "");
  }
  return out;
}

std::string flops_json(const std::vector<flops::FlopsProfile>& profiles, const flops::ArchParams& p,
                       bool strict_paper) {
  json params = {{"L", p.layers}, {"b", p.batch}, {"n", p.seq_len}, {"d", p.dim}, {"r", p.rank}, {"m", p.samples}};
  json out;
  out["params"] = params;
  out["strict_paper"] = strict_paper;
  json list = json::array();
  for (const flops::FlopsProfile& f : profiles) {
    json terms = json::array();
    for (const flops::Term& t : f.terms) terms.push_back({{"name", t.name}, {"flops", t.flops}});
    json entry = {{"scheme", std::string(flops::scheme_name(f.scheme))},
                  {"phase", std::string(flops::phase_name(f.phase))},
                  {"flops", f.flops},
                  {"lower_bound", f.lower_bound},
                  {"terms", terms}};
    if (!f.note.empty()) entry["note"] = f.note;
    list.push_back(entry);
  }
  out["profiles"] = list;
  return out.dump(2) + "\n";
}

std::string flops_table(const std::vector<flops::FlopsProfile>& profiles) {
  std::string out = fmt::format("{:<12} {:<6} {:>14} {}\n", "scheme", "phase", "GFLOPs", "");
  for (const flops::FlopsProfile& f : profiles) {
    out += fmt::format("{:<12} {:<6} {:>14.3f} {}\n", flops::scheme_name(f.scheme), flops::phase_name(f.phase),
                       f.flops / 1e9, f.lower_bound ? "(lower bound)" : "");
  }
  for (const flops::FlopsProfile& f : profiles)
    if (!f.note.empty() && f.phase == flops::Phase::kTrain)
      out += fmt::format("note [{}]: {}\n", flops::scheme_name(f.scheme), f.note);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::vector<std::byte> bytes(text.size());
  std::memcpy(bytes.data(), text.data(), text.size());
  write_file_atomic(path, bytes);
}

}  // namespace duallora
