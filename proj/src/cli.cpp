// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "duallora/errors.hpp"
#include "duallora/flops.hpp"
#include "duallora/report.hpp"
#include "json.hpp"

namespace duallora {

namespace {

namespace fs = std::filesystem;

constexpr int kExitFailure = 1;
constexpr int kExitAborted = 3;
constexpr int kExitMismatch = 4;

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("DUALLORA_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour the ones it really knows.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
  bool strict_paper = false;
};

void add_common(CLI::App& cmd, CommonOptions& o) {
  cmd.add_option("--config", o.config_path, "Run configuration (JSON)");
  cmd.add_option("--seed", o.seed, "Override the seed");
  cmd.add_option("--mode", o.mode, "lora, lora_o, lora_o_r, duallora, duallora_plus or oracle_id");
  cmd.add_option("--out", o.out, "Output directory");
  cmd.add_flag("--strict-paper", o.strict_paper, "Record the batch-free adapter FLOPs convention in the run config");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.learner.seed = *o.seed;
  if (!o.mode.empty()) c.learner.mode = parse_mode(o.mode);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.strict_paper) c.strict_paper = true;
  c.validate();
  return c;
}

int train_command(const CommonOptions& o) {
  const RunConfig config = resolve_config(o);
  const Experiment ex = run_experiment(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  write_text(dir / "acc_matrix.csv", acc_matrix_csv(ex.report.acc));
  write_text(dir / "summary.json", summary_json(config, ex.report));
  write_text(dir / "signatures.csv", signatures_csv(ex.checkpoint.signatures));
  if (ex.report.aborted) {
    std::cerr << "run aborted: " << ex.report.error << "\n";
    return kExitAborted;
  }
  save_checkpoint(dir / "checkpoint.bin", ex.checkpoint);
  write_file_atomic(dir / "feature_memory.bin", encode_feature_memory(ex.checkpoint.memory));
  std::cout << "ACC " << ex.report.metrics.acc << "  FT " << ex.report.metrics.ft << "\n";
  return 0;
}

int eval_command(const std::string& checkpoint_path, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const TaskStream stream = load_task_stream(ckpt.config);
  const EvalResult eval = evaluate_checkpoint(ckpt, stream);
  const std::size_t rows = ckpt.acc.completed_rows();
  bool match = rows == eval.accuracy.size();
  nlohmann::json report;
  for (std::size_t t = 0; t < eval.accuracy.size(); ++t) {
    const std::optional<double> recorded = rows > 0 ? ckpt.acc.get(rows - 1, t) : std::nullopt;
    const bool same = recorded.has_value() && recorded.value() == eval.accuracy[t];
    match = match && same;
    std::cout << "task " << t << ": " << eval.accuracy[t] << "%"
              << (!recorded.has_value() ? "" : same ? "  (matches)" : "  (differs)") << "\n";
  }
  report["accuracy"] = eval.accuracy;
  report["matches_recorded"] = match;
  if (eval.task_id.total > 0) report["task_id_accuracy"] = eval.task_id.accuracy();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(fs::path(out) / "eval.json", report.dump(2) + "\n");
  }
  return match ? 0 : kExitMismatch;
}

int ablate_command(const CommonOptions& o) {
  const RunConfig base = resolve_config(o);
  const TaskStream stream = load_task_stream(base);
  const Backbone backbone = pretrain_for(base, stream);
  std::vector<AblationRow> rows;
  for (Mode m : all_modes()) {
    RunConfig c = base;
    c.learner.mode = m;
    rows.push_back({m, run_experiment(c, stream, backbone).report});
  }
  const fs::path dir = base.output_dir;
  fs::create_directories(dir);
  write_text(dir / "ablation.csv", ablation_csv(rows));
  std::cout << ablation_table(rows);
  for (const AblationRow& r : rows)
    if (r.report.aborted) return kExitAborted;
  return 0;
}

struct FlopsOptions {
  std::string config_path;
  std::string out;
  bool strict_paper = false;
  bool json = false;
  std::vector<std::string> schemes;
  std::optional<double> layers, batch, seq_len, dim, rank, samples;
  std::optional<double> pool, prompt_len, e_prompt_len, g_prompt_len, top_k, prompt_layers;
};

// Keys of a flops parameter file, mapped to the matching option slot.
std::vector<std::pair<const char*, std::optional<double>*>> flops_fields(FlopsOptions& o) {
  return {{"L", &o.layers},  {"b", &o.batch},          {"n", &o.seq_len},         {"d", &o.dim},
          {"r", &o.rank},    {"m", &o.samples},        {"p", &o.pool},            {"e", &o.prompt_len},
          {"e_E", &o.e_prompt_len}, {"e_G", &o.g_prompt_len}, {"k", &o.top_k}, {"l", &o.prompt_layers}};
}

void load_flops_file(FlopsOptions& o) {
  const auto bytes = read_file_bytes(o.config_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("flops config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("flops config: expected an object");
  std::set<std::string> known;
  for (auto& [key, slot] : flops_fields(o)) {
    known.insert(key);
    const auto it = j.find(key);
    if (it == j.end()) continue;
    if (!it->is_number()) throw FormatError(std::string("flops config: '") + key + "' must be a number");
    if (!*slot) *slot = it->get<double>();  // command-line flags win
  }
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw FormatError("flops config: unknown key '" + key + "'");
}

int flops_command(FlopsOptions& o) {
  if (!o.config_path.empty()) load_flops_file(o);
  std::vector<flops::Scheme> schemes;
  for (const std::string& s : o.schemes) schemes.push_back(flops::parse_scheme(s));
  if (schemes.empty()) schemes = flops::all_schemes();

  std::vector<flops::FlopsProfile> profiles;
  flops::ArchParams shown = flops::reference_params(flops::Scheme::kVit);
  for (flops::Scheme s : schemes) {
    flops::ArchParams p = flops::reference_params(s);
    auto apply = [](const std::optional<double>& v, double& dst) { if (v) dst = *v; };
    auto apply_opt = [](const std::optional<double>& v, std::optional<double>& dst) { if (v) dst = *v; };
    apply(o.layers, p.layers);
    apply(o.batch, p.batch);
    apply(o.seq_len, p.seq_len);
    apply(o.dim, p.dim);
    apply(o.rank, p.rank);
    apply(o.samples, p.samples);
    apply_opt(o.pool, p.pool);
    apply_opt(o.prompt_len, p.prompt_len);
    apply_opt(o.e_prompt_len, p.e_prompt_len);
    apply_opt(o.g_prompt_len, p.g_prompt_len);
    apply_opt(o.top_k, p.top_k);
    apply_opt(o.prompt_layers, p.prompt_layers);
    shown = p;
    for (flops::Phase phase : {flops::Phase::kTrain, flops::Phase::kInfer})
      profiles.push_back(flops::scheme_flops(s, phase, p, o.strict_paper));
  }
  const std::string json = flops_json(profiles, shown, o.strict_paper);
  const std::string table = flops_table(profiles);
  std::cout << (o.json ? json : table);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "flops.json", json);
    write_text(fs::path(o.out) / "flops.txt", table);
  }
  return 0;
}

}  // namespace

EncoderConfig encoder_for(const RunConfig& config, const TaskStream& stream) {
  EncoderConfig e = config.encoder;
  e.image_side = stream.image_side;
  e.channels = stream.channels;
  e.validate();
  return e;
}

Backbone pretrain_for(const RunConfig& config, const TaskStream& stream) {
  return pretrain_backbone(encoder_for(config, stream), stream.pretext, stream.pretext_classes,
                           config.pretrain, config.learner.seed);
}

Experiment run_experiment(const RunConfig& config, const TaskStream& stream, const Backbone& backbone) {
  ContinualLearner learner(config.learner, backbone);
  Experiment ex;
  ex.report = run_continual(learner, stream.tasks);
  ex.checkpoint.config = config;
  ex.checkpoint.model = learner.model();
  ex.checkpoint.memory = learner.memory();
  ex.checkpoint.signatures = learner.signatures();
  ex.checkpoint.acc = ex.report.acc;
  return ex;
}

Experiment run_experiment(const RunConfig& config) {
  const TaskStream stream = load_task_stream(config);
  return run_experiment(config, stream, pretrain_for(config, stream));
}

EvalResult evaluate_checkpoint(const Checkpoint& checkpoint, const TaskStream& stream) {
  const ContinualLearner learner(checkpoint.config.learner, checkpoint.model, checkpoint.memory,
                                 checkpoint.signatures);
  const std::size_t seen = learner.tasks_trained();
  if (seen > stream.tasks.size()) throw StateError("checkpoint has more tasks than the dataset provides");
  return learner.evaluate(std::span<const TaskSplit>(stream.tasks).first(seen));
}

int run_cli(int argc, const char* const* argv) {
  configure_logging();
  CLI::App app{"Continual learning with orthogonal and residual low-rank adapters"};
  app.require_subcommand(1);

  CommonOptions train_opts;
  CLI::App* train = app.add_subcommand("train", "Run every task and write reports and a checkpoint");
  add_common(*train, train_opts);

  std::string ckpt_path, eval_out;
  CLI::App* eval = app.add_subcommand("eval", "Reload a checkpoint and re-evaluate all seen tasks");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint written by train")->required();
  eval->add_option("--out", eval_out, "Directory for eval.json");

  CommonOptions ablate_opts;
  CLI::App* ablate = app.add_subcommand("ablate", "Run all six modes on one fixture");
  add_common(*ablate, ablate_opts);

  FlopsOptions fo;
  CLI::App* fl = app.add_subcommand("flops", "Analytical FLOPs per scheme and phase");
  fl->add_option("--config", fo.config_path, "JSON file with any of L, b, n, d, r, m, p, e, e_E, e_G, k, l");
  fl->add_option("--out", fo.out, "Directory for flops.json and flops.txt");
  fl->add_flag("--strict-paper", fo.strict_paper, "Adapter FLOPs without the batch factor");
  fl->add_flag("--json", fo.json, "Print JSON instead of the table");
  fl->add_option("--scheme", fo.schemes, "Restrict to these schemes");
  fl->add_option("--layers", fo.layers, "L");
  fl->add_option("--batch", fo.batch, "b");
  fl->add_option("--seq-len", fo.seq_len, "n");
  fl->add_option("--dim", fo.dim, "d");
  fl->add_option("--rank", fo.rank, "r");
  fl->add_option("--samples", fo.samples, "m");
  fl->add_option("--pool", fo.pool, "p");
  fl->add_option("--prompt-len", fo.prompt_len, "e");
  fl->add_option("--e-prompt-len", fo.e_prompt_len, "e_E");
  fl->add_option("--g-prompt-len", fo.g_prompt_len, "e_G");
  fl->add_option("--top-k", fo.top_k, "k");
  fl->add_option("--prompt-layers", fo.prompt_layers, "l");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return train_command(train_opts);
    if (*eval) return eval_command(ckpt_path, eval_out);
    if (*ablate) return ablate_command(ablate_opts);
    if (*fl) return flops_command(fo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace duallora
