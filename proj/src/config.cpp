// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "duallora/errors.hpp"
#include "json.hpp"

namespace duallora {

namespace {

using nlohmann::json;

// Reads the fields of one JSON object and, on finish(), rejects any key that
// no reader asked for.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw FormatError(where() + "expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    out = convert<T>(*it, key);
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    const auto it = object_.find(key);
    if (it == object_.end() || it->is_null()) return;
    out = convert<T>(*it, key);
  }

  [[nodiscard]] const json* child(const char* key) {
    seen_.insert(key);
    const auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  [[nodiscard]] std::string child_path(const char* key) const { return path_ + key + "."; }

  void finish() const {
    for (const auto& [key, value] : object_.items())
      if (!seen_.contains(key)) throw FormatError(where() + "unknown key '" + key + "'");
  }

 private:
  [[nodiscard]] std::string where() const {
    return "config: " + (path_.empty() ? std::string("<root>") : path_.substr(0, path_.size() - 1)) + ": ";
  }

  template <typename T>
  T convert(const json& v, const char* key) const {
    const std::string field = where() + "'" + key + "' ";
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw FormatError(field + "must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw FormatError(field + "must be a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw FormatError(field + "must be a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw FormatError(field + "must be an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
        throw FormatError(field + "is out of range");
      return static_cast<T>(x);
    } else {
      if (!v.is_number()) throw FormatError(field + "must be a number");
      return v.get<T>();
    }
  }

  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

CLConfig read_learner(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  CLConfig c;
  r.read("tasks", c.tasks);
  r.read("classes_per_task", c.classes_per_task);
  r.read("epochs", c.epochs);
  r.read("batch", c.batch);
  r.read("lr", c.lr);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("rank", c.rank);
  r.read("epsilon", c.epsilon);
  r.read_optional("samples", c.samples);
  r.read("lambda", c.lambda);
  std::string mode(mode_name(c.mode));
  r.read("mode", mode);
  c.mode = parse_mode(mode);
  r.read("seed", c.seed);
  r.read("eval_batch", c.eval_batch);
  r.finish();
  return c;
}

EncoderConfig read_encoder(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  EncoderConfig e;
  r.read("layers", e.layers);
  r.read("embed_dim", e.embed_dim);
  r.read("ffn_ratio", e.ffn_ratio);
  r.read("patch_side", e.patch_side);
  r.finish();
  return e;
}

PretrainConfig read_pretrain(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  PretrainConfig p;
  r.read("epochs", p.epochs);
  r.read("batch", p.batch);
  r.read("lr", p.lr);
  r.finish();
  return p;
}

SyntheticTaskSpec read_synthetic(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  SyntheticTaskSpec s;
  r.read("samples_per_class", s.samples_per_class);
  r.read("test_per_class", s.test_per_class);
  r.read("image_side", s.image_side);
  r.read("channels", s.channels);
  r.read("separation", s.separation);
  r.read("noise", s.noise);
  r.read("pretext_classes", s.pretext_classes);
  r.read("pretext_samples_per_class", s.pretext_samples_per_class);
  r.finish();
  return s;
}

FileDataset read_file_dataset(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  FileDataset f;
  r.read("path", f.path);
  r.read("test_fraction", f.test_fraction);
  r.read("pretext_classes", f.pretext_classes);
  r.finish();
  if (f.path.empty()) throw FormatError("config: dataset.file: 'path' is required");
  return f;
}

}  // namespace

void RunConfig::validate() const {
  learner.validate();
  if (synthetic.has_value() == file.has_value())
    throw ParameterError("RunConfig: exactly one dataset source (synthetic or file) is required");
  if (pretrain.epochs < 0 || pretrain.batch < 1 || !(pretrain.lr > 0.0))
    throw ParameterError("RunConfig: invalid pretraining settings");
  if (synthetic) {
    SyntheticTaskSpec s = *synthetic;
    s.tasks = learner.tasks;
    s.classes_per_task = learner.classes_per_task;
    s.patch_side = encoder.patch_side;
    s.validate();
    EncoderConfig e = encoder;
    e.image_side = synthetic->image_side;
    e.channels = synthetic->channels;
    e.validate();
  }
  if (file && !(file->test_fraction > 0.0 && file->test_fraction < 1.0))
    throw ParameterError("RunConfig: test_fraction must lie in (0, 1)");
  if (output_dir.empty()) throw ParameterError("RunConfig: output_dir must not be empty");
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(root, "");
  if (const json* j = r.child("learner")) c.learner = read_learner(*j, r.child_path("learner"));
  if (const json* j = r.child("encoder")) c.encoder = read_encoder(*j, r.child_path("encoder"));
  if (const json* j = r.child("pretrain")) c.pretrain = read_pretrain(*j, r.child_path("pretrain"));
  if (const json* j = r.child("dataset")) {
    ObjectReader d(*j, "dataset.");
    const json* syn = d.child("synthetic");
    const json* file = d.child("file");
    d.finish();
    if ((syn != nullptr) == (file != nullptr))
      throw FormatError("config: dataset: exactly one of 'synthetic' or 'file' is required");
    c.synthetic.reset();
    if (syn) c.synthetic = read_synthetic(*syn, "dataset.synthetic.");
    if (file) c.file = read_file_dataset(*file, "dataset.file.");
  }
  r.read("output_dir", c.output_dir);
  r.read("strict_paper", c.strict_paper);
  r.finish();
  if (c.synthetic) {
    c.synthetic->tasks = c.learner.tasks;
    c.synthetic->classes_per_task = c.learner.classes_per_task;
    c.synthetic->patch_side = c.encoder.patch_side;
    c.encoder.image_side = c.synthetic->image_side;
    c.encoder.channels = c.synthetic->channels;
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig& c, int indent) {
  json learner = {{"tasks", c.learner.tasks},
                  {"classes_per_task", c.learner.classes_per_task},
                  {"epochs", c.learner.epochs},
                  {"batch", c.learner.batch},
                  {"lr", c.learner.lr},
                  {"beta1", c.learner.beta1},
                  {"beta2", c.learner.beta2},
                  {"rank", c.learner.rank},
                  {"epsilon", c.learner.epsilon},
                  {"lambda", c.learner.lambda},
                  {"mode", std::string(mode_name(c.learner.mode))},
                  {"seed", c.learner.seed},
                  {"eval_batch", c.learner.eval_batch}};
  learner["samples"] = c.learner.samples ? json(*c.learner.samples) : json(nullptr);
  json root = {{"learner", learner},
               {"encoder",
                {{"layers", c.encoder.layers},
                 {"embed_dim", c.encoder.embed_dim},
                 {"ffn_ratio", c.encoder.ffn_ratio},
                 {"patch_side", c.encoder.patch_side}}},
               {"pretrain",
                {{"epochs", c.pretrain.epochs}, {"batch", c.pretrain.batch}, {"lr", c.pretrain.lr}}},
               {"output_dir", c.output_dir},
               {"strict_paper", c.strict_paper}};
  json dataset = json::object();
  if (c.synthetic) {
    const SyntheticTaskSpec& s = *c.synthetic;
    dataset["synthetic"] = {{"samples_per_class", s.samples_per_class},
                            {"test_per_class", s.test_per_class},
                            {"image_side", s.image_side},
                            {"channels", s.channels},
                            {"separation", s.separation},
                            {"noise", s.noise},
                            {"pretext_classes", s.pretext_classes},
                            {"pretext_samples_per_class", s.pretext_samples_per_class}};
  }
  if (c.file) {
    dataset["file"] = {{"path", c.file->path},
                       {"test_fraction", c.file->test_fraction},
                       {"pretext_classes", c.file->pretext_classes}};
  }
  root["dataset"] = dataset;
  return root.dump(indent);
}

TaskStream load_task_stream(const RunConfig& c) {
  c.validate();
  if (c.synthetic) return generate_tasks(*c.synthetic, c.learner.seed);
  const ImageSet set = read_dataset(c.file->path);
  return split_by_class(set, c.learner.tasks, c.learner.classes_per_task, c.file->pretext_classes,
                        c.file->test_fraction, c.learner.seed);
}

}  // namespace duallora
