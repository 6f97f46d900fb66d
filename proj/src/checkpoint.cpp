// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string_view>

#include "duallora/errors.hpp"
#include "duallora/hash.hpp"

namespace duallora {

namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'D', 'L', 'L', 'O', 'R', 'A', 'C', 'K'};
constexpr std::array<char, 8> kMemoryMagic = {'D', 'L', 'F', 'M', 'E', 'M', 'B', 'L'};
constexpr std::uint32_t kMemoryVersion = 1;

enum Section : std::uint32_t {
  kConfig = 1,
  kBackbone = 2,
  kAdapters = 3,
  kClassifier = 4,
  kMemory = 5,
  kSignatures = 6,
  kAccuracy = 7,
};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<std::byte>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const char> chars) {
    for (char c : chars) u8(static_cast<std::uint8_t>(c));
  }
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  void reals(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void mat(const Mat& m) {
    u64(m.rows());
    u64(m.cols());
    for (double x : m.values()) f64(x);
  }
  void append(std::span<const std::byte> other) { bytes_.insert(bytes_.end(), other.begin(), other.end()); }

  [[nodiscard]] const std::vector<std::byte>& bytes() const noexcept { return bytes_; }
  [[nodiscard]] std::vector<std::byte> take() { return std::move(bytes_); }

 private:
  std::vector<std::byte> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::byte> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = count(1);
    std::string s(n, '\0');
    for (char& c : s) c = static_cast<char>(u8());
    return s;
  }
  Vec reals() {
    Vec v(count(8));
    for (double& x : v) x = f64();
    return v;
  }
  Mat mat() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (cols != 0 && rows > remaining() / 8 / cols) fail("matrix larger than the remaining data");
    Mat m(rows, cols);
    for (double& x : m.values()) x = f64();
    return m;
  }
  std::span<const std::byte> take(std::uint64_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  void expect_end() const {
    if (remaining() != 0) fail("trailing bytes");
  }
  [[noreturn]] void fail(const std::string& why) const { throw FormatError(what_ + ": " + why); }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) fail("truncated data");
  }
  // Element count followed by at least `width` bytes per element.
  std::uint64_t count(std::uint64_t width) {
    const std::uint64_t n = u64();
    if (n > remaining() / width) fail("length field exceeds the remaining data");
    return n;
  }

  std::span<const std::byte> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

// Container: magic, version, section count, sections {tag, size, payload}, then
// the FNV-1a hash of every preceding byte.
std::vector<std::byte> seal(const std::array<char, 8>& magic, std::uint32_t version,
                            const std::vector<std::pair<std::uint32_t, std::vector<std::byte>>>& sections) {
  Writer w;
  w.raw(magic);
  w.u32(version);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    w.u32(tag);
    w.u64(payload.size());
    w.append(payload);
  }
  const std::uint64_t hash = fnv1a64(w.bytes());
  w.u64(hash);
  return w.take();
}

std::vector<std::pair<std::uint32_t, std::span<const std::byte>>> unseal(
    std::span<const std::byte> bytes, const std::array<char, 8>& magic, std::uint32_t version,
    const std::string& what) {
  Reader r(bytes, what);
  if (bytes.size() < magic.size() || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    r.fail("bad magic bytes");
  if (bytes.size() < magic.size() + 16) r.fail("truncated data");
  const auto body = bytes.first(bytes.size() - 8);
  Reader trailer(bytes.last(8), what);
  if (fnv1a64(body) != trailer.u64()) r.fail("checksum mismatch");

  Reader b(body, what);
  (void)b.take(magic.size());
  const std::uint32_t found = b.u32();
  if (found != version) r.fail("unsupported version " + std::to_string(found));
  const std::uint32_t n = b.u32();
  std::vector<std::pair<std::uint32_t, std::span<const std::byte>>> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t tag = b.u32();
    const std::uint64_t size = b.u64();
    out.emplace_back(tag, b.take(size));
  }
  b.expect_end();
  return out;
}

std::span<const std::byte> find_section(
    const std::vector<std::pair<std::uint32_t, std::span<const std::byte>>>& sections,
    std::uint32_t tag, const std::string& what) {
  std::span<const std::byte> found;
  int hits = 0;
  for (const auto& [t, payload] : sections) {
    if (t == tag) {
      found = payload;
      ++hits;
    }
  }
  if (hits != 1) throw FormatError(what + ": section " + std::to_string(tag) + " missing or repeated");
  return found;
}

void check_shape(const Reader& r, const Mat& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) r.fail(std::string("unexpected shape for ") + name);
}

std::vector<std::byte> encode_backbone(const Backbone& b) {
  Writer w;
  const EncoderConfig& c = b.config;
  for (int v : {c.layers, c.embed_dim, c.ffn_ratio, c.image_side, c.patch_side, c.channels}) w.i32(v);
  const auto tensors = b.tensors();
  w.u64(tensors.size());
  for (auto t : tensors) w.reals(t);
  return w.take();
}

Backbone decode_backbone(std::span<const std::byte> bytes) {
  Reader r(bytes, "checkpoint backbone");
  EncoderConfig c;
  for (int* v : {&c.layers, &c.embed_dim, &c.ffn_ratio, &c.image_side, &c.patch_side, &c.channels})
    *v = r.i32();
  try {
    c.validate();
  } catch (const ParameterError& e) {
    r.fail(e.what());
  }
  if (c.layers > 4096 || c.embed_dim > 1 << 16 || c.ffn_ratio > 64) r.fail("implausible encoder size");
  Backbone b = Backbone::zeros_like(Backbone::random(c, 0));
  auto tensors = b.tensors();
  if (r.u64() != tensors.size()) r.fail("tensor count mismatch");
  for (auto t : tensors) {
    const Vec v = r.reals();
    if (v.size() != t.size()) r.fail("tensor size mismatch");
    std::copy(v.begin(), v.end(), t.begin());
  }
  r.expect_end();
  return b;
}

std::vector<std::byte> encode_adapters(const AdapterSet& a) {
  Writer w;
  w.u64(a.layer_count());
  w.u64(a.dim());
  w.u64(a.rank());
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    const LayerAdapters& la = a.layer(l);
    for (const Mat* m : {&la.key.a, &la.key.b, &la.value.a, &la.value.b, &la.residual.a, &la.residual.b,
                         &la.merged_key, &la.merged_value, &la.merged_residual})
      w.mat(*m);
  }
  return w.take();
}

AdapterSet decode_adapters(std::span<const std::byte> bytes) {
  Reader r(bytes, "checkpoint adapters");
  const std::uint64_t layers = r.u64(), dim = r.u64(), rank = r.u64();
  if (layers > 4096 || dim > 1 << 16) r.fail("implausible adapter size");
  AdapterSet a;
  try {
    a = AdapterSet(layers, dim, rank);
  } catch (const ParameterError& e) {
    r.fail(e.what());
  }
  for (std::size_t l = 0; l < layers; ++l) {
    LayerAdapters& la = a.layer(l);
    for (LoraPair* p : {&la.key, &la.value, &la.residual}) {
      p->a = r.mat();
      check_shape(r, p->a, rank, dim, "adapter A");
      p->b = r.mat();
      check_shape(r, p->b, dim, rank, "adapter B");
    }
    for (Mat* m : {&la.merged_key, &la.merged_value, &la.merged_residual}) {
      *m = r.mat();
      check_shape(r, *m, dim, dim, "merged adapter");
    }
  }
  r.expect_end();
  return a;
}

std::vector<std::byte> encode_classifier(const ClassifierBank& bank) {
  Writer w;
  w.u64(bank.heads.size());
  for (const Head& h : bank.heads) {
    w.i32(h.label_offset);
    w.mat(h.weight);
    w.reals(h.bias);
  }
  return w.take();
}

ClassifierBank decode_classifier(std::span<const std::byte> bytes, std::size_t dim) {
  Reader r(bytes, "checkpoint classifier");
  ClassifierBank bank;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Head h;
    h.label_offset = r.i32();
    h.weight = r.mat();
    h.bias = r.reals();
    check_shape(r, h.weight, dim, h.bias.size(), "head weight");
    if (h.bias.empty() || h.label_offset < 0) r.fail("invalid head");
    bank.heads.push_back(std::move(h));
  }
  r.expect_end();
  return bank;
}

std::vector<std::byte> encode_memory_payload(const FeatureMemory& m) {
  Writer w;
  w.u64(m.layer_count());
  w.u64(m.dim());
  w.u64(m.task_count());
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const LayerMemory& lm = m.layer(l);
    w.mat(lm.phi_k.vectors());
    for (const Basis& p : lm.psi) w.mat(p.vectors());
  }
  return w.take();
}

FeatureMemory decode_memory_payload(std::span<const std::byte> bytes, const std::string& what) {
  Reader r(bytes, what);
  const std::uint64_t layers = r.u64(), dim = r.u64(), tasks = r.u64();
  if (layers > 4096 || dim > 1 << 16 || tasks > 1 << 20) r.fail("implausible memory size");
  FeatureMemory m(layers, dim);
  try {
    for (std::size_t l = 0; l < layers; ++l) {
      LayerMemory& lm = m.layer(l);
      Mat phi_k = r.mat();
      check_shape(r, phi_k, phi_k.rows(), dim, "key basis");
      lm.phi_k = Basis(std::move(phi_k));
      Basis phi_v(dim);
      for (std::uint64_t t = 0; t < tasks; ++t) {
        Mat psi = r.mat();
        check_shape(r, psi, psi.rows(), dim, "residual basis");
        lm.psi.emplace_back(std::move(psi));
        phi_v = phi_v.concatenated(lm.psi.back());
      }
      lm.phi_v = std::move(phi_v);
    }
    m.validate();
  } catch (const ParameterError& e) {
    r.fail(e.what());
  } catch (const StateError& e) {
    r.fail(e.what());
  } catch (const DimensionError& e) {
    r.fail(e.what());
  }
  r.expect_end();
  return m;
}

std::vector<std::byte> encode_signatures(const SignatureSet& s) {
  Writer w;
  w.f64(s.lambda());
  w.u64(s.size());
  for (const Vec& v : s.all()) w.reals(v);
  return w.take();
}

SignatureSet decode_signatures(std::span<const std::byte> bytes) {
  Reader r(bytes, "checkpoint signatures");
  const double lambda = r.f64();
  if (!(lambda >= 0.0)) r.fail("negative lambda");
  SignatureSet s(lambda);
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) s.add(r.reals());
  r.expect_end();
  return s;
}

std::vector<std::byte> encode_accuracy(const AccMatrix& acc) {
  Writer w;
  w.u64(acc.tasks());
  for (std::size_t a = 0; a < acc.tasks(); ++a)
    for (std::size_t t = 0; t <= a; ++t) {
      const auto v = acc.get(a, t);
      w.u8(v ? 1 : 0);
      w.f64(v.value_or(0.0));
    }
  return w.take();
}

AccMatrix decode_accuracy(std::span<const std::byte> bytes) {
  Reader r(bytes, "checkpoint accuracy");
  const std::uint64_t n = r.u64();
  if (n > 1 << 16) r.fail("implausible task count");
  AccMatrix acc(n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t t = 0; t <= a; ++t) {
      const bool present = r.u8() != 0;
      const double v = r.f64();
      if (!present) continue;
      try {
        acc.set(a, t, v);
      } catch (const ParameterError& e) {
        r.fail(e.what());
      }
    }
  r.expect_end();
  return acc;
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const Checkpoint& c) {
  Writer cfg;
  cfg.str(to_json(c.config));
  Writer flags;
  flags.u8(c.model.use_residual ? 1 : 0);
  std::vector<std::byte> backbone = encode_backbone(c.model.backbone);
  backbone.insert(backbone.begin(), flags.bytes().begin(), flags.bytes().end());
  return seal(kCheckpointMagic, kCheckpointVersion,
              {{kConfig, cfg.take()},
               {kBackbone, std::move(backbone)},
               {kAdapters, encode_adapters(c.model.adapters)},
               {kClassifier, encode_classifier(c.model.classifier)},
               {kMemory, encode_memory_payload(c.memory)},
               {kSignatures, encode_signatures(c.signatures)},
               {kAccuracy, encode_accuracy(c.acc)}});
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  const std::string what = "checkpoint";
  const auto sections = unseal(bytes, kCheckpointMagic, kCheckpointVersion, what);
  Checkpoint c;
  {
    Reader r(find_section(sections, kConfig, what), "checkpoint config");
    const std::string text = r.str();
    r.expect_end();
    try {
      c.config = parse_run_config(text);
    } catch (const ParameterError& e) {
      r.fail(e.what());
    }
  }
  const auto backbone = find_section(sections, kBackbone, what);
  if (backbone.empty()) throw FormatError("checkpoint backbone: truncated data");
  c.model.use_residual = static_cast<std::uint8_t>(backbone[0]) != 0;
  c.model.backbone = decode_backbone(backbone.subspan(1));
  const std::size_t d = static_cast<std::size_t>(c.model.backbone.config.embed_dim);
  const std::size_t layers = static_cast<std::size_t>(c.model.backbone.config.layers);
  c.model.adapters = decode_adapters(find_section(sections, kAdapters, what));
  if (c.model.adapters.layer_count() != layers || c.model.adapters.dim() != d)
    throw FormatError("checkpoint: adapters do not match the encoder");
  c.model.classifier = decode_classifier(find_section(sections, kClassifier, what), d);
  c.memory = decode_memory_payload(find_section(sections, kMemory, what), "checkpoint memory");
  if (c.memory.layer_count() != layers || c.memory.dim() != d)
    throw FormatError("checkpoint: feature memory does not match the encoder");
  c.signatures = decode_signatures(find_section(sections, kSignatures, what));
  c.acc = decode_accuracy(find_section(sections, kAccuracy, what));
  return c;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<char> chars((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(chars.size());
  std::memcpy(out.data(), chars.data(), chars.size());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

std::vector<std::byte> encode_feature_memory(const FeatureMemory& memory) {
  return seal(kMemoryMagic, kMemoryVersion, {{kMemory, encode_memory_payload(memory)}});
}

FeatureMemory decode_feature_memory(std::span<const std::byte> bytes) {
  const std::string what = "feature memory blob";
  const auto sections = unseal(bytes, kMemoryMagic, kMemoryVersion, what);
  return decode_memory_payload(find_section(sections, kMemory, what), what);
}

}  // namespace duallora
