// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/flops.hpp"

#include <array>
#include <numeric>
#include <string>

#include "duallora/errors.hpp"

namespace duallora::flops {

namespace {

constexpr std::array<std::string_view, 7> kSchemeNames = {
    "vit", "lora", "duallora", "l2p", "dualprompt", "coda", "inflora"};

double require(const std::optional<double>& v, const char* field, Scheme s) {
  if (!v) {
    throw ParameterError(std::string("scheme ") + std::string(scheme_name(s)) + " needs prompt parameter " +
                         field);
  }
  return *v;
}

FlopsProfile finish(Scheme s, Phase phase, std::vector<Term> terms, bool lower_bound,
                    std::string note = {}) {
  FlopsProfile out;
  out.scheme = s;
  out.phase = phase;
  out.lower_bound = lower_bound;
  out.flops = std::accumulate(terms.begin(), terms.end(), 0.0,
                              [](double acc, const Term& t) { return acc + t.flops; });
  out.terms = std::move(terms);
  out.note = std::move(note);
  return out;
}

}  // namespace

std::string_view scheme_name(Scheme s) noexcept { return kSchemeNames[static_cast<std::size_t>(s)]; }

std::string_view phase_name(Phase p) noexcept { return p == Phase::kTrain ? "train" : "infer"; }

Scheme parse_scheme(std::string_view name) {
  for (std::size_t i = 0; i < kSchemeNames.size(); ++i)
    if (kSchemeNames[i] == name) return static_cast<Scheme>(i);
  throw ParameterError("unknown scheme '" + std::string(name) + "'");
}

const std::vector<Scheme>& all_schemes() noexcept {
  static const std::vector<Scheme> schemes = {Scheme::kVit,  Scheme::kLora,       Scheme::kDualLora,
                                              Scheme::kL2p,  Scheme::kDualPrompt, Scheme::kCoda,
                                              Scheme::kInfLora};
  return schemes;
}

void ArchParams::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v > 0.0)) throw ParameterError(std::string("ArchParams: ") + name + " must be positive");
  };
  check(layers, "L");
  check(batch, "b");
  check(seq_len, "n");
  check(dim, "d");
  check(rank, "r");
  check(samples, "m");
  const std::pair<const std::optional<double>*, const char*> optional_fields[] = {
      {&pool, "p"}, {&prompt_len, "e"}, {&e_prompt_len, "e_E"},
      {&g_prompt_len, "e_G"}, {&top_k, "k"}, {&prompt_layers, "l"}};
  for (const auto& [v, name] : optional_fields)
    if (*v) check(**v, name);
}

ArchParams reference_params(Scheme s) {
  ArchParams p;
  switch (s) {
    case Scheme::kL2p:
      p.pool = 30;
      p.prompt_len = 20;
      p.top_k = 5;
      p.prompt_layers = 1;
      break;
    case Scheme::kDualPrompt:
      p.pool = 10;
      p.e_prompt_len = 20;
      p.g_prompt_len = 6;
      p.top_k = 5;
      break;
    case Scheme::kCoda:
      p.pool = 100;
      p.prompt_len = 8;
      p.top_k = 5;
      p.prompt_layers = 5;
      break;
    default:
      break;
  }
  return p;
}

double vit_forward(double layers, double batch, double n, double d) noexcept {
  return layers * (24.0 * batch * n * d * d + 4.0 * batch * n * n * d);
}

double vit_backward(double layers, double batch, double n, double d) noexcept {
  return 2.0 * vit_forward(layers, batch, n, d);
}

double svd_flops(double d, double m) noexcept { return 2.0 * d * m * m + 11.0 * m * m * m; }

double adapter_flops(AdapterKind kind, double layers, double batch, double n, double d, double r,
                     bool strict_paper) noexcept {
  const double streams = kind == AdapterKind::kLora ? 2.0 : 3.0;
  const double b = strict_paper ? 1.0 : batch;
  return layers * streams * 2.0 * 2.0 * b * n * d * r;
}

FlopsProfile scheme_flops(Scheme s, Phase phase, const ArchParams& p, bool strict_paper) {
  p.validate();
  const double L = p.layers, b = p.batch, n = p.seq_len, d = p.dim, r = p.rank;
  const bool train = phase == Phase::kTrain;
  const double fwd = vit_forward(L, b, n, d);
  const Term forward{"encoder forward", fwd};
  const Term backward{"encoder backward", vit_backward(L, b, n, d)};

  switch (s) {
    case Scheme::kVit:
      return train ? finish(s, phase, {forward, backward}, false) : finish(s, phase, {forward}, false);
    case Scheme::kLora:
    case Scheme::kDualLora: {
      const AdapterKind kind = s == Scheme::kLora ? AdapterKind::kLora : AdapterKind::kDualLora;
      const Term adapters{"adapter forward", adapter_flops(kind, L, b, n, d, r, strict_paper)};
      if (!train) return finish(s, phase, {forward, adapters}, false);
      std::vector<Term> terms = {forward, backward, adapters};
      if (s == Scheme::kDualLora) terms.push_back({"feature SVD", L * svd_flops(d, p.samples)});
      return finish(s, phase, std::move(terms), false);
    }
    case Scheme::kInfLora: {
      const Term adapters{"adapter forward", adapter_flops(AdapterKind::kLora, L, b, n, d, r, strict_paper)};
      if (!train) return finish(s, phase, {forward, adapters}, false);
      return finish(s, phase,
                    {{"gradient-collection forward", fwd}, forward, backward, adapters,
                     {"gradient SVD", 13.0 * L * d * d * d}},
                    false);
    }
    case Scheme::kL2p: {
      const double k = require(p.top_k, "k", s), e = require(p.prompt_len, "e", s);
      const double prompted = vit_forward(L, b, n + k * e, d);
      const Term query{"query forward", fwd};
      if (!train) return finish(s, phase, {{"prompted forward", prompted}, query}, true);
      return finish(s, phase, {{"prompted forward and backward", 3.0 * prompted}, query}, true);
    }
    case Scheme::kDualPrompt: {
      const double k = require(p.top_k, "k", s);
      const double e_e = require(p.e_prompt_len, "e_E", s), e_g = require(p.g_prompt_len, "e_G", s);
      const double spread = n + 2.0 * e_g / L + 3.0 * k * e_e / L;
      const Term query{"query forward", fwd};
      const std::string note =
          "training and inference prompt terms use different effective lengths, so training "
          "is not 3x the inference prompt cost";
      if (train) {
        return finish(s, phase,
                      {{"prompted projections", 72.0 * L * b * spread * d * d},
                       {"prompted attention", 12.0 * L * b * spread * spread * d},
                       query},
                      true, note);
      }
      return finish(s, phase,
                    {{"prompted projections", L * 24.0 * b * (n + e_g + k * e_e) * d * d},
                     {"prompted attention", 4.0 * L * b * spread * spread * d},
                     query},
                    true, note);
    }
    case Scheme::kCoda: {
      const double k = require(p.top_k, "k", s), e = require(p.prompt_len, "e", s);
      const double l = require(p.prompt_layers, "l", s);
      if (l > L) throw ParameterError("scheme coda: prompt layers exceed encoder layers");
      const double passes = train ? 3.0 : 1.0;
      const double early = vit_forward(l, b, n + (1.0 + l) / 2.0 * k * e, d);
      const double late = vit_forward(L - l, b, n + l * k * e, d);
      return finish(s, phase,
                    {{"prompted early layers", passes * early},
                     {"prompted late layers", passes * late},
                     {"query forward", fwd}},
                    true);
    }
  }
  throw ParameterError("scheme_flops: unhandled scheme");
}

}  // namespace duallora::flops
