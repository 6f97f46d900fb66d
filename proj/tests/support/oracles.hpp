// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. None of these
// call into the library's numeric kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "duallora/linalg.hpp"
#include "duallora/rng.hpp"

namespace duallora::testing {

inline Mat random_mat(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0,
                      std::uint32_t substream = 0) {
  Rng rng(seed, Stream::kTest, substream);
  Mat m(r, c);
  for (double& x : m.values()) x = scale * rng.normal();
  return m;
}

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Mat naive_transpose(const Mat& a) {
  Mat out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations, descending.
inline std::vector<double> jacobi_eigenvalues(Mat s) {
  const std::size_t n = s.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += s(i, j) * s(i, j);
        if (i != j) off += s(i, j) * s(i, j);
      }
    if (off <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (s(p, q) == 0.0) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p), skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k), sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = s(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline std::vector<double> naive_softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (e[i] = std::exp(z[i] - m));
  for (double& v : e) v /= sum;
  return e;
}

/// h = softmax(Q·Kᵀ/√d)·V evaluated with plain loops.
inline Mat straight_line_attention(const Mat& a, const Mat& wq, const Mat& wk, const Mat& wv) {
  const std::size_t n = a.rows(), d = a.cols();
  const Mat q = naive_matmul(a, wq), k = naive_matmul(a, wk), v = naive_matmul(a, wv);
  Mat h(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
      z[j] = s / std::sqrt(static_cast<double>(d));
    }
    const auto p = naive_softmax(z);
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += p[j] * v(j, c);
      h(i, c) = s;
    }
  }
  return h;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

/// Random orthonormal rows via Gram-Schmidt on Gaussian draws.
inline Mat random_orthonormal_rows(std::size_t r, std::size_t d, std::uint64_t seed) {
  Mat g = random_mat(r, d, seed);
  for (std::size_t i = 0; i < r; ++i) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += g(i, c) * g(j, c);
        for (std::size_t c = 0; c < d; ++c) g(i, c) -= s * g(j, c);
      }
    double nn = 0.0;
    for (std::size_t c = 0; c < d; ++c) nn += g(i, c) * g(i, c);
    nn = std::sqrt(nn);
    for (std::size_t c = 0; c < d; ++c) g(i, c) /= nn;
  }
  return g;
}

}  // namespace duallora::testing
