// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and the handful of decompositions and projections
// the adapters need. Everything is double precision.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace duallora {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat identity(std::size_t n);
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat row_vector(std::span<const double> values);

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }

  [[nodiscard]] Mat transposed() const;
  /// Rows [begin, end).
  [[nodiscard]] Mat row_block(std::size_t begin, std::size_t end) const;
  [[nodiscard]] bool all_finite() const noexcept;

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s) noexcept;

  friend Mat operator+(Mat a, const Mat& b) { return a += b; }
  friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
  friend Mat operator*(Mat a, double s) { return a *= s; }
  friend Mat operator*(double s, Mat a) { return a *= s; }
  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

[[nodiscard]] double max_abs(const Mat& m) noexcept;
[[nodiscard]] double frobenius_norm(const Mat& m) noexcept;
[[nodiscard]] double dot(std::span<const double> a, std::span<const double> b);
[[nodiscard]] double norm2(std::span<const double> a) noexcept;

/// Stack a and b vertically; column counts must agree (either may have zero rows).
[[nodiscard]] Mat vstack(const Mat& a, const Mat& b);

// Global multiply-FLOP instrumentation. Every matmul adds 2*m*n*p while enabled.
namespace flops_counter {
void set_enabled(bool on) noexcept;
[[nodiscard]] bool enabled() noexcept;
void reset() noexcept;
[[nodiscard]] std::uint64_t value() noexcept;
}  // namespace flops_counter

/// Enables and zeroes the counter for its lifetime; restores the prior state on exit.
class FlopsScope {
 public:
  FlopsScope();
  ~FlopsScope();
  FlopsScope(const FlopsScope&) = delete;
  FlopsScope& operator=(const FlopsScope&) = delete;
  [[nodiscard]] std::uint64_t count() const noexcept;

 private:
  bool was_enabled_;
  std::uint64_t saved_;
};

/// Dense product. Throws DimensionError if a.cols != b.rows.
[[nodiscard]] Mat matmul(const Mat& a, const Mat& b);

/// Row vector times matrix, not counted by the instrumentation (used for taps).
[[nodiscard]] Vec vecmat(std::span<const double> v, const Mat& m);

struct SvdResult {
  Mat u;       // m x k
  Vec sigma;   // k, non-increasing
  Mat vt;      // k x d, orthonormal rows
};

/// Orthonormal row basis of a subspace of R^d. Zero rows is a legal, empty basis.
class Basis {
 public:
  Basis() = default;
  explicit Basis(std::size_t dim) : vectors_(0, dim) {}
  /// Throws ParameterError unless rows are orthonormal within 1e-8.
  explicit Basis(Mat vectors);

  [[nodiscard]] std::size_t rank() const noexcept { return vectors_.rows(); }
  [[nodiscard]] std::size_t dim() const noexcept { return vectors_.cols(); }
  [[nodiscard]] bool empty() const noexcept { return vectors_.rows() == 0; }
  [[nodiscard]] const Mat& vectors() const noexcept { return vectors_; }

  /// Basis spanning both; other must already be orthogonal to this.
  [[nodiscard]] Basis concatenated(const Basis& other) const;

  friend bool operator==(const Basis&, const Basis&) = default;

 private:
  Mat vectors_;
};

/// ‖B·Bᵀ − I‖_max.
[[nodiscard]] double orthonormality_error(const Mat& rows);

/// One-sided Jacobi thin SVD. Singular values below 1e-12·σ₁ are reported as zero.
[[nodiscard]] SvdResult thin_svd(const Mat& m);

/// Leading right-singular vectors carrying at least `epsilon` of the spectral energy.
[[nodiscard]] Basis select_basis(const SvdResult& svd, double epsilon);

/// m − ΦᵀΦ·m (removes the span of phi from the columns of m).
[[nodiscard]] Mat project_out(const Mat& m, const Basis& phi);
/// Ψᵀ·Ψ·m (keeps only the span of psi).
[[nodiscard]] Mat project_into(const Mat& m, const Basis& psi);
/// m·(I − ΦᵀΦ): the same projector applied from the right, i.e. to each row of m.
[[nodiscard]] Mat project_rows_out(const Mat& m, const Basis& phi);

[[nodiscard]] Mat softmax_rows(const Mat& m);
[[nodiscard]] Vec softmax(std::span<const double> logits);
/// H with H_ii = p_i(1 − p_i), H_ij = −p_i p_j. p must sum to 1 within 1e-12.
[[nodiscard]] Mat softmax_jacobian(std::span<const double> p);

}  // namespace duallora
