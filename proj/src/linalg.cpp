// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

#include "duallora/errors.hpp"

namespace duallora {

namespace {

std::string shape(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::atomic<bool> g_flops_enabled{false};
std::atomic<std::uint64_t> g_flops{0};

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Mat: data length " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Mat::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

Mat Mat::row_vector(std::span<const double> values) {
  return Mat(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Mat Mat::row_block(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw DimensionError("row_block: range out of bounds");
  return Mat(end - begin, cols_,
             std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                                 data_.begin() + static_cast<std::ptrdiff_t>(end * cols_)));
}

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Mat& Mat::operator+=(const Mat& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw DimensionError("Mat +=: " + shape(*this) + " vs " + shape(other));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw DimensionError("Mat -=: " + shape(*this) + " vs " + shape(other));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) noexcept {
  for (double& x : data_) x *= s;
  return *this;
}

double max_abs(const Mat& m) noexcept {
  double best = 0.0;
  for (double x : m.values()) best = std::max(best, std::abs(x));
  return best;
}

double frobenius_norm(const Mat& m) noexcept { return norm2(m.values()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double norm2(std::span<const double> a) noexcept {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

Mat vstack(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw DimensionError("vstack: " + shape(a) + " vs " + shape(b));
  std::vector<double> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Mat(a.rows() + b.rows(), a.cols(), std::move(data));
}

namespace flops_counter {
void set_enabled(bool on) noexcept { g_flops_enabled.store(on, std::memory_order_relaxed); }
bool enabled() noexcept { return g_flops_enabled.load(std::memory_order_relaxed); }
void reset() noexcept { g_flops.store(0, std::memory_order_relaxed); }
std::uint64_t value() noexcept { return g_flops.load(std::memory_order_relaxed); }
}  // namespace flops_counter

FlopsScope::FlopsScope() : was_enabled_(flops_counter::enabled()), saved_(flops_counter::value()) {
  flops_counter::reset();
  flops_counter::set_enabled(true);
}

FlopsScope::~FlopsScope() {
  g_flops.store(saved_, std::memory_order_relaxed);
  flops_counter::set_enabled(was_enabled_);
}

std::uint64_t FlopsScope::count() const noexcept { return flops_counter::value(); }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: " + shape(a) + " x " + shape(b));
  const std::size_t m = a.rows(), n = a.cols(), p = b.cols();
  Mat c(m, p);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  if (g_flops_enabled.load(std::memory_order_relaxed))
    g_flops.fetch_add(2ULL * m * n * p, std::memory_order_relaxed);
  return c;
}

Vec vecmat(std::span<const double> v, const Mat& m) {
  if (v.size() != m.rows()) throw DimensionError("vecmat: length mismatch");
  Vec out(m.cols(), 0.0);
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const auto row = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += v[k] * row[j];
  }
  return out;
}

double orthonormality_error(const Mat& rows) {
  double err = 0.0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (std::size_t j = i; j < rows.rows(); ++j) {
      const double g = dot(rows.row(i), rows.row(j));
      err = std::max(err, std::abs(g - (i == j ? 1.0 : 0.0)));
    }
  }
  return err;
}

Basis::Basis(Mat vectors) : vectors_(std::move(vectors)) {
  const double err = orthonormality_error(vectors_);
  if (err > 1e-8) {
    throw ParameterError("Basis: rows are not orthonormal (error " + std::to_string(err) + ")");
  }
}

Basis Basis::concatenated(const Basis& other) const {
  if (other.dim() != dim()) throw DimensionError("Basis::concatenated: dimension mismatch");
  return Basis(vstack(vectors_, other.vectors_));
}

namespace {

// Orthonormalise `rows` in place by modified Gram-Schmidt (two passes). Rows
// whose residual collapses are replaced by the standard basis vector with the
// largest residual, so the result always has full row rank.
void reorthonormalize(Mat& rows) {
  const std::size_t k = rows.rows();
  const std::size_t d = rows.cols();
  for (std::size_t i = 0; i < k; ++i) {
    auto ri = rows.row(i);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        const auto rj = rows.row(j);
        const double c = dot(ri, rj);
        for (std::size_t t = 0; t < d; ++t) ri[t] -= c * rj[t];
      }
    }
    double nrm = norm2(ri);
    if (nrm < 1e-6) {
      // Complete with the coordinate axis least covered by rows [0, i).
      std::size_t best_axis = 0;
      double best_res = -1.0;
      for (std::size_t e = 0; e < d; ++e) {
        double covered = 0.0;
        for (std::size_t j = 0; j < i; ++j) covered += rows(j, e) * rows(j, e);
        if (1.0 - covered > best_res) {
          best_res = 1.0 - covered;
          best_axis = e;
        }
      }
      std::fill(ri.begin(), ri.end(), 0.0);
      ri[best_axis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          const auto rj = rows.row(j);
          const double c = dot(ri, rj);
          for (std::size_t t = 0; t < d; ++t) ri[t] -= c * rj[t];
        }
      }
      nrm = norm2(ri);
    }
    for (double& x : ri) x /= nrm;
  }
}

}  // namespace

SvdResult thin_svd(const Mat& m) {
  if (!m.all_finite()) throw ParameterError("thin_svd: input contains NaN or Inf");
  const bool wide = m.rows() < m.cols();
  const Mat a = wide ? m.transposed() : m;  // tall: p >= q
  const std::size_t p = a.rows();
  const std::size_t q = a.cols();

  // Column-major working copies: w holds columns of A·V, v the columns of V.
  std::vector<Vec> w(q, Vec(p));
  std::vector<Vec> v(q, Vec(q, 0.0));
  for (std::size_t j = 0; j < q; ++j) {
    for (std::size_t i = 0; i < p; ++i) w[j][i] = a(i, j);
    v[j][j] = 1.0;
  }

  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t t = 0; t < p; ++t) {
          alpha += w[i][t] * w[i][t];
          beta += w[j][t] * w[j][t];
          gamma += w[i][t] * w[j][t];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double wi = w[i][r];
          w[i][r] = c * wi - s * w[j][r];
          w[j][r] = s * wi + c * w[j][r];
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double vi = v[i][r];
          v[i][r] = c * vi - s * v[j][r];
          v[j][r] = s * vi + c * v[j][r];
        }
      }
    }
    if (!rotated) break;
  }

  Vec norms(q);
  for (std::size_t j = 0; j < q; ++j) norms[j] = norm2(w[j]);
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double sigma_max = q == 0 ? 0.0 : norms[order[0]];
  const double cutoff = 1e-12 * sigma_max;

  SvdResult out;
  out.sigma.resize(q);
  for (std::size_t k = 0; k < q; ++k) {
    const double s = norms[order[k]];
    out.sigma[k] = (s <= cutoff || s == 0.0) ? 0.0 : s;
  }

  // Normalised columns of A·V for nonzero singular values.
  Mat left(q, p);
  for (std::size_t k = 0; k < q; ++k) {
    if (out.sigma[k] == 0.0) continue;
    const auto& col = w[order[k]];
    for (std::size_t t = 0; t < p; ++t) left(k, t) = col[t] / norms[order[k]];
  }
  Mat right(q, q);
  for (std::size_t k = 0; k < q; ++k)
    for (std::size_t t = 0; t < q; ++t) right(k, t) = v[order[k]][t];

  if (!wide) {
    // A = (left)ᵀ Σ right, so U = leftᵀ and Vᵀ = right.
    out.u = left.transposed();
    out.vt = std::move(right);
  } else {
    // Mᵀ = leftᵀ Σ right  =>  M = rightᵀ Σ left.
    reorthonormalize(left);
    out.u = right.transposed();
    out.vt = std::move(left);
  }
  return out;
}

Basis select_basis(const SvdResult& svd, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw ParameterError("select_basis: epsilon must lie in (0, 1], got " + std::to_string(epsilon));
  const Vec& s = svd.sigma;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0.0) throw ParameterError("select_basis: negative singular value");
    if (i > 0 && s[i] > s[i - 1])
      throw ParameterError("select_basis: singular values must be non-increasing");
  }
  if (svd.vt.rows() != s.size()) throw DimensionError("select_basis: vt/sigma size mismatch");

  double total = 0.0;
  std::size_t nonzero = 0;
  for (double x : s) {
    total += x * x;
    if (x > 0.0) ++nonzero;
  }
  if (total == 0.0) return Basis(svd.vt.cols());

  std::size_t k = nonzero;
  double acc = 0.0;
  for (std::size_t i = 0; i < nonzero; ++i) {
    acc += s[i] * s[i];
    if (acc / total >= epsilon) {
      k = i + 1;
      break;
    }
  }
  return Basis(svd.vt.row_block(0, k));
}

Mat project_out(const Mat& m, const Basis& phi) {
  if (phi.dim() != m.rows())
    throw DimensionError("project_out: basis dim " + std::to_string(phi.dim()) + " vs " + shape(m));
  if (phi.empty()) return m;
  return m - matmul(phi.vectors().transposed(), matmul(phi.vectors(), m));
}

Mat project_into(const Mat& m, const Basis& psi) {
  if (psi.dim() != m.rows())
    throw DimensionError("project_into: basis dim " + std::to_string(psi.dim()) + " vs " + shape(m));
  if (psi.empty()) return Mat(m.rows(), m.cols());
  return matmul(psi.vectors().transposed(), matmul(psi.vectors(), m));
}

Mat project_rows_out(const Mat& m, const Basis& phi) {
  if (phi.dim() != m.cols())
    throw DimensionError("project_rows_out: basis dim " + std::to_string(phi.dim()) + " vs " +
                         shape(m));
  if (phi.empty()) return m;
  return m - matmul(matmul(m, phi.vectors().transposed()), phi.vectors());
}

Vec softmax(std::span<const double> logits) {
  Vec out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& x : out) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : out) x /= sum;
  return out;
}

Mat softmax_rows(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const Vec p = softmax(m.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

Mat softmax_jacobian(std::span<const double> p) {
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12)
    throw ParameterError("softmax_jacobian: probabilities sum to " + std::to_string(total));
  const std::size_t n = p.size();
  Mat h(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h(i, j) = (i == j ? p[i] * (1.0 - p[i]) : -p[i] * p[j]);
  return h;
}

}  // namespace duallora
