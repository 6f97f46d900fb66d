// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "duallora/errors.hpp"
#include "duallora/linalg.hpp"

using namespace duallora;
using duallora::testing::random_mat;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Mat m = random_mat(3, 4, 1);
  EXPECT_EQ(matmul(Mat::identity(3), m), m);
}

TEST(Matmul, HandArithmetic) {
  const Mat a = Mat::from_rows({{1, 2}});
  const Mat b = Mat::from_rows({{3}, {4}});
  EXPECT_EQ(matmul(a, b), Mat::from_rows({{11}}));
}

TEST(Matmul, MatchesTripleLoopExactly) {
  const Mat a = random_mat(4, 5, 2), b = random_mat(5, 3, 3);
  // Same summation order as the i-k-j kernel starting from zero, so the results agree bit for bit.
  EXPECT_EQ(matmul(a, b), duallora::testing::naive_matmul(a, b));
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW((void)matmul(Mat(2, 3), Mat(2, 3)), DimensionError);
}

TEST(Matmul, CounterAddsTwoMnp) {
  FlopsScope scope;
  (void)matmul(Mat(4, 5), Mat(5, 3));
  EXPECT_EQ(scope.count(), 2u * 4 * 5 * 3);
  (void)vecmat(Vec(4, 1.0), Mat(4, 2));
  EXPECT_EQ(scope.count(), 2u * 4 * 5 * 3);
}

TEST(Mat, ConstructorRejectsWrongDataLength) {
  EXPECT_THROW(Mat(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(ThinSvd, IdentityHasUnitSingularValues) {
  const SvdResult s = thin_svd(Mat::identity(4));
  ASSERT_EQ(s.sigma.size(), 4u);
  for (double v : s.sigma) EXPECT_NEAR(v, 1.0, 1e-14);
}

TEST(ThinSvd, RankOneOuterProduct) {
  // u with norm 2, v with norm 3.
  Mat m(3, 4);
  const double u[3] = {2.0, 0.0, 0.0};
  const double v[4] = {0.0, 3.0 / std::sqrt(2.0), 3.0 / std::sqrt(2.0), 0.0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = u[i] * v[j];
  const SvdResult s = thin_svd(m);
  EXPECT_NEAR(s.sigma[0], 6.0, 1e-12);
  for (std::size_t i = 1; i < s.sigma.size(); ++i) EXPECT_LE(s.sigma[i], 1e-12);
}

TEST(ThinSvd, ZeroMatrixGivesZeroSigma) {
  const SvdResult s = thin_svd(Mat(3, 5));
  for (double v : s.sigma) EXPECT_EQ(v, 0.0);
}

TEST(ThinSvd, MatchesJacobiEigenvaluesOfGram) {
  const Mat m = random_mat(5, 8, 4);
  const SvdResult s = thin_svd(m);
  const auto ev = duallora::testing::jacobi_eigenvalues(
      duallora::testing::naive_matmul(m, duallora::testing::naive_transpose(m)));
  ASSERT_EQ(s.sigma.size(), ev.size());
  for (std::size_t i = 0; i < ev.size(); ++i)
    EXPECT_LE(std::abs(s.sigma[i] * s.sigma[i] - ev[i]), 1e-9 * ev[0]);
}

TEST(ThinSvd, ReconstructionAndOrthonormalityOnRandomShapes) {
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial), Stream::kTest, 7);
    const std::size_t r = 1 + rng.below(32), c = 1 + rng.below(64);
    const Mat m = random_mat(r, c, 1000 + trial);
    const SvdResult s = thin_svd(m);
    for (std::size_t i = 1; i < s.sigma.size(); ++i) ASSERT_LE(s.sigma[i], s.sigma[i - 1]);
    EXPECT_LE(orthonormality_error(s.vt), 1e-8);
    Mat us = s.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
      for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= s.sigma[j];
    EXPECT_LE(duallora::testing::max_abs_diff(matmul(us, s.vt), m), 1e-9 * max_abs(m))
        << r << "x" << c;
  }
}

TEST(SelectBasis, AllEnergyInFirstComponent) {
  SvdResult s{Mat(), {1.0, 0.0, 0.0}, Mat::identity(3)};
  EXPECT_EQ(select_basis(s, 0.95).rank(), 1u);
}

TEST(SelectBasis, RejectsUnorderedSigma) {
  SvdResult s{Mat(), {3.0, 4.0}, Mat::identity(2)};
  EXPECT_THROW((void)select_basis(s, 0.95), ParameterError);
}

TEST(SelectBasis, CumulativeEnergyCriterion) {
  // Energies 4/6, 5/6, 6/6: 0.95 is only reached by the third component.
  SvdResult s{Mat(), {2.0, 1.0, 1.0}, Mat::identity(3)};
  EXPECT_EQ(select_basis(s, 0.95).rank(), 3u);
  EXPECT_EQ(select_basis(s, 0.8).rank(), 2u);
  EXPECT_EQ(select_basis(s, 0.5).rank(), 1u);
}

TEST(SelectBasis, EpsilonOutsideUnitIntervalThrows) {
  SvdResult s{Mat(), {1.0}, Mat::identity(1)};
  EXPECT_THROW((void)select_basis(s, 0.0), ParameterError);
  EXPECT_THROW((void)select_basis(s, 1.5), ParameterError);
}

TEST(SelectBasis, AllZeroSigmaGivesEmptyBasis) {
  SvdResult s{Mat(), {0.0, 0.0}, Mat::identity(2)};
  EXPECT_TRUE(select_basis(s, 0.95).empty());
}

TEST(SelectBasis, MonotoneInEpsilon) {
  const SvdResult s = thin_svd(random_mat(10, 16, 5));
  std::size_t prev = 0;
  for (double eps = 0.05; eps <= 1.0; eps += 0.05) {
    const std::size_t k = select_basis(s, eps).rank();
    EXPECT_GE(k, prev);
    prev = k;
  }
}

TEST(ProjectOut, EmptyBasisIsIdentity) {
  const Mat m = random_mat(4, 4, 6);
  EXPECT_EQ(project_out(m, Basis(4)), m);
}

TEST(ProjectOut, FullBasisAnnihilates) {
  const Mat m = random_mat(4, 4, 7);
  EXPECT_LE(max_abs(project_out(m, Basis(Mat::identity(4)))), 1e-15);
}

TEST(ProjectOut, HandExample) {
  const Basis phi(Mat::from_rows({{1, 0}}));
  EXPECT_EQ(project_out(Mat::from_rows({{1, 2}, {3, 4}}), phi), Mat::from_rows({{0, 0}, {3, 4}}));
}

TEST(ProjectOut, ResultIsOrthogonalToBasisAndIdempotent) {
  const Basis phi(duallora::testing::random_orthonormal_rows(3, 8, 8));
  const Mat m = random_mat(8, 8, 9);
  const Mat once = project_out(m, phi);
  EXPECT_LE(max_abs(matmul(phi.vectors(), once)), 1e-10 * max_abs(m));
  EXPECT_LE(duallora::testing::max_abs_diff(project_out(once, phi), once), 1e-10);
}

TEST(ProjectOut, DimensionMismatchThrows) {
  EXPECT_THROW((void)project_out(Mat(3, 3), Basis(Mat::identity(4))), DimensionError);
}

TEST(ProjectInto, EmptyBasisGivesZero) {
  EXPECT_EQ(project_into(random_mat(3, 3, 10), Basis(3)), Mat(3, 3));
}

TEST(ProjectInto, FullBasisIsIdentity) {
  const Mat m = random_mat(3, 3, 11);
  EXPECT_LE(duallora::testing::max_abs_diff(project_into(m, Basis(Mat::identity(3))), m), 1e-15);
}

TEST(ProjectInto, HandExample) {
  const Basis psi(Mat::from_rows({{0, 1}}));
  EXPECT_EQ(project_into(Mat::from_rows({{1, 2}, {3, 4}}), psi), Mat::from_rows({{0, 0}, {3, 4}}));
}

TEST(ProjectInto, ComplementsProjectOut) {
  const Basis phi(duallora::testing::random_orthonormal_rows(2, 6, 12));
  const Mat m = random_mat(6, 5, 13);
  const Mat in = project_into(m, phi);
  EXPECT_LE(duallora::testing::max_abs_diff(project_out(m, phi) + in, m), 1e-10);
  EXPECT_LE(max_abs(project_out(in, phi)), 1e-10 * max_abs(m));
}

TEST(ProjectRowsOut, RowsBecomeOrthogonalToBasis) {
  const Basis phi(duallora::testing::random_orthonormal_rows(3, 8, 14));
  const Mat m = random_mat(2, 8, 15);
  EXPECT_LE(max_abs(matmul(project_rows_out(m, phi), phi.vectors().transposed())), 1e-12);
}

TEST(Basis, RejectsNonOrthonormalRows) {
  EXPECT_THROW(Basis(Mat::from_rows({{1, 0}, {1, 1}})), ParameterError);
}

TEST(Softmax, UniformLogits) {
  const Vec p = softmax(Vec{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, RowsSumToOneForLargeLogits) {
  const Mat p = softmax_rows(Mat::from_rows({{1000, 1001, 999}, {-5, 0, 5}}));
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SoftmaxJacobian, SaturatedDistributionIsZero) {
  EXPECT_EQ(softmax_jacobian(Vec{1.0, 0.0}), Mat(2, 2));
}

TEST(SoftmaxJacobian, RowsSumToZero) {
  const Mat h = softmax_jacobian(softmax(Vec{0.3, -1.2, 2.0, 0.1}));
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double s = 0.0;
    for (double v : h.row(i)) s += v;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(SoftmaxJacobian, MatchesCentralDifferences) {
  const Vec z{0.7, -0.4, 1.3};
  const Mat h = softmax_jacobian(softmax(z));
  const double step = 1e-5;
  for (std::size_t j = 0; j < z.size(); ++j) {
    Vec zp = z, zm = z;
    zp[j] += step;
    zm[j] -= step;
    const auto pp = duallora::testing::naive_softmax(zp), pm = duallora::testing::naive_softmax(zm);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double fd = (pp[i] - pm[i]) / (2 * step);
      EXPECT_LE(std::abs(h(i, j) - fd), 1e-6 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST(SoftmaxJacobian, RejectsNonDistribution) {
  EXPECT_THROW((void)softmax_jacobian(Vec{0.5, 0.6}), ParameterError);
}
