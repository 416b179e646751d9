// Copyright 2026 The VLA Adapt Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lab/svd.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lab/rng.hpp"

namespace lab {
namespace {

// Eigenvalues of a symmetric PSD matrix by power iteration with deflation.
std::vector<double> power_eigenvalues(Tensor s) {
  const std::size_t n = s.dim(0);
  std::vector<double> out;
  Rng rng(99);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.gaussian();
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += s.at(i, j) * v[j];
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
      lambda = norm;
    }
    out.push_back(lambda);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) s.at(i, j) -= lambda * v[i] * v[j];
  }
  std::sort(out.rbegin(), out.rend());
  return out;
}

void expect_orthonormal_columns(const Tensor& m, double tol) {
  const Tensor g = matmul(m.transposed(), m);
  EXPECT_LT(max_abs_diff(g, Tensor::identity(m.dim(1))), tol);
}

TEST(SvdTest, DiagonalMatrix) {
  const Svd s = svd(Tensor::matrix({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}}));
  ASSERT_EQ(s.sigma.size(), 3u);
  EXPECT_NEAR(s.sigma[0], 3.0, 1e-15);
  EXPECT_NEAR(s.sigma[1], 2.0, 1e-15);
  EXPECT_NEAR(s.sigma[2], 1.0, 1e-15);
}

TEST(SvdTest, ZeroMatrix) {
  const Svd s = svd(Tensor({4, 3}));
  for (double x : s.sigma) EXPECT_EQ(x, 0.0);
  expect_orthonormal_columns(s.u, 1e-12);
  expect_orthonormal_columns(s.v, 1e-12);
}

TEST(SvdTest, RandomTallMatchesEigenOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor m = sample_gaussian(rng, {5, 3});
    const Svd s = svd(m);
    EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-10);
    EXPECT_TRUE(std::is_sorted(s.sigma.rbegin(), s.sigma.rend()));
    const auto eig = power_eigenvalues(matmul(m.transposed(), m));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.sigma[i] * s.sigma[i], eig[i], 1e-8);
    expect_orthonormal_columns(s.u, 1e-12);
    expect_orthonormal_columns(s.v, 1e-12);
  }
}

TEST(SvdTest, WideAndRankDeficient) {
  Rng rng(7);
  const Tensor a = sample_gaussian(rng, {3, 2});
  const Tensor b = sample_gaussian(rng, {2, 6});
  const Tensor m = matmul(a, b);  // 3 x 6, rank 2
  const Svd s = svd(m);
  EXPECT_EQ(s.u.dim(0), 3u);
  EXPECT_EQ(s.v.dim(0), 6u);
  EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-10);
  EXPECT_LT(s.sigma[2], 1e-10);
  EXPECT_EQ(numerical_rank(m), 2u);
  expect_orthonormal_columns(s.u, 1e-10);
}

TEST(SvdTest, ReconstructionProperty) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t p = 1 + rng.below(32), q = 1 + rng.below(32);
    const Tensor m = sample_gaussian(rng, {p, q});
    const Svd s = svd(m);
    EXPECT_LT(frobenius_norm(reconstruct(s) - m), 1e-10) << p << "x" << q;
    for (std::size_t i = 1; i < s.sigma.size(); ++i) EXPECT_GE(s.sigma[i - 1], s.sigma[i]);
    for (double x : s.sigma) EXPECT_GE(x, 0.0);
  }
}

}  // namespace
}  // namespace lab
