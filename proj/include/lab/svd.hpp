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

#pragma once

#include <cstddef>
#include <vector>

#include "lab/tensor.hpp"

namespace lab {

// Thin singular value decomposition m = U diag(sigma) V^T with
// k = min(p, q): U is p x k, V is q x k, both with orthonormal columns.
struct Svd {
  Tensor u;
  std::vector<double> sigma;  // non-increasing, non-negative
  Tensor v;
};

inline constexpr int kSvdMaxSweeps = 100;

// One-sided (Hestenes) Jacobi. Throws NumericError after kSvdMaxSweeps
// sweeps without convergence.
Svd svd(const Tensor& m);

Tensor reconstruct(const Svd& s);
// Best rank-r approximation: keeps the r leading singular triplets.
Tensor truncate(const Svd& s, std::size_t r);
// Singular values above `tol`.
std::size_t numerical_rank(const Tensor& m, double tol = 1e-10);

}  // namespace lab
