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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lab/error.hpp"

namespace lab {

namespace {

// Columns of a (p x k, column-major in `cols`) are rotated pairwise until
// mutually orthogonal; V accumulates the rotations.
Svd jacobi_tall(const Tensor& m) {
  const std::size_t p = m.dim(0), q = m.dim(1);
  std::vector<std::vector<double>> a(q, std::vector<double>(p));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) a[j][i] = m.at(i, j);
  std::vector<std::vector<double>> v(q, std::vector<double>(q, 0.0));
  for (std::size_t j = 0; j < q; ++j) v[j][j] = 1.0;

  constexpr double kTol = 1e-15;
  bool converged = false;
  int sweep = 0;
  for (; sweep < kSvdMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < p; ++r) {
          alpha += a[i][r] * a[i][r];
          beta += a[j][r] * a[j][r];
          gamma += a[i][r] * a[j][r];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double ai = a[i][r], aj = a[j][r];
          a[i][r] = c * ai - s * aj;
          a[j][r] = s * ai + c * aj;
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double vi = v[i][r], vj = v[j][r];
          v[i][r] = c * vi - s * vj;
          v[j][r] = s * vi + c * vj;
        }
      }
    }
  }
  if (!converged) {
    throw NumericError("svd: one-sided Jacobi did not converge after " + std::to_string(sweep) +
                       " sweeps");
  }

  std::vector<double> norms(q);
  for (std::size_t j = 0; j < q; ++j) {
    double s = 0.0;
    for (double x : a[j]) s += x * x;
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  Svd out{Tensor({p, q}), std::vector<double>(q), Tensor({q, q})};
  std::vector<bool> filled(q, false);
  for (std::size_t k = 0; k < q; ++k) {
    const std::size_t j = order[k];
    out.sigma[k] = norms[j];
    for (std::size_t r = 0; r < q; ++r) out.v.at(r, k) = v[j][r];
    if (norms[j] > 0.0) {
      for (std::size_t r = 0; r < p; ++r) out.u.at(r, k) = a[j][r] / norms[j];
      filled[k] = true;
    }
  }
  // Zero singular values leave U columns undetermined; complete them with
  // standard basis vectors orthogonalised against the filled columns.
  std::size_t basis = 0;
  for (std::size_t k = 0; k < q; ++k) {
    if (filled[k]) continue;
    for (; basis < p && !filled[k]; ++basis) {
      std::vector<double> cand(p, 0.0);
      cand[basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < q; ++c) {
          if (!filled[c]) continue;
          double dot = 0.0;
          for (std::size_t r = 0; r < p; ++r) dot += cand[r] * out.u.at(r, c);
          for (std::size_t r = 0; r < p; ++r) cand[r] -= dot * out.u.at(r, c);
        }
      }
      double n = 0.0;
      for (double x : cand) n += x * x;
      n = std::sqrt(n);
      if (n > 1e-6) {
        for (std::size_t r = 0; r < p; ++r) out.u.at(r, k) = cand[r] / n;
        filled[k] = true;
      }
    }
  }
  return out;
}

}  // namespace

Svd svd(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("svd needs a matrix, got " + to_string(m.shape()));
  m.check_finite("svd input");
  if (m.dim(0) >= m.dim(1)) return jacobi_tall(m);
  Svd t = jacobi_tall(m.transposed());
  return Svd{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

Tensor reconstruct(const Svd& s) { return truncate(s, s.sigma.size()); }

Tensor truncate(const Svd& s, std::size_t r) {
  const std::size_t p = s.u.dim(0), q = s.v.dim(0);
  r = std::min(r, s.sigma.size());
  Tensor out({p, q});
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t i = 0; i < p; ++i) {
      const double us = s.u.at(i, k) * s.sigma[k];
      for (std::size_t j = 0; j < q; ++j) out.at(i, j) += us * s.v.at(j, k);
    }
  return out;
}

std::size_t numerical_rank(const Tensor& m, double tol) {
  const Svd s = svd(m);
  return static_cast<std::size_t>(
      std::count_if(s.sigma.begin(), s.sigma.end(), [tol](double x) { return x > tol; }));
}

}  // namespace lab
