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

#include <cstdint>

#include "lab/tensor.hpp"

namespace lab {

// Counter-based generator: the n-th 64-bit word of stream `seed` is
// splitmix64_finalize(seed * K1 + n * K2), so the stream depends only on
// (seed, n) and integer arithmetic. Identical on every platform.
//
// Gaussians use Box-Muller (both outputs are consumed). Beta(a, b) uses
// Johnk's rejection method when a < 1 + b and the ratio of two
// Marsaglia-Tsang gammas otherwise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in (0, 1]; safe to take the log of.
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double gaussian();
  double gamma(double shape);
  double beta(double a, double b);

  // Child stream keyed by (seed, stream_id); does not advance this stream.
  Rng fork(std::uint64_t stream_id) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor sample_gaussian(Rng& rng, Shape shape, double stddev = 1.0);
double sample_beta(Rng& rng, double alpha = 1.5, double beta = 1.0);

}  // namespace lab
