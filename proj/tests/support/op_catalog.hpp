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

// Every differentiable primitive, each with a random-input generator, so
// the unit suite and the acceptance suite run the same finite-difference
// sweep.

#include <cstdint>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "lab/autodiff.hpp"
#include "lab/rng.hpp"

namespace lab::testing {

struct OpCase {
  std::string name;
  std::vector<Tensor> inputs;
  LossBuilder build;
};

// Reduces an op output to a scalar with fixed random weights so that
// gradients are generic (a plain sum would hide softmax errors, say).
inline ad::Var weighted_sum(ad::Var out, std::uint64_t seed) {
  Rng r(seed);
  auto w = out.tape().constant(sample_gaussian(r, out.shape()));
  return ad::sum(ad::mul(out, w));
}

inline std::vector<OpCase> op_catalog(std::uint64_t seed) {
  using namespace lab::ad;
  Rng rng(seed);
  auto g = [&rng](Shape s, double sd = 1.0) { return sample_gaussian(rng, std::move(s), sd); };
  const std::uint64_t ws = seed * 7919 + 17;
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> in, auto fn) {
    cases.push_back({std::move(name), std::move(in),
                     [fn, ws](Tape&, const std::vector<Var>& x) { return weighted_sum(fn(x), ws); }});
  };
  using V = std::vector<Var>;
  add_case("add", {g({3, 4}), g({3, 4})}, [](const V& x) { return add(x[0], x[1]); });
  add_case("sub", {g({3, 4}), g({3, 4})}, [](const V& x) { return sub(x[0], x[1]); });
  add_case("mul", {g({3, 4}), g({3, 4})}, [](const V& x) { return mul(x[0], x[1]); });
  add_case("scale", {g({2, 5})}, [](const V& x) { return scale(x[0], -1.7); });
  add_case("add_scalar", {g({2, 5})}, [](const V& x) { return add_scalar(x[0], 0.3); });
  add_case("neg", {g({4})}, [](const V& x) { return neg(x[0]); });
  add_case("square", {g({3, 3})}, [](const V& x) { return square(x[0]); });
  add_case("gelu", {g({3, 5}, 2.0)}, [](const V& x) { return gelu(x[0]); });
  add_case("tanh", {g({3, 5})}, [](const V& x) { return ad::tanh(x[0]); });
  add_case("add_bcast_row", {g({2, 3, 4}), g({4})}, [](const V& x) { return add_bcast(x[0], x[1]); });
  add_case("add_bcast_batch", {g({2, 3, 4}), g({2, 4})},
           [](const V& x) { return add_bcast(x[0], x[1]); });
  add_case("mul_bcast_row", {g({3, 4}), g({4})}, [](const V& x) { return mul_bcast(x[0], x[1]); });
  add_case("mul_bcast_batch", {g({2, 3, 4}), g({2, 4})},
           [](const V& x) { return mul_bcast(x[0], x[1]); });
  add_case("matmul", {g({3, 4}), g({4, 2})}, [](const V& x) { return matmul(x[0], x[1]); });
  add_case("matmul_nt", {g({3, 4}), g({5, 4})}, [](const V& x) { return matmul_nt(x[0], x[1]); });
  add_case("bmm", {g({2, 3, 4}), g({2, 4, 2})}, [](const V& x) { return bmm(x[0], x[1]); });
  add_case("bmm_nt", {g({2, 3, 4}), g({2, 5, 4})}, [](const V& x) { return bmm_nt(x[0], x[1]); });
  add_case("transpose", {g({3, 4})}, [](const V& x) { return transpose(x[0]); });
  add_case("reshape", {g({3, 4})}, [](const V& x) { return reshape(x[0], {2, 6}); });
  add_case("swap_axes_12", {g({2, 3, 4, 2})}, [](const V& x) { return swap_axes_12(x[0]); });
  add_case("concat", {g({2, 3, 4}), g({2, 1, 4})}, [](const V& x) {
    std::vector<Var> parts{x[0], x[1]};
    return concat(parts, 1);
  });
  add_case("slice", {g({2, 5, 3})}, [](const V& x) { return slice(x[0], 1, 1, 3); });
  add_case("gather_rows", {g({5, 3})}, [](const V& x) {
    const std::vector<std::size_t> ids{4, 0, 4, 2};
    return gather_rows(x[0], ids);
  });
  add_case("sum", {g({3, 4})}, [](const V& x) { return ad::sum(x[0]); });
  add_case("mean", {g({3, 4})}, [](const V& x) { return mean(x[0]); });
  add_case("mean_axis", {g({2, 3, 4})}, [](const V& x) { return mean_axis(x[0], 1); });
  add_case("softmax", {g({2, 3, 5})}, [](const V& x) { return softmax(x[0]); });
  add_case("softmax_masked", {g({2, 3, 4})}, [](const V& x) {
    static const std::vector<std::vector<bool>> mask{
        {true, true, false, false}, {true, true, true, false}, {false, true, true, true}};
    return softmax(x[0], &mask);
  });
  add_case("log_softmax", {g({3, 6})}, [](const V& x) { return log_softmax(x[0]); });
  add_case("pick", {g({3, 4})}, [](const V& x) {
    const std::vector<std::size_t> idx{1, 3, 0};
    return pick(x[0], idx);
  });
  add_case("l2_normalize", {g({3, 4})}, [](const V& x) { return l2_normalize(x[0]); });
  add_case("mse", {g({3, 2}), g({3, 2})}, [](const V& x) { return mse(x[0], x[1]); });
  add_case("cross_entropy", {g({4, 5})}, [](const V& x) {
    const std::vector<std::size_t> t{0, 4, 2, 2};
    return cross_entropy(x[0], t);
  });
  return cases;
}

}  // namespace lab::testing
