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

#include "lab/nn.hpp"

#include <algorithm>
#include <cmath>

#include "lab/error.hpp"

namespace lab::nn {

std::string lora_prefix(const std::string& layer) { return "adapter/lora/" + layer; }

void init_linear(ParamStore& store, const LinearSpec& spec, Rng& rng, double stddev,
                 bool trainable) {
  store.add(spec.name + "/weight", sample_gaussian(rng, {spec.d_out, spec.d_in}, stddev),
            trainable);
  store.add(spec.name + "/bias", Tensor({spec.d_out}), trainable);
}

ad::Var effective_weight(ad::Tape& tape, const ParamStore& store, const std::string& name) {
  ad::Var w = tape.param(store, name + "/weight");
  const std::string lp = lora_prefix(name);
  if (!store.contains(lp + "/A")) return w;
  ad::Var a = tape.param(store, lp + "/A");
  ad::Var b = tape.param(store, lp + "/B");
  return ad::add(w, ad::matmul(b, a));
}

ad::Var linear(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x) {
  ad::Var w = effective_weight(tape, store, name);
  ad::Var y = ad::matmul_nt(x, w);
  return ad::add_bcast(y, tape.param(store, name + "/bias"));
}

ad::Var linear_nd(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x) {
  const Shape in = x.shape();
  if (in.size() == 2) return linear(tape, store, name, x);
  const std::size_t d_in = in.back();
  ad::Var flat = ad::reshape(x, {numel(in) / d_in, d_in});
  ad::Var y = linear(tape, store, name, flat);
  Shape out = in;
  out.back() = y.shape()[1];
  return ad::reshape(y, out);
}

void init_l2_norm(ParamStore& store, const std::string& name, std::size_t width, bool trainable) {
  // Unit-norm rows have entries of size ~1/sqrt(D); a gain of sqrt(D)
  // restores unit scale per entry.
  store.add(name + "/gain", Tensor({width}, std::sqrt(static_cast<double>(width))), trainable);
}

ad::Var l2_norm(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x,
                double eps) {
  return ad::mul_bcast(ad::l2_normalize(x, eps), tape.param(store, name + "/gain"));
}

ad::Var add_tiled(ad::Var x, ad::Var v) {
  const Shape xs = x.shape();
  const Shape& vs = v.shape();
  if (vs.size() > xs.size() || !std::equal(vs.rbegin(), vs.rend(), xs.rbegin())) {
    throw ShapeError("add_tiled: " + to_string(vs) + " is not a suffix of " + to_string(xs));
  }
  const std::size_t width = numel(vs);
  ad::Var flat = ad::reshape(x, {numel(xs) / width, width});
  ad::Var vf = ad::reshape(v, {width});
  return ad::reshape(ad::add_bcast(flat, vf), xs);
}

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, std::size_t heads,
                  const std::vector<std::vector<bool>>* mask) {
  const Shape qs = q.shape(), ks = k.shape();
  if (qs.size() != 3 || ks.size() != 3 || qs[0] != ks[0] || qs[2] != ks[2] || v.shape() != ks) {
    throw ShapeError("attention: bad shapes " + to_string(qs) + ", " + to_string(ks));
  }
  const std::size_t b = qs[0], tq = qs[1], tk = ks[1], d = qs[2];
  if (heads == 0 || d % heads) throw ShapeError("attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  auto split = [&](ad::Var x, std::size_t t) {
    return ad::reshape(ad::swap_axes_12(ad::reshape(x, {b, t, heads, dh})), {b * heads, t, dh});
  };
  ad::Var qh = split(q, tq), kh = split(k, tk), vh = split(v, tk);
  ad::Var scores = ad::scale(ad::bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
  ad::Var probs = ad::softmax(scores, mask);
  ad::Var out = ad::bmm(probs, vh);
  return ad::reshape(ad::swap_axes_12(ad::reshape(out, {b, heads, tq, dh})), {b, tq, d});
}

}  // namespace lab::nn
