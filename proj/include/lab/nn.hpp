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
#include <string>
#include <vector>

#include "lab/autodiff.hpp"
#include "lab/params.hpp"
#include "lab/rng.hpp"

// Building blocks shared by the encoder and the action expert.
namespace lab::nn {

// A linear layer "<name>" owns "<name>/weight" [d_out x d_in] and
// "<name>/bias" [d_out]. When the store also holds a low-rank update
// "adapter/lora/<name>/A" [r x d_in] and ".../B" [d_out x r], the layer
// computes x (W + B A)^T + b.
struct LinearSpec {
  std::string name;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
};

std::string lora_prefix(const std::string& layer);

void init_linear(ParamStore& store, const LinearSpec& spec, Rng& rng, double stddev = 0.02,
                 bool trainable = true);

// x: [M, d_in] -> [M, d_out].
ad::Var linear(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x);
// Applies `linear` to the last axis of x of any rank.
ad::Var linear_nd(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x);

// W or W + B A for the named layer, as a tape value.
ad::Var effective_weight(ad::Tape& tape, const ParamStore& store, const std::string& name);

// y = gain * x / ||x||_2 over the last axis; "<name>/gain" has shape [D].
void init_l2_norm(ParamStore& store, const std::string& name, std::size_t width,
                  bool trainable = true);
ad::Var l2_norm(ad::Tape& tape, const ParamStore& store, const std::string& name, ad::Var x,
                double eps = 0.0);

// Adds a tensor whose shape equals the trailing axes of x, tiled over the
// leading axes.
ad::Var add_tiled(ad::Var x, ad::Var v);

// Multi-head scaled dot-product attention.
// q: [B, Tq, D], k/v: [B, Tk, D]; mask (optional) [Tq][Tk]. Returns [B, Tq, D].
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, std::size_t heads,
                  const std::vector<std::vector<bool>>* mask = nullptr);

}  // namespace lab::nn
