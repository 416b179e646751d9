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
#include <map>
#include <string>

#include "lab/params.hpp"

namespace lab::train {

struct ScheduleConfig {
  std::size_t warmup_steps = 500;
  std::size_t decay_steps = 5000;
  double peak_lr = 5e-4;
  double min_lr = 5e-5;

  void validate() const;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

// Linear warmup 0 -> peak, cosine peak -> min until decay_steps, then min.
double lr_at(std::size_t step, const ScheduleConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-10;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct OptimizerState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t t = 0;
};

using GradMap = std::map<std::string, Tensor>;

// One decoupled-weight-decay Adam step over the trainable parameters that
// have a gradient. Frozen parameters are never touched.
void adamw_step(ParamStore& params, const GradMap& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg);

double global_norm(const GradMap& grads);
// Rescales all gradients so the global norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(GradMap& grads, double max_norm = 1.0);

}  // namespace lab::train
