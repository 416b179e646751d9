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

#include "lab/optim.hpp"

#include <cmath>
#include <numbers>

#include "lab/error.hpp"

namespace lab::train {

void ScheduleConfig::validate() const {
  if (warmup_steps > decay_steps) {
    throw ContractError("warmup_steps " + std::to_string(warmup_steps) + " exceeds decay_steps " +
                        std::to_string(decay_steps));
  }
  if (!(min_lr > 0.0 && min_lr <= peak_lr)) throw ContractError("need 0 < min_lr <= peak_lr");
}

double lr_at(std::size_t step, const ScheduleConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.decay_steps) return cfg.min_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.decay_steps - cfg.warmup_steps);
  // Written as a drop from peak so step == warmup gives peak exactly.
  return cfg.peak_lr -
         (cfg.peak_lr - cfg.min_lr) * 0.5 * (1.0 - std::cos(std::numbers::pi * progress));
}

void adamw_step(ParamStore& params, const GradMap& grads, OptimizerState& state, double lr,
                const AdamWConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Param& p = params.get(name);
    if (!p.trainable) continue;
    if (g.shape() != p.value.shape()) throw ShapeError("gradient shape mismatch for " + name);
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(g.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(g.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value[i]);
    }
  }
}

double global_norm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(GradMap& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm) {
    const double f = max_norm / n;
    for (auto& [name, g] : grads)
      for (double& v : g.data()) v *= f;
  }
  return n;
}

}  // namespace lab::train
