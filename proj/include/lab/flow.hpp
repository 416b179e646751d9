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
#include <functional>
#include <span>
#include <vector>

#include "lab/autodiff.hpp"
#include "lab/rng.hpp"

// Flow-matching and discrete-head building blocks of the action expert.
//
// Sign convention: the predictor regresses the velocity (a - omega) and
// sampling integrates a <- a + dtau * f from tau = 0 (noise) to 1 (data).
namespace lab::policy {

struct FlowSample {
  Tensor a;      // action chunk
  Tensor omega;  // Gaussian noise, same shape
  double tau = 0.0;
  Tensor a_tau;
};

// tau * a + (1 - tau) * omega. Exact at tau in {0, 1}.
Tensor interpolate(const Tensor& a, const Tensor& omega, double tau);
FlowSample make_flow_sample(const Tensor& a, Rng& rng, double tau_scale = 0.999);

// tau = s * Beta(1.5, 1).
double sample_tau(Rng& rng, double tau_scale = 0.999);

// Regression target of the predictor: a - omega.
Tensor flow_target(const Tensor& a, const Tensor& omega);

// Mean squared error between prediction and flow_target(a, omega).
ad::Var flow_loss(ad::Var prediction, const Tensor& a, const Tensor& omega);

// Predictor seen as a black box: (a_tau, tau) -> velocity.
using VelocityField = std::function<Tensor(const Tensor& a_tau, double tau)>;

double flow_loss(const VelocityField& f, std::span<const FlowSample> batch);

// K equal Euler steps from a^0 = omega; returns a^1.
Tensor euler_integrate(const VelocityField& f, const Tensor& omega, std::size_t steps = 10);
Tensor euler_integrate(const VelocityField& f, Rng& rng, const Shape& shape,
                       std::size_t steps = 10);

// y = x / ||x||_2 * (1 + gamma) + beta. eps = 0 makes a zero x an error;
// eps > 0 clamps the norm from below instead.
Tensor ada_rms_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 0.0);
// x: [B, T, D]; gamma, beta: [B, D] or [D].
ad::Var ada_rms_norm(ad::Var x, ad::Var gamma, ad::Var beta, double eps = 0.0);

// Sinusoidal timestep features of even width.
Tensor sinusoidal_embedding(double tau, std::size_t width);

struct SectionLengths {
  std::size_t prefix = 0;    // visual tokens, prompts and the task token
  std::size_t discrete = 0;  // discrete-action query tokens
  std::size_t state = 0;
  std::size_t expert = 0;  // noisy action tokens

  std::size_t total() const { return prefix + discrete + state + expert; }
};

// mask[i][j] == true lets row i attend to column j.
//   prefix   -> prefix
//   discrete -> prefix, discrete
//   state    -> prefix, state
//   expert   -> prefix, state, expert
using AttentionMask = std::vector<std::vector<bool>>;
AttentionMask build_attention_mask(const SectionLengths& s);

// Discrete head: one softmax over `bins` values per action entry.
std::size_t action_to_bin(double value, std::size_t bins);
double bin_center(std::size_t bin, std::size_t bins);
// Row-wise softmax of [M x K] logits.
Tensor discrete_probs(const Tensor& logits);
// Mean -log softmax(logits)[target]; logits [M x K].
ad::Var discrete_loss(ad::Var logits, std::span<const std::size_t> targets);
double discrete_loss(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace lab::policy
