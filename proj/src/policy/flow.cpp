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

#include "lab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lab/error.hpp"

namespace lab::policy {

Tensor interpolate(const Tensor& a, const Tensor& omega, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ContractError("tau " + std::to_string(tau) + " outside [0, 1]");
  }
  if (a.shape() != omega.shape()) {
    throw ShapeError("interpolate: " + to_string(a.shape()) + " vs " + to_string(omega.shape()));
  }
  if (tau == 1.0) return a;
  if (tau == 0.0) return omega;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = tau * a[i] + (1.0 - tau) * omega[i];
  return out;
}

double sample_tau(Rng& rng, double tau_scale) { return tau_scale * sample_beta(rng, 1.5, 1.0); }

FlowSample make_flow_sample(const Tensor& a, Rng& rng, double tau_scale) {
  FlowSample s;
  s.a = a;
  s.omega = sample_gaussian(rng, a.shape(), 1.0);
  s.tau = sample_tau(rng, tau_scale);
  s.a_tau = interpolate(a, s.omega, s.tau);
  return s;
}

Tensor flow_target(const Tensor& a, const Tensor& omega) {
  if (a.shape() != omega.shape()) {
    throw ShapeError("flow_target: " + to_string(a.shape()) + " vs " + to_string(omega.shape()));
  }
  return a - omega;
}

ad::Var flow_loss(ad::Var prediction, const Tensor& a, const Tensor& omega) {
  Tensor target = flow_target(a, omega);
  if (prediction.shape() != target.shape()) {
    throw ShapeError("flow_loss: prediction " + to_string(prediction.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  return ad::mse(prediction, prediction.tape().constant(std::move(target)));
}

double flow_loss(const VelocityField& f, std::span<const FlowSample> batch) {
  if (batch.empty()) throw ContractError("flow_loss of an empty batch");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : batch) {
    const Tensor pred = f(s.a_tau, s.tau);
    const Tensor target = flow_target(s.a, s.omega);
    if (pred.shape() != target.shape()) throw ShapeError("flow_loss: prediction shape mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
    count += pred.size();
  }
  return total / static_cast<double>(count);
}

Tensor euler_integrate(const VelocityField& f, const Tensor& omega, std::size_t steps) {
  if (steps == 0) throw ContractError("euler_integrate needs at least one step");
  const double dt = 1.0 / static_cast<double>(steps);
  Tensor a = omega;
  for (std::size_t k = 0; k < steps; ++k) {
    const double tau = static_cast<double>(k) * dt;
    const Tensor v = f(a, tau);
    if (v.shape() != a.shape()) throw ShapeError("velocity field changed the action shape");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += dt * v[i];
    if (!a.all_finite()) {
      throw NumericError("non-finite action at Euler step " + std::to_string(k) + " (tau " +
                         std::to_string(tau) + ")");
    }
  }
  return a;
}

Tensor euler_integrate(const VelocityField& f, Rng& rng, const Shape& shape, std::size_t steps) {
  return euler_integrate(f, sample_gaussian(rng, shape, 1.0), steps);
}

Tensor ada_rms_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 1 || gamma.shape() != x.shape() || beta.shape() != x.shape()) {
    throw ShapeError("ada_rms_norm: x " + to_string(x.shape()) + ", gamma " +
                     to_string(gamma.shape()) + ", beta " + to_string(beta.shape()));
  }
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  double n = std::sqrt(s);
  if (n == 0.0 && eps == 0.0) throw ContractError("ada_rms_norm of a zero vector");
  n = std::max(n, eps);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / n * (1.0 + gamma[i]) + beta[i];
  return out;
}

ad::Var ada_rms_norm(ad::Var x, ad::Var gamma, ad::Var beta, double eps) {
  return ad::add_bcast(ad::mul_bcast(ad::l2_normalize(x, eps), ad::add_scalar(gamma, 1.0)), beta);
}

Tensor sinusoidal_embedding(double tau, std::size_t width) {
  if (width == 0 || width % 2) throw ContractError("sinusoidal width must be even and positive");
  const std::size_t half = width / 2;
  Tensor out({width});
  for (std::size_t i = 0; i < half; ++i) {
    // Periods from 1 down to ~1/1000 of the unit interval.
    const double freq = 2.0 * std::numbers::pi *
                        std::pow(1000.0, static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(freq * tau);
    out[half + i] = std::cos(freq * tau);
  }
  return out;
}

AttentionMask build_attention_mask(const SectionLengths& s) {
  const std::size_t n = s.total();
  const std::size_t d0 = s.prefix, s0 = d0 + s.discrete, e0 = s0 + s.state;
  enum Sec { kPrefix, kDiscrete, kState, kExpert };
  auto section = [&](std::size_t i) {
    if (i < d0) return kPrefix;
    if (i < s0) return kDiscrete;
    if (i < e0) return kState;
    return kExpert;
  };
  AttentionMask m(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    const Sec ri = section(i);
    for (std::size_t j = 0; j < n; ++j) {
      const Sec cj = section(j);
      bool ok = false;
      switch (ri) {
        case kPrefix:
          ok = cj == kPrefix;
          break;
        case kDiscrete:
          ok = cj == kPrefix || cj == kDiscrete;
          break;
        case kState:
          ok = cj == kPrefix || cj == kState;
          break;
        case kExpert:
          ok = cj == kPrefix || cj == kState || cj == kExpert;
          break;
      }
      m[i][j] = ok;
    }
  }
  return m;
}

std::size_t action_to_bin(double value, std::size_t bins) {
  if (bins == 0) throw ContractError("discrete head needs at least one bin");
  const double u = (std::clamp(value, -1.0, 1.0) + 1.0) / 2.0;
  return std::min(bins - 1, static_cast<std::size_t>(u * static_cast<double>(bins)));
}

double bin_center(std::size_t bin, std::size_t bins) {
  if (bin >= bins) throw ContractError("bin " + std::to_string(bin) + " out of range");
  return -1.0 + (2.0 * static_cast<double>(bin) + 1.0) / static_cast<double>(bins);
}

Tensor discrete_probs(const Tensor& logits) {
  ad::Tape tape;
  return ad::softmax(tape.constant(logits)).value();
}

ad::Var discrete_loss(ad::Var logits, std::span<const std::size_t> targets) {
  if (logits.shape().size() != 2) throw ShapeError("discrete_loss expects [M x K] logits");
  return ad::cross_entropy(logits, targets);
}

double discrete_loss(const Tensor& logits, std::span<const std::size_t> targets) {
  ad::Tape tape;
  return discrete_loss(tape.constant(logits), targets).value().item();
}

}  // namespace lab::policy
