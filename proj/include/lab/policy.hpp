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
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/encoder.hpp"
#include "lab/flow.hpp"
#include "lab/image.hpp"
#include "lab/nn.hpp"
#include "lab/params.hpp"

// The full visuomotor policy: encoder tokens (plus any visual adapter)
// form the prefix of one joint transformer that also carries the task
// token, discrete-action queries, the state token and the noisy action
// chunk. Prefix and discrete rows use plain L2 norm; state and action rows
// use AdaRMSNorm conditioned on tau.
namespace lab::policy {

struct PolicyConfig {
  std::size_t horizon = 4;
  std::size_t action_dim = 2;
  std::size_t state_dim = 2;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t bins = 16;
  std::size_t task_vocab = 2;
  std::size_t flow_steps = 10;
  double tau_scale = 0.999;
  // Lower bound on the AdaRMSNorm denominator; 0 turns zero rows into errors.
  double norm_eps = 0.0;
  // Weight of the discrete NLL next to the flow loss.
  double discrete_weight = 0.0;

  void validate() const;
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

struct ModelConfig {
  vision::EncoderConfig encoder;
  PolicyConfig policy;

  std::size_t width() const { return encoder.d_model; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Expert linears of width D (candidates for full-model LoRA). The narrow
// action/state projections are left out.
std::vector<nn::LinearSpec> expert_linear_layers(const ModelConfig& cfg);

void init_model(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Frozen-encoder tokens [B, N, D].
ad::Var visual_tokens(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      std::span<const Image> images);
// Applies whichever token-space adapters the store holds (FTM, then prompts).
ad::Var adapt_tokens(ad::Tape& tape, const ParamStore& store, ad::Var tokens);
ad::Var visual_prefix(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      std::span<const Image> images);

struct ExpertInput {
  std::vector<std::size_t> tasks;  // [B]
  Tensor states;                   // [B x state_dim]
  Tensor a_tau;                    // [B x H x d_a]
  std::vector<double> tau;         // [B]
};

struct ExpertOutput {
  ad::Var velocity;         // [B x H x d_a]
  ad::Var discrete_logits;  // [B*H*d_a x bins]
};

ExpertOutput expert_forward(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                            ad::Var prefix, const ExpertInput& in);

// One supervised example: observation, task, state and the expert chunk.
struct Transition {
  Image image;
  std::size_t task = 0;
  Tensor state;    // [state_dim]
  Tensor actions;  // [H x d_a]
};

struct LossParts {
  ad::Var total;
  double flow = 0.0;
  double discrete = 0.0;
};

// Flow (+ weighted discrete) loss on a minibatch. `prefix` rows line up
// with `batch`; noise and tau come from `rng`.
LossParts policy_loss(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      ad::Var prefix, std::span<const Transition* const> batch, Rng& rng);

// Euler sampling of action chunks [B x H x d_a] from a fixed prefix.
Tensor sample_actions(const ParamStore& store, const ModelConfig& cfg, const Tensor& prefix,
                      std::span<const std::size_t> tasks, const Tensor& states, Rng& rng);

// Convenience: encode, adapt and sample in one go.
Tensor act(const ParamStore& store, const ModelConfig& cfg, std::span<const Image> images,
           std::span<const std::size_t> tasks, const Tensor& states, Rng& rng);

}  // namespace lab::policy
