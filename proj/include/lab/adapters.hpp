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

#include "lab/autodiff.hpp"
#include "lab/encoder.hpp"
#include "lab/nn.hpp"
#include "lab/params.hpp"
#include "lab/rng.hpp"

// Visual adaptation mechanisms. Every adapter lives under "adapter/" in
// the model's ParamStore so one freeze filter separates it from the
// backbone:
//
//   adapter/ftm/gamma, adapter/ftm/beta      [D]        token modulation
//   adapter/lora/<layer>/A, .../B            [r x in], [out x r]
//   adapter/prompt/tokens                    [n x D]    prefix prompts
namespace lab::adapters {

enum class AdapterType { kNone, kFtm, kFla, kPromptPrefix, kFullLora };

struct AdapterKind {
  AdapterType type = AdapterType::kNone;
  std::size_t rank = 0;          // kFla, kFullLora
  std::size_t prompt_count = 0;  // kPromptPrefix

  static AdapterKind none() { return {}; }
  static AdapterKind ftm() { return {AdapterType::kFtm, 0, 0}; }
  static AdapterKind fla(std::size_t r) { return {AdapterType::kFla, r, 0}; }
  static AdapterKind prompt(std::size_t n) { return {AdapterType::kPromptPrefix, 0, n}; }
  static AdapterKind full_lora(std::size_t r) { return {AdapterType::kFullLora, r, 0}; }

  // "none", "ftm", "fla:16", "prompt:2", "full-lora:16".
  std::string to_string() const;
  static AdapterKind parse(const std::string& text);

  friend bool operator==(const AdapterKind&, const AdapterKind&) = default;
};

inline const std::string kAdapterPrefix = "adapter/";
inline bool is_adapter_param(const std::string& name) { return starts_with(name, kAdapterPrefix); }

struct FtmParams {
  Tensor gamma;  // [D]
  Tensor beta;   // [D]

  static FtmParams identity(std::size_t width) { return {Tensor({width}), Tensor({width})}; }
};

struct LoraUpdate {
  std::string target_layer;
  Tensor a;  // [r x d_in]
  Tensor b;  // [d_out x r]

  std::size_t rank() const { return a.dim(0); }
  Tensor delta() const;  // B A
};

struct PromptParams {
  Tensor prefix_tokens;  // [n x D]; empty when n == 0
  std::size_t count() const { return prefix_tokens.empty() ? 0 : prefix_tokens.dim(0); }
};

// out[i, d] = (1 + gamma[d]) * tokens[i, d] + beta[d].
Tensor apply_ftm(const Tensor& tokens, const FtmParams& p);
// Tape version; tokens has shape [..., D].
ad::Var apply_ftm(ad::Var tokens, ad::Var gamma, ad::Var beta);

// Prepends the prompt rows to a [N x D] token matrix.
Tensor apply_prompt(const Tensor& tokens, const PromptParams& p);
// Tape version for a batch [B, N, D] and prompt [n, D].
ad::Var apply_prompt(ad::Var tokens, ad::Var prompt);

// W + B A.
Tensor effective_weight(const LoraUpdate& u, const Tensor& w);

// Wraps every listed layer with a rank-r update (A ~ N(0, 0.02), B = 0).
// Throws ContractError naming the first layer with r > min(d_in, d_out)/2.
std::vector<LoraUpdate> attach_lora(ParamStore& store, std::span<const nn::LinearSpec> layers,
                                    std::size_t rank, Rng& rng);
std::vector<LoraUpdate> attach_fla(ParamStore& store, const vision::EncoderConfig& cfg,
                                   std::size_t rank, Rng& rng);

void attach_ftm(ParamStore& store, std::size_t width);
void attach_prompt(ParamStore& store, std::size_t count, std::size_t width, Rng& rng);

// Attaches `kind`; `expert_layers` are additionally wrapped for kFullLora.
void attach_adapter(ParamStore& store, const AdapterKind& kind, const vision::EncoderConfig& cfg,
                    std::span<const nn::LinearSpec> expert_layers, Rng& rng);

// Freeze filter: afterwards exactly the adapter/ parameters are trainable.
void freeze_backbone(ParamStore& store);

// Reads the current adapter values back out of a store.
FtmParams read_ftm(const ParamStore& store);
std::vector<LoraUpdate> read_lora(const ParamStore& store);

// Closed-form trainable parameter count: FTM 2D, FLA sum r(d_in + d_out),
// Prompt n D, FullLora FLA plus the expert layers.
std::size_t count_trainable(const AdapterKind& kind, const vision::EncoderConfig& cfg,
                            std::span<const nn::LinearSpec> expert_layers = {});

}  // namespace lab::adapters
