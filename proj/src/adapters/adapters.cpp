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

#include "lab/adapters.hpp"

#include <algorithm>

#include "lab/error.hpp"

namespace lab::adapters {

std::string AdapterKind::to_string() const {
  switch (type) {
    case AdapterType::kNone:
      return "none";
    case AdapterType::kFtm:
      return "ftm";
    case AdapterType::kFla:
      return "fla:" + std::to_string(rank);
    case AdapterType::kPromptPrefix:
      return "prompt:" + std::to_string(prompt_count);
    case AdapterType::kFullLora:
      return "full-lora:" + std::to_string(rank);
  }
  return "none";
}

AdapterKind AdapterKind::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  std::size_t arg = 0;
  const bool has_arg = colon != std::string::npos;
  if (has_arg) {
    try {
      std::size_t used = 0;
      arg = std::stoul(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("bad adapter argument in '" + text + "'");
    }
  }
  if (head == "none" && !has_arg) return none();
  if (head == "ftm" && !has_arg) return ftm();
  if (head == "fla") return fla(has_arg ? arg : 16);
  if (head == "prompt") return prompt(has_arg ? arg : 2);
  if (head == "full-lora") return full_lora(has_arg ? arg : 16);
  throw ParseError("unknown adapter '" + text +
                   "' (expected none, ftm, fla[:r], prompt[:n], full-lora[:r])");
}

Tensor LoraUpdate::delta() const { return matmul(b, a); }

Tensor apply_ftm(const Tensor& tokens, const FtmParams& p) {
  if (tokens.rank() != 2 || p.gamma.shape() != Shape{tokens.dim(1)} ||
      p.beta.shape() != Shape{tokens.dim(1)}) {
    throw ShapeError("apply_ftm: tokens " + to_string(tokens.shape()) + " vs gamma " +
                     to_string(p.gamma.shape()) + ", beta " + to_string(p.beta.shape()));
  }
  Tensor out = tokens;
  const std::size_t d = tokens.dim(1);
  for (std::size_t i = 0; i < tokens.dim(0); ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = (1.0 + p.gamma[j]) * tokens.at(i, j) + p.beta[j];
  return out;
}

ad::Var apply_ftm(ad::Var tokens, ad::Var gamma, ad::Var beta) {
  return ad::add_bcast(ad::mul_bcast(tokens, ad::add_scalar(gamma, 1.0)), beta);
}

Tensor apply_prompt(const Tensor& tokens, const PromptParams& p) {
  if (p.count() == 0) return tokens;
  if (tokens.rank() != 2 || p.prefix_tokens.rank() != 2 ||
      p.prefix_tokens.dim(1) != tokens.dim(1)) {
    throw ShapeError("apply_prompt: prompt width does not match tokens");
  }
  const std::size_t n = p.count(), len = tokens.dim(0), d = tokens.dim(1);
  Tensor out({n + len, d});
  std::copy(p.prefix_tokens.data().begin(), p.prefix_tokens.data().end(), out.data().begin());
  std::copy(tokens.data().begin(), tokens.data().end(), out.data().begin() + n * d);
  return out;
}

ad::Var apply_prompt(ad::Var tokens, ad::Var prompt) {
  const Shape ts = tokens.shape();
  const Shape ps = prompt.shape();
  if (ts.size() != 3 || ps.size() != 2 || ps[1] != ts[2]) {
    throw ShapeError("apply_prompt: prompt " + to_string(ps) + " vs tokens " + to_string(ts));
  }
  ad::Var one = ad::reshape(prompt, {1, ps[0], ps[1]});
  std::vector<ad::Var> copies(ts[0], one);
  ad::Var tiled = ts[0] == 1 ? one : ad::concat(copies, 0);
  std::vector<ad::Var> parts{tiled, tokens};
  return ad::concat(parts, 1);
}

Tensor effective_weight(const LoraUpdate& u, const Tensor& w) {
  if (u.a.rank() != 2 || u.b.rank() != 2 || u.b.dim(1) != u.a.dim(0) ||
      w.shape() != Shape{u.b.dim(0), u.a.dim(1)}) {
    throw ShapeError("effective_weight: W " + to_string(w.shape()) + ", B " +
                     to_string(u.b.shape()) + ", A " + to_string(u.a.shape()));
  }
  return w + u.delta();
}

std::vector<LoraUpdate> attach_lora(ParamStore& store, std::span<const nn::LinearSpec> layers,
                                    std::size_t rank, Rng& rng) {
  if (rank == 0) throw ContractError("LoRA rank must be positive");
  for (const auto& spec : layers) {
    if (2 * rank > std::min(spec.d_in, spec.d_out)) {
      throw ContractError("LoRA rank " + std::to_string(rank) + " too large for layer '" +
                          spec.name + "' (" + std::to_string(spec.d_out) + "x" +
                          std::to_string(spec.d_in) + ")");
    }
  }
  std::vector<LoraUpdate> out;
  for (const auto& spec : layers) {
    const std::string p = nn::lora_prefix(spec.name);
    LoraUpdate u{spec.name, sample_gaussian(rng, {rank, spec.d_in}, 0.02),
                 Tensor({spec.d_out, rank})};
    store.add(p + "/A", u.a);
    store.add(p + "/B", u.b);
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<LoraUpdate> attach_fla(ParamStore& store, const vision::EncoderConfig& cfg,
                                   std::size_t rank, Rng& rng) {
  const auto layers = vision::encoder_linear_layers(cfg);
  return attach_lora(store, layers, rank, rng);
}

void attach_ftm(ParamStore& store, std::size_t width) {
  store.add("adapter/ftm/gamma", Tensor({width}));
  store.add("adapter/ftm/beta", Tensor({width}));
}

void attach_prompt(ParamStore& store, std::size_t count, std::size_t width, Rng& rng) {
  if (count == 0) return;
  store.add("adapter/prompt/tokens", sample_gaussian(rng, {count, width}, 0.02));
}

void attach_adapter(ParamStore& store, const AdapterKind& kind, const vision::EncoderConfig& cfg,
                    std::span<const nn::LinearSpec> expert_layers, Rng& rng) {
  switch (kind.type) {
    case AdapterType::kNone:
      return;
    case AdapterType::kFtm:
      attach_ftm(store, cfg.d_model);
      return;
    case AdapterType::kFla:
      attach_fla(store, cfg, kind.rank, rng);
      return;
    case AdapterType::kPromptPrefix:
      attach_prompt(store, kind.prompt_count, cfg.d_model, rng);
      return;
    case AdapterType::kFullLora: {
      auto layers = vision::encoder_linear_layers(cfg);
      layers.insert(layers.end(), expert_layers.begin(), expert_layers.end());
      attach_lora(store, layers, kind.rank, rng);
      return;
    }
  }
}

void freeze_backbone(ParamStore& store) { store.freeze_except(is_adapter_param); }

FtmParams read_ftm(const ParamStore& store) {
  return {store.value("adapter/ftm/gamma"), store.value("adapter/ftm/beta")};
}

std::vector<LoraUpdate> read_lora(const ParamStore& store) {
  std::vector<LoraUpdate> out;
  const std::string prefix = "adapter/lora/";
  for (const auto& [name, p] : store.all()) {
    if (!starts_with(name, prefix) || name.size() < 2 || name.substr(name.size() - 2) != "/A")
      continue;
    const std::string layer = name.substr(prefix.size(), name.size() - prefix.size() - 2);
    out.push_back({layer, p.value, store.value(prefix + layer + "/B")});
  }
  return out;
}

std::size_t count_trainable(const AdapterKind& kind, const vision::EncoderConfig& cfg,
                            std::span<const nn::LinearSpec> expert_layers) {
  auto lora_count = [&](std::span<const nn::LinearSpec> layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += kind.rank * (l.d_in + l.d_out);
    return n;
  };
  switch (kind.type) {
    case AdapterType::kNone:
      return 0;
    case AdapterType::kFtm:
      return 2 * cfg.d_model;
    case AdapterType::kFla:
      return lora_count(vision::encoder_linear_layers(cfg));
    case AdapterType::kPromptPrefix:
      return kind.prompt_count * cfg.d_model;
    case AdapterType::kFullLora:
      return lora_count(vision::encoder_linear_layers(cfg)) + lora_count(expert_layers);
  }
  return 0;
}

}  // namespace lab::adapters
