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

#include "lab/policy.hpp"

#include <cmath>

#include "lab/adapters.hpp"
#include "lab/error.hpp"

namespace lab::policy {

void PolicyConfig::validate() const {
  if (horizon == 0 || action_dim == 0 || state_dim == 0) {
    throw ContractError("horizon, action_dim and state_dim must be positive");
  }
  if (n_layers == 0 || n_heads == 0 || mlp_ratio == 0 || bins < 2 || task_vocab == 0) {
    throw ContractError("invalid policy size settings");
  }
  if (flow_steps == 0) throw ContractError("flow_steps must be >= 1");
  if (!(tau_scale > 0.0 && tau_scale <= 1.0)) throw ContractError("tau_scale must be in (0, 1]");
  if (norm_eps < 0.0 || discrete_weight < 0.0) {
    throw ContractError("norm_eps and discrete_weight must be non-negative");
  }
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
  j = {{"horizon", c.horizon},       {"action_dim", c.action_dim},
       {"state_dim", c.state_dim},   {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"mlp_ratio", c.mlp_ratio},
       {"bins", c.bins},             {"task_vocab", c.task_vocab},
       {"flow_steps", c.flow_steps}, {"tau_scale", c.tau_scale},
       {"norm_eps", c.norm_eps},     {"discrete_weight", c.discrete_weight}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
  j.at("horizon").get_to(c.horizon);
  j.at("action_dim").get_to(c.action_dim);
  j.at("state_dim").get_to(c.state_dim);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("bins").get_to(c.bins);
  j.at("task_vocab").get_to(c.task_vocab);
  j.at("flow_steps").get_to(c.flow_steps);
  j.at("tau_scale").get_to(c.tau_scale);
  j.at("norm_eps").get_to(c.norm_eps);
  j.at("discrete_weight").get_to(c.discrete_weight);
}

void ModelConfig::validate() const {
  encoder.validate();
  policy.validate();
  if (width() % policy.n_heads) throw ContractError("expert width not divisible by n_heads");
  if (width() % 2) throw ContractError("expert width must be even");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"encoder", c.encoder}, {"policy", c.policy}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("policy").get_to(c.policy);
}

namespace {

std::string block_name(std::size_t i) { return "expert/block" + std::to_string(i); }

void init_modulation(ParamStore& store, const std::string& name, std::size_t d, Rng& rng) {
  nn::init_linear(store, {name, d, 2 * d}, rng);
  // (1 + gamma) starts at sqrt(D), matching the L2-norm gain elsewhere.
  Tensor bias({2 * d});
  for (std::size_t i = 0; i < d; ++i) bias[i] = std::sqrt(static_cast<double>(d)) - 1.0;
  store.set(name + "/bias", std::move(bias));
}

// Plain L2 norm on rows [0, split), AdaRMSNorm on the rest.
ad::Var split_norm(ad::Tape& tape, const ParamStore& store, const std::string& plain,
                   const std::string& ada, ad::Var x, std::size_t split, ad::Var temb,
                   double eps) {
  const std::size_t t = x.shape()[1], d = x.shape()[2];
  ad::Var head = nn::l2_norm(tape, store, plain, ad::slice(x, 1, 0, split));
  ad::Var mod = nn::linear(tape, store, ada, temb);
  ad::Var gamma = ad::slice(mod, 1, 0, d), beta = ad::slice(mod, 1, d, d);
  ad::Var tail = ada_rms_norm(ad::slice(x, 1, split, t - split), gamma, beta, eps);
  std::vector<ad::Var> parts{head, tail};
  return ad::concat(parts, 1);
}

}  // namespace

std::vector<nn::LinearSpec> expert_linear_layers(const ModelConfig& cfg) {
  const std::size_t d = cfg.width(), h = d * cfg.policy.mlp_ratio;
  std::vector<nn::LinearSpec> out;
  for (std::size_t i = 0; i < cfg.policy.n_layers; ++i) {
    const std::string b = block_name(i);
    out.push_back({b + "/attn/q", d, d});
    out.push_back({b + "/attn/k", d, d});
    out.push_back({b + "/attn/v", d, d});
    out.push_back({b + "/attn/out", d, d});
    out.push_back({b + "/mlp/up", d, h});
    out.push_back({b + "/mlp/down", h, d});
  }
  return out;
}

void init_model(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const PolicyConfig& p = cfg.policy;
  const std::size_t d = cfg.width();
  vision::init_encoder(store, cfg.encoder, rng);
  vision::init_task_table(store, p.task_vocab, d, rng);
  store.add("expert/discrete_queries", sample_gaussian(rng, {p.horizon, d}, 0.02));
  store.add("expert/action_pos", sample_gaussian(rng, {p.horizon, d}, 0.02));
  store.add("expert/state_pos", sample_gaussian(rng, {1, d}, 0.02));
  nn::init_linear(store, {"expert/state_in", p.state_dim, d}, rng, 0.5);
  nn::init_linear(store, {"expert/action_in", p.action_dim, d}, rng, 0.5);
  nn::init_linear(store, {"expert/time_mlp", d, d}, rng, 0.2);
  for (std::size_t i = 0; i < p.n_layers; ++i) {
    const std::string b = block_name(i);
    nn::init_l2_norm(store, b + "/norm1", d);
    nn::init_l2_norm(store, b + "/norm2", d);
    init_modulation(store, b + "/ada1", d, rng);
    init_modulation(store, b + "/ada2", d, rng);
  }
  for (const auto& spec : expert_linear_layers(cfg)) nn::init_linear(store, spec, rng);
  nn::init_l2_norm(store, "expert/final_norm", d);
  init_modulation(store, "expert/final_ada", d, rng);
  nn::init_linear(store, {"expert/action_out", d, p.action_dim}, rng);
  nn::init_linear(store, {"expert/discrete_out", d, p.action_dim * p.bins}, rng);
}

ad::Var visual_tokens(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      std::span<const Image> images) {
  return vision::encode_batch(tape, store, cfg.encoder, images);
}

ad::Var adapt_tokens(ad::Tape& tape, const ParamStore& store, ad::Var tokens) {
  if (store.contains("adapter/ftm/gamma")) {
    tokens = adapters::apply_ftm(tokens, tape.param(store, "adapter/ftm/gamma"),
                                 tape.param(store, "adapter/ftm/beta"));
  }
  if (store.contains("adapter/prompt/tokens")) {
    tokens = adapters::apply_prompt(tokens, tape.param(store, "adapter/prompt/tokens"));
  }
  return tokens;
}

ad::Var visual_prefix(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      std::span<const Image> images) {
  return adapt_tokens(tape, store, visual_tokens(tape, store, cfg, images));
}

ExpertOutput expert_forward(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                            ad::Var prefix, const ExpertInput& in) {
  const PolicyConfig& p = cfg.policy;
  const std::size_t d = cfg.width();
  const Shape ps = prefix.shape();
  if (ps.size() != 3 || ps[2] != d) {
    throw ShapeError("expert_forward: prefix " + to_string(ps) + " vs width " + std::to_string(d));
  }
  const std::size_t b = ps[0], n_vis = ps[1], h = p.horizon;
  if (in.tasks.size() != b || in.tau.size() != b || in.states.shape() != Shape{b, p.state_dim} ||
      in.a_tau.shape() != Shape{b, h, p.action_dim}) {
    throw ShapeError("expert_forward: inputs do not match batch " + std::to_string(b));
  }
  for (std::size_t t : in.tasks) {
    if (t >= p.task_vocab) throw ContractError("task id " + std::to_string(t) + " out of range");
  }

  ad::Var task = ad::reshape(ad::gather_rows(tape.param(store, "encoder/task_table"), in.tasks),
                             {b, 1, d});
  ad::Var disc = nn::add_tiled(tape.constant(Tensor({b, h, d})),
                               tape.param(store, "expert/discrete_queries"));
  ad::Var state = nn::add_tiled(
      ad::reshape(nn::linear(tape, store, "expert/state_in", tape.constant(in.states)), {b, 1, d}),
      tape.param(store, "expert/state_pos"));
  ad::Var acts = nn::add_tiled(nn::linear_nd(tape, store, "expert/action_in", tape.constant(in.a_tau)),
                               tape.param(store, "expert/action_pos"));
  std::vector<ad::Var> parts{prefix, task, disc, state, acts};
  ad::Var x = ad::concat(parts, 1);

  const SectionLengths sec{n_vis + 1, h, 1, h};
  const AttentionMask mask = build_attention_mask(sec);
  const std::size_t split = sec.prefix + sec.discrete;

  Tensor phi({b, d});
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor e = sinusoidal_embedding(in.tau[i], d);
    std::copy(e.data().begin(), e.data().end(), phi.data().begin() + i * d);
  }
  ad::Var temb = ad::gelu(nn::linear(tape, store, "expert/time_mlp", tape.constant(std::move(phi))));

  std::string stage = "expert";
  try {
    for (std::size_t i = 0; i < p.n_layers; ++i) {
      const std::string bn = block_name(i);
      stage = bn;
      ad::Var y = split_norm(tape, store, bn + "/norm1", bn + "/ada1", x, split, temb, p.norm_eps);
      ad::Var q = nn::linear_nd(tape, store, bn + "/attn/q", y);
      ad::Var k = nn::linear_nd(tape, store, bn + "/attn/k", y);
      ad::Var v = nn::linear_nd(tape, store, bn + "/attn/v", y);
      x = ad::add(x, nn::linear_nd(tape, store, bn + "/attn/out",
                                   nn::attention(q, k, v, p.n_heads, &mask)));
      y = split_norm(tape, store, bn + "/norm2", bn + "/ada2", x, split, temb, p.norm_eps);
      y = ad::gelu(nn::linear_nd(tape, store, bn + "/mlp/up", y));
      x = ad::add(x, nn::linear_nd(tape, store, bn + "/mlp/down", y));
    }
    stage = "expert/head";
    x = split_norm(tape, store, "expert/final_norm", "expert/final_ada", x, split, temb, p.norm_eps);
    ExpertOutput out;
    out.velocity = nn::linear_nd(tape, store, "expert/action_out",
                                 ad::slice(x, 1, sec.total() - h, h));
    ad::Var logits = nn::linear_nd(tape, store, "expert/discrete_out", ad::slice(x, 1, sec.prefix, h));
    out.discrete_logits = ad::reshape(logits, {b * h * p.action_dim, p.bins});
    return out;
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  }
}

LossParts policy_loss(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                      ad::Var prefix, std::span<const Transition* const> batch, Rng& rng) {
  const PolicyConfig& p = cfg.policy;
  const std::size_t b = batch.size(), h = p.horizon, da = p.action_dim;
  if (b == 0) throw ContractError("policy_loss on an empty batch");
  ExpertInput in;
  in.states = Tensor({b, p.state_dim});
  in.a_tau = Tensor({b, h, da});
  Tensor a({b, h, da}), omega({b, h, da});
  std::vector<std::size_t> bins;
  for (std::size_t i = 0; i < b; ++i) {
    const Transition& tr = *batch[i];
    if (tr.actions.shape() != Shape{h, da} || tr.state.shape() != Shape{p.state_dim}) {
      throw ShapeError("transition shapes do not match the policy config");
    }
    const FlowSample s = make_flow_sample(tr.actions, rng, p.tau_scale);
    in.tasks.push_back(tr.task);
    in.tau.push_back(s.tau);
    for (std::size_t j = 0; j < p.state_dim; ++j) in.states[i * p.state_dim + j] = tr.state[j];
    for (std::size_t j = 0; j < h * da; ++j) {
      a[i * h * da + j] = s.a[j];
      omega[i * h * da + j] = s.omega[j];
      in.a_tau[i * h * da + j] = s.a_tau[j];
      bins.push_back(action_to_bin(s.a[j], p.bins));
    }
  }
  const ExpertOutput out = expert_forward(tape, store, cfg, prefix, in);
  LossParts parts;
  ad::Var flow = flow_loss(out.velocity, a, omega);
  parts.flow = flow.value().item();
  parts.total = flow;
  if (p.discrete_weight > 0.0) {
    ad::Var disc = discrete_loss(out.discrete_logits, bins);
    parts.discrete = disc.value().item();
    parts.total = ad::add(flow, ad::scale(disc, p.discrete_weight));
  }
  return parts;
}

Tensor sample_actions(const ParamStore& store, const ModelConfig& cfg, const Tensor& prefix,
                      std::span<const std::size_t> tasks, const Tensor& states, Rng& rng) {
  const PolicyConfig& p = cfg.policy;
  const std::size_t b = prefix.dim(0);
  ExpertInput in;
  in.tasks.assign(tasks.begin(), tasks.end());
  in.states = states;
  VelocityField field = [&](const Tensor& a_tau, double tau) {
    ad::Tape tape;
    in.a_tau = a_tau;
    in.tau.assign(b, tau);
    return expert_forward(tape, store, cfg, tape.constant(prefix), in).velocity.value();
  };
  return euler_integrate(field, rng, {b, p.horizon, p.action_dim}, p.flow_steps);
}

Tensor act(const ParamStore& store, const ModelConfig& cfg, std::span<const Image> images,
           std::span<const std::size_t> tasks, const Tensor& states, Rng& rng) {
  ad::Tape tape;
  const Tensor prefix = visual_prefix(tape, store, cfg, images).value();
  return sample_actions(store, cfg, prefix, tasks, states, rng);
}

}  // namespace lab::policy
