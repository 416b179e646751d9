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

#include "lab/trainer.hpp"

#include <cmath>
#include <sstream>

#include "lab/error.hpp"

namespace lab::train {

std::vector<double> train_loop(ParamStore& store, const StepLoss& loss, const TrainOptions& opts,
                               const StepHook& hook) {
  opts.schedule.validate();
  OptimizerState state;
  std::vector<double> trace;
  trace.reserve(opts.steps);
  std::size_t above = 0;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    GradMap grads;
    double value = 0.0;
    {
      ad::Tape tape;
      ad::Var l = loss(tape, store, step);
      value = l.value().item();
      grads = tape.backward(l).named();
    }
    trace.push_back(value);
    if (hook) hook(step, value);
    if (!std::isfinite(value)) throw NumericError("loss is not finite at step " + std::to_string(step));
    if (value > opts.divergence_factor * trace.front()) {
      if (++above >= opts.divergence_window) {
        std::ostringstream os;
        os << "training diverged: loss " << value << " at step " << step << " stayed above "
           << opts.divergence_factor << "x the initial " << trace.front() << " for "
           << opts.divergence_window << " steps";
        throw DivergenceError(os.str(), trace);
      }
    } else {
      above = 0;
    }
    if (opts.clip_norm > 0.0) clip_global_norm(grads, opts.clip_norm);
    adamw_step(store, grads, state, lr_at(step, opts.schedule), opts.adamw);
    if (opts.stop && opts.stop(step + 1)) break;
  }
  return trace;
}

void AdaptConfig::validate() const {
  schedule.validate();
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  if (clip_norm < 0.0) throw ContractError("clip_norm must be non-negative");
}

TrainOptions AdaptConfig::train_options() const {
  TrainOptions o;
  o.steps = steps;
  o.schedule = schedule;
  o.adamw = adamw;
  o.clip_norm = clip_norm;
  return o;
}

AdaptConfig AdaptConfig::preset(const std::string& name) {
  AdaptConfig c;
  if (name == "ftm-paper") {
    c.adapter = adapters::AdapterKind::ftm();
    c.steps = 5000;
    c.schedule = {500, 5000, 5e-4, 5e-5};
  } else if (name == "fla-paper") {
    c.adapter = adapters::AdapterKind::fla(16);
    c.steps = 1500;
    c.schedule = {500, 2000, 5e-4, 5e-6};
  } else {
    throw ContractError("unknown adaptation preset '" + name + "'");
  }
  return c;
}

void prepare_adapter(ParamStore& store, const policy::ModelConfig& cfg,
                     const adapters::AdapterKind& kind, Rng& rng) {
  const auto expert = policy::expert_linear_layers(cfg);
  adapters::attach_adapter(store, kind, cfg.encoder, expert, rng);
  adapters::freeze_backbone(store);
}

std::uint64_t backbone_hash(const ParamStore& store) {
  return store.fingerprint([](const std::string& n) { return !adapters::is_adapter_param(n); });
}

AdaptResult one_shot_adapt(ParamStore& store, const policy::ModelConfig& cfg,
                           std::span<const policy::Transition> demo, const AdaptConfig& acfg) {
  acfg.validate();
  if (demo.empty()) throw ContractError("one-shot adaptation needs a non-empty demonstration");
  bool touches_encoder = false;
  for (const auto& name : store.trainable_names()) {
    if (!adapters::is_adapter_param(name)) {
      throw ContractError("backbone parameter '" + name + "' is trainable; freeze it first");
    }
    if (starts_with(name, "adapter/lora/encoder/")) touches_encoder = true;
  }
  const auto before = store.hashes();
  const std::uint64_t base = backbone_hash(store);

  // Demo frames are often bit-identical (the camera does not move), so
  // each distinct image is encoded once.
  std::vector<Image> images;
  std::vector<std::size_t> image_of(demo.size());
  for (std::size_t i = 0; i < demo.size(); ++i) {
    std::size_t j = 0;
    while (j < images.size() && !images[j].bit_equal(demo[i].image)) ++j;
    if (j == images.size()) images.push_back(demo[i].image);
    image_of[i] = j;
  }
  // The frozen encoder's output never changes unless LoRA wraps it.
  Tensor cached;
  if (!touches_encoder) {
    ad::Tape tape;
    cached = policy::visual_tokens(tape, store, cfg, images).value();
  }
  const std::size_t n_tok = cfg.encoder.num_patches(), d = cfg.width();

  Rng pick(acfg.seed);
  Rng noise = pick.fork(1);
  StepLoss loss = [&](ad::Tape& tape, const ParamStore& s, std::size_t) {
    std::vector<const policy::Transition*> batch;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < acfg.batch_size; ++i) {
      idx.push_back(pick.below(demo.size()));
      batch.push_back(&demo[idx.back()]);
    }
    std::vector<std::size_t> rows;
    for (std::size_t i : idx) rows.push_back(image_of[i]);
    ad::Var tokens;
    if (touches_encoder) {
      ad::Var all = policy::visual_tokens(tape, s, cfg, images);
      ad::Var flat = ad::reshape(all, {images.size(), n_tok * d});
      tokens = ad::reshape(ad::gather_rows(flat, rows), {rows.size(), n_tok, d});
    } else {
      Tensor t({rows.size(), n_tok, d});
      for (std::size_t b = 0; b < rows.size(); ++b)
        std::copy(cached.data().begin() + rows[b] * n_tok * d,
                  cached.data().begin() + (rows[b] + 1) * n_tok * d,
                  t.data().begin() + b * n_tok * d);
      tokens = tape.constant(std::move(t));
    }
    ad::Var prefix = policy::adapt_tokens(tape, s, tokens);
    return policy::policy_loss(tape, s, cfg, prefix, batch, noise).total;
  };

  AdaptResult res;
  if (store.trainable_count() > 0) res.loss_trace = train_loop(store, loss, acfg.train_options());

  for (const auto& [name, h] : store.hashes()) {
    if (adapters::is_adapter_param(name)) continue;
    const auto it = before.find(name);
    if (it == before.end() || it->second != h) {
      throw ContractError("frozen parameter '" + name + "' changed during adaptation");
    }
  }
  res.delta = checkpoint_from(store, adapters::is_adapter_param);
  res.delta.base_hash = base;
  res.delta.meta = {{"adapter", acfg.adapter.to_string()},
                    {"steps", acfg.steps},
                    {"seed", acfg.seed},
                    {"final_loss", res.loss_trace.empty() ? 0.0 : res.loss_trace.back()}};
  return res;
}

}  // namespace lab::train
