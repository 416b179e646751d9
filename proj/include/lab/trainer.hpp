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
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lab/adapters.hpp"
#include "lab/checkpoint.hpp"
#include "lab/error.hpp"
#include "lab/optim.hpp"
#include "lab/policy.hpp"

namespace lab::train {

// Raised when the loss stays above divergence_factor x its first value
// for divergence_window consecutive steps.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : TrainingError(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

struct TrainOptions {
  std::size_t steps = 2000;
  ScheduleConfig schedule;
  AdamWConfig adamw;
  double clip_norm = 1.0;
  std::size_t divergence_window = 100;
  double divergence_factor = 10.0;
  // Checked after every update with the number of completed steps; true
  // ends the loop early.
  std::function<bool(std::size_t done)> stop;
};

// Builds the loss of one optimization step on a fresh tape.
using StepLoss = std::function<ad::Var(ad::Tape& tape, const ParamStore& store, std::size_t step)>;
using StepHook = std::function<void(std::size_t step, double loss)>;

// Runs opts.steps AdamW steps on the trainable parameters of `store` and
// returns the loss trace (one entry per step, before the update).
std::vector<double> train_loop(ParamStore& store, const StepLoss& loss, const TrainOptions& opts,
                               const StepHook& hook = {});

struct AdaptConfig {
  adapters::AdapterKind adapter = adapters::AdapterKind::ftm();
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  ScheduleConfig schedule{500, 2000, 5e-4, 5e-5};
  AdamWConfig adamw;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  TrainOptions train_options() const;

  // "ftm-paper": 5000 steps, decay 5000, 5e-4 -> 5e-5.
  // "fla-paper": 1500 steps, decay 2000, 5e-4 -> 5e-6.
  static AdaptConfig preset(const std::string& name);
  friend bool operator==(const AdaptConfig&, const AdaptConfig&) = default;
};

// Attaches `kind` at identity and freezes everything else.
void prepare_adapter(ParamStore& store, const policy::ModelConfig& cfg,
                     const adapters::AdapterKind& kind, Rng& rng);

struct AdaptResult {
  Checkpoint delta;  // adapter arrays plus the hash of the frozen base
  std::vector<double> loss_trace;
};

// Fits the attached adapter to a single demonstration (minibatches drawn
// with replacement). Throws ContractError when a non-adapter parameter is
// trainable or was modified.
AdaptResult one_shot_adapt(ParamStore& store, const policy::ModelConfig& cfg,
                           std::span<const policy::Transition> demo, const AdaptConfig& acfg);

// Hash of every non-adapter parameter.
std::uint64_t backbone_hash(const ParamStore& store);

}  // namespace lab::train
