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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/adapters.hpp"
#include "lab/params.hpp"
#include "lab/policy.hpp"
#include "lab/scene.hpp"
#include "lab/trainer.hpp"

// Pretraining, closed-loop evaluation, demonstrations and benchmark cells.
namespace lab::exp {

struct PretrainConfig {
  std::size_t max_steps = 5000;
  std::size_t images_per_batch = 8;
  // Agent states labelled per image; the image does not depend on them.
  std::size_t states_per_image = 4;
  std::size_t warmup_steps = 200;
  double peak_lr = 3e-3;
  double min_lr = 1.5e-4;
  std::size_t eval_every = 500;
  std::size_t eval_episodes = 50;
  double target_success = 0.9;

  void validate() const;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct EvalConfig {
  std::size_t episodes = 50;
  // Actions executed from each sampled chunk before re-querying the policy.
  std::size_t execute_steps = 4;
  double jitter = 0.03;

  void validate(std::size_t horizon) const;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct LabConfig {
  policy::ModelConfig model;
  scene::EnvConfig env;
  train::AdaptConfig adapt;
  PretrainConfig pretrain;
  EvalConfig eval;

  void validate() const;
  friend bool operator==(const LabConfig&, const LabConfig&) = default;
};

// TOML sections [encoder], [policy], [adapter], [train], [pretrain], [env],
// [eval]; missing keys keep their defaults, unknown sections or keys throw
// ParseError naming them.
LabConfig parse_config(const std::string& toml_text);
LabConfig load_config(const std::filesystem::path& path);
std::string config_to_toml(const LabConfig& cfg);
nlohmann::json config_to_json(const LabConfig& cfg);

// ---- evaluation -----------------------------------------------------------

struct EvalResult {
  std::size_t successes = 0;
  std::size_t episodes = 0;
  double success_rate() const {
    return episodes ? static_cast<double>(successes) / static_cast<double>(episodes) : 0.0;
  }
};

// Closed-loop rollouts of `episodes` jittered episodes of `layout` under
// `spec`, batched over episodes. The jitter, start and noise seed of
// episode i depend only on (seed, i), so two stores see the same starts.
EvalResult evaluate(const ParamStore& store, const LabConfig& cfg, const scene::PerturbSpec& spec,
                    const scene::CellLayout& layout, std::size_t episodes, std::uint64_t seed);

// Same rollout loop driven by the scripted expert.
EvalResult evaluate_expert(const LabConfig& cfg, const scene::PerturbSpec& spec,
                           const scene::CellLayout& layout, std::size_t episodes,
                           std::uint64_t seed);

// ---- pretraining ----------------------------------------------------------

struct PretrainEval {
  std::size_t step = 0;
  double success_rate = 0.0;
};

struct PretrainResult {
  ParamStore store;
  std::vector<double> loss_trace;
  std::vector<PretrainEval> evals;
  bool reached_target = false;
};

using LogFn = std::function<void(const std::string&)>;

// Behaviour cloning of the scripted expert on source-camera episodes.
// Every `eval_every` steps the policy is scored on fresh cell layouts and
// training stops once the target success is reached. Deterministic in
// (cfg, seed). Throws TrainingError when max_steps pass without reaching
// the target.
PretrainResult pretrain(const LabConfig& cfg, std::uint64_t seed, const LogFn& log = {});

Checkpoint base_checkpoint(const ParamStore& store, const LabConfig& cfg);
// Rebuilds a store and its model config from a base checkpoint.
ParamStore load_base(const Checkpoint& ckpt, policy::ModelConfig* model = nullptr);

// ---- demonstrations -------------------------------------------------------

struct Demonstration {
  std::vector<policy::Transition> steps;
  scene::PerturbSpec perturb;
};

// One scripted-expert episode of `layout` observed under `spec`.
Demonstration make_demo(const LabConfig& cfg, const scene::PerturbSpec& spec,
                        const scene::CellLayout& layout, std::uint64_t seed);

void save_demo(const std::filesystem::path& path, const Demonstration& demo);
Demonstration load_demo(const std::filesystem::path& path);

// ---- benchmark cells ------------------------------------------------------

struct ExperimentCell {
  std::string id;
  adapters::AdapterKind adapter;
  scene::PerturbSpec perturb;
  std::size_t n_episodes = 50;
};

struct ResultRow {
  std::string cell_id;
  std::string adapter;
  std::string perturb;
  std::string severity;
  std::size_t successes = 0;
  std::size_t episodes = 0;
  double success_rate = 0.0;
  std::size_t trainable_params = 0;
  std::size_t adapt_steps = 0;
  double wall_time_s = 0.0;
  std::string error;  // non-empty when the cell failed

  bool failed() const { return !error.empty(); }
};

struct SweepOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Writes 0 instead of the measured wall time (byte-stable outputs).
  bool record_time = true;
  LogFn log;
};

// Every cell of a sweep shares one layout, its evaluation starts and,
// per perturbation, one demonstration; only the adaptation stream is
// private to the cell.
scene::CellLayout sweep_layout(std::uint64_t seed);
// Seed of the demonstration recorded under `spec`, shared by every adapter.
std::uint64_t demo_seed(std::uint64_t seed, const scene::PerturbSpec& spec);
// Adapter init and minibatch stream of cell `index`.
Rng adapt_stream(std::uint64_t seed, std::size_t index);
std::uint64_t eval_seed(std::uint64_t seed);

ResultRow run_cell(const ParamStore& base, const LabConfig& cfg, const ExperimentCell& cell,
                   std::size_t index, const SweepOptions& opts);

// Runs the cells on a pool of opts.threads workers; rows come back in
// cell order whatever the completion order.
std::vector<ResultRow> run_sweep(const ParamStore& base, const LabConfig& cfg,
                                 const std::vector<ExperimentCell>& cells,
                                 const SweepOptions& opts);

// "<family>:<severity>" as in cell ids: "none", "camera_orbit:30" (degrees),
// "camera_discrete:M", "lighting:2", "texture:1", "fog:6".
scene::PerturbSpec parse_perturb(const std::string& text);

// "libero-v-toy", "orbit-30", "smoke".
std::vector<ExperimentCell> sweep_preset(const std::string& name);
std::vector<std::string> sweep_preset_names();

// LAB_THREADS when set (must be a positive integer), else the number of
// hardware threads.
std::size_t default_threads();

}  // namespace lab::exp
