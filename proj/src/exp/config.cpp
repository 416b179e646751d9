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

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include <toml.hpp>

#include "lab/error.hpp"
#include "lab/experiment.hpp"

namespace lab::exp {

void PretrainConfig::validate() const {
  if (images_per_batch == 0 || states_per_image == 0) {
    throw ContractError("pretrain batches need at least one image and one state");
  }
  if (eval_every == 0 || eval_episodes == 0) {
    throw ContractError("pretrain eval_every and eval_episodes must be >= 1");
  }
  if (!(target_success > 0.0 && target_success <= 1.0)) {
    throw ContractError("pretrain target_success must lie in (0, 1]");
  }
  train::ScheduleConfig{warmup_steps, max_steps, peak_lr, min_lr}.validate();
}

void EvalConfig::validate(std::size_t horizon) const {
  if (episodes == 0) throw ContractError("eval episodes must be >= 1");
  if (execute_steps == 0 || execute_steps > horizon) {
    throw ContractError("execute_steps must lie in [1, horizon=" + std::to_string(horizon) + "]");
  }
  if (jitter < 0.0) throw ContractError("eval jitter must be non-negative");
}

void LabConfig::validate() const {
  model.validate();
  env.validate();
  adapt.validate();
  pretrain.validate();
  eval.validate(model.policy.horizon);
  if (env.image_size != model.encoder.image_size) {
    throw ContractError("env image_size " + std::to_string(env.image_size) +
                        " differs from encoder image_size " +
                        std::to_string(model.encoder.image_size));
  }
  if (model.policy.action_dim != 2 || model.policy.state_dim != 2) {
    throw ContractError("the planar environment needs action_dim = state_dim = 2");
  }
}

namespace {

using Value = std::variant<std::int64_t, double, std::string>;

struct Field {
  std::string key;
  std::function<void(const toml::node&, LabConfig&, const std::string&)> set;
  std::function<Value(const LabConfig&)> get;
};

void read(const toml::node& n, std::size_t& out, const std::string& where) {
  const auto v = n.value_exact<std::int64_t>();
  if (!v || *v < 0) throw ParseError(where + ": expected a non-negative integer");
  out = static_cast<std::size_t>(*v);
}

void read(const toml::node& n, double& out, const std::string& where) {
  if (const auto i = n.value_exact<std::int64_t>()) {
    out = static_cast<double>(*i);
  } else if (const auto d = n.value_exact<double>()) {
    out = *d;
  } else {
    throw ParseError(where + ": expected a number");
  }
}

void read(const toml::node& n, adapters::AdapterKind& out, const std::string& where) {
  const auto s = n.value_exact<std::string>();
  if (!s) throw ParseError(where + ": expected a string such as \"ftm\" or \"fla:16\"");
  try {
    out = adapters::AdapterKind::parse(*s);
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
}

Value value_of(std::size_t v) { return static_cast<std::int64_t>(v); }
Value value_of(double v) { return v; }
Value value_of(const adapters::AdapterKind& k) { return k.to_string(); }

#define LAB_FIELD(key, member)                                                          \
  Field {                                                                               \
    key, [](const toml::node& n, LabConfig& c, const std::string& w) { read(n, c.member, w); }, \
        [](const LabConfig& c) { return value_of(c.member); }                           \
  }

using Section = std::pair<std::string, std::vector<Field>>;

const std::vector<Section>& sections() {
  static const std::vector<Section> s = {
      {"encoder",
       {LAB_FIELD("image_size", model.encoder.image_size),
        LAB_FIELD("patch_size", model.encoder.patch_size),
        LAB_FIELD("d_model", model.encoder.d_model), LAB_FIELD("n_layers", model.encoder.n_layers),
        LAB_FIELD("n_heads", model.encoder.n_heads),
        LAB_FIELD("mlp_ratio", model.encoder.mlp_ratio)}},
      {"policy",
       {LAB_FIELD("horizon", model.policy.horizon),
        LAB_FIELD("action_dim", model.policy.action_dim),
        LAB_FIELD("state_dim", model.policy.state_dim),
        LAB_FIELD("n_layers", model.policy.n_layers), LAB_FIELD("n_heads", model.policy.n_heads),
        LAB_FIELD("mlp_ratio", model.policy.mlp_ratio), LAB_FIELD("bins", model.policy.bins),
        LAB_FIELD("task_vocab", model.policy.task_vocab),
        LAB_FIELD("flow_steps", model.policy.flow_steps),
        LAB_FIELD("tau_scale", model.policy.tau_scale),
        LAB_FIELD("norm_eps", model.policy.norm_eps),
        LAB_FIELD("discrete_weight", model.policy.discrete_weight)}},
      {"adapter", {LAB_FIELD("kind", adapt.adapter)}},
      {"train",
       {LAB_FIELD("batch_size", adapt.batch_size), LAB_FIELD("steps", adapt.steps),
        LAB_FIELD("warmup_steps", adapt.schedule.warmup_steps),
        LAB_FIELD("decay_steps", adapt.schedule.decay_steps),
        LAB_FIELD("peak_lr", adapt.schedule.peak_lr), LAB_FIELD("min_lr", adapt.schedule.min_lr),
        LAB_FIELD("beta1", adapt.adamw.beta1), LAB_FIELD("beta2", adapt.adamw.beta2),
        LAB_FIELD("eps", adapt.adamw.eps), LAB_FIELD("weight_decay", adapt.adamw.weight_decay),
        LAB_FIELD("clip_norm", adapt.clip_norm), LAB_FIELD("seed", adapt.seed)}},
      {"pretrain",
       {LAB_FIELD("max_steps", pretrain.max_steps),
        LAB_FIELD("images_per_batch", pretrain.images_per_batch),
        LAB_FIELD("states_per_image", pretrain.states_per_image),
        LAB_FIELD("warmup_steps", pretrain.warmup_steps),
        LAB_FIELD("peak_lr", pretrain.peak_lr), LAB_FIELD("min_lr", pretrain.min_lr),
        LAB_FIELD("eval_every", pretrain.eval_every),
        LAB_FIELD("eval_episodes", pretrain.eval_episodes),
        LAB_FIELD("target_success", pretrain.target_success)}},
      {"env",
       {LAB_FIELD("image_size", env.image_size), LAB_FIELD("horizon", env.horizon),
        LAB_FIELD("step_scale", env.step_scale),
        LAB_FIELD("success_threshold", env.success_threshold)}},
      {"eval",
       {LAB_FIELD("episodes", eval.episodes), LAB_FIELD("execute_steps", eval.execute_steps),
        LAB_FIELD("jitter", eval.jitter)}},
  };
  return s;
}

#undef LAB_FIELD

}  // namespace

LabConfig parse_config(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config line " << e.source().begin.line << ": " << e.description();
    throw ParseError(os.str());
  }
  LabConfig cfg;
  for (const auto& [name, node] : root) {
    const std::string sec(name.str());
    const auto it = std::find_if(sections().begin(), sections().end(),
                                 [&](const Section& s) { return s.first == sec; });
    if (it == sections().end()) throw ParseError("unknown config section [" + sec + "]");
    const toml::table* tbl = node.as_table();
    if (!tbl) throw ParseError("config entry '" + sec + "' must be a [section]");
    for (const auto& [k, v] : *tbl) {
      const std::string key(k.str());
      const auto f = std::find_if(it->second.begin(), it->second.end(),
                                  [&](const Field& x) { return x.key == key; });
      if (f == it->second.end()) {
        throw ParseError("unknown key '" + key + "' in section [" + sec + "]");
      }
      f->set(v, cfg, sec + "." + key);
    }
  }
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ParseError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

LabConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

std::string config_to_toml(const LabConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& [sec, fields] : sections()) {
    if (!first) os << "\n";
    first = false;
    os << "[" << sec << "]\n";
    for (const auto& f : fields) {
      os << f.key << " = ";
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) {
              os << '"' << v << '"';
            } else if constexpr (std::is_same_v<T, double>) {
              // Keep a decimal point so the value reads back as a float.
              std::ostringstream d;
              d.precision(17);
              d << v;
              std::string s = d.str();
              if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
              os << s;
            } else {
              os << v;
            }
          },
          f.get(cfg));
      os << "\n";
    }
  }
  return os.str();
}

nlohmann::json config_to_json(const LabConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [sec, fields] : sections()) {
    nlohmann::json s = nlohmann::json::object();
    for (const auto& f : fields) {
      std::visit([&](const auto& v) { s[f.key] = v; }, f.get(cfg));
    }
    j[sec] = s;
  }
  return j;
}

}  // namespace lab::exp
