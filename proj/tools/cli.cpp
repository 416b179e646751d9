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

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "lab/checkpoint.hpp"
#include "lab/error.hpp"
#include "lab/experiment.hpp"
#include "lab/report.hpp"
#include "lab/theory_runner.hpp"

namespace lab::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;  // empty: current directory
  std::string preset;
};

void add_common(CLI::App* cmd, Common& c, const std::string& preset_help) {
  cmd->add_option("--config", c.config, "TOML configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "root seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--preset", c.preset, preset_help);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot write " + path.string());
  f << text;
}

fs::path out_dir(const Common& c) {
  fs::path dir(c.out.empty() ? "." : c.out);
  fs::create_directories(dir);
  return dir;
}

exp::LabConfig base_config(const Common& c) {
  return c.config.empty() ? exp::LabConfig{} : exp::load_config(c.config);
}

// The model shape always comes from the base checkpoint; a config that
// names a different one is rejected.
ParamStore load_base_for(const std::string& path, const Common& c, exp::LabConfig& cfg) {
  policy::ModelConfig model;
  ParamStore base = exp::load_base(load_checkpoint(path), &model);
  if (c.config.empty()) {
    cfg.model = model;
    cfg.env.image_size = model.encoder.image_size;
  } else if (!(cfg.model == model)) {
    throw ContractError("config model does not match the base checkpoint " + path);
  }
  cfg.validate();
  return base;
}

std::string loss_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << ',' << trace[i] << "\n";
  return os.str();
}

int cmd_pretrain(const Common& c, std::ostream& out) {
  exp::LabConfig cfg = base_config(c);
  if (!c.preset.empty()) throw ContractError("pretrain has no presets");
  const fs::path dir = out_dir(c);
  const auto res = exp::pretrain(cfg, c.seed, [&](const std::string& s) { out << s << std::endl; });
  save_checkpoint(dir / "base.ckpt", exp::base_checkpoint(res.store, cfg));
  nlohmann::json m;
  m["seed"] = c.seed;
  m["steps"] = res.loss_trace.size();
  m["reached_target"] = res.reached_target;
  m["evals"] = nlohmann::json::array();
  for (const auto& e : res.evals) m["evals"].push_back({{"step", e.step}, {"success_rate", e.success_rate}});
  m["config"] = exp::config_to_json(cfg);
  write_text(dir / "pretrain.json", m.dump(2) + "\n");
  write_text(dir / "pretrain_loss.csv", loss_csv(res.loss_trace));
  out << "wrote " << (dir / "base.ckpt").string() << "\n";
  return kOk;
}

int cmd_adapt(const Common& c, const std::string& base_path, const std::string& demo_path,
              const std::string& perturb, const std::string& adapter, std::size_t episodes,
              std::ostream& out) {
  exp::LabConfig cfg = base_config(c);
  if (!c.preset.empty()) {
    const auto kind = cfg.adapt.adapter;
    cfg.adapt = train::AdaptConfig::preset(c.preset);
    cfg.adapt.adapter = kind;
  }
  if (!adapter.empty()) cfg.adapt.adapter = adapters::AdapterKind::parse(adapter);
  const ParamStore base = load_base_for(base_path, c, cfg);
  const fs::path dir = out_dir(c);
  const scene::CellLayout layout = exp::sweep_layout(c.seed);

  exp::Demonstration demo;
  if (!demo_path.empty()) {
    demo = exp::load_demo(demo_path);
  } else {
    const scene::PerturbSpec spec = exp::parse_perturb(perturb);
    demo = exp::make_demo(cfg, spec, layout, exp::demo_seed(c.seed, spec));
    exp::save_demo(dir / "demo.ckpt", demo);
  }
  const std::size_t px = cfg.model.encoder.image_size;
  if (demo.steps.front().image.height != px || demo.steps.front().image.width != px) {
    throw ContractError("demo images do not match the model image size " + std::to_string(px));
  }

  ParamStore store = base;
  Rng own = exp::adapt_stream(c.seed, 0);
  train::prepare_adapter(store, cfg.model, cfg.adapt.adapter, own);
  train::AdaptConfig acfg = cfg.adapt;
  acfg.seed = own.next_u64();
  const train::AdaptResult res = train::one_shot_adapt(store, cfg.model, demo.steps, acfg);
  save_checkpoint(dir / "delta.ckpt", res.delta);
  write_text(dir / "adapt_loss.csv", loss_csv(res.loss_trace));

  nlohmann::json m;
  m["adapter"] = acfg.adapter.to_string();
  m["perturb"] = scene::perturb_to_json(demo.perturb);
  m["demo_steps"] = demo.steps.size();
  m["adapt_steps"] = res.loss_trace.size();
  m["trainable_params"] = adapters::count_trainable(acfg.adapter, cfg.model.encoder,
                                                    policy::expert_linear_layers(cfg.model));
  m["final_loss"] = res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
  if (episodes > 0) {
    const auto seed = exp::eval_seed(c.seed);
    m["zero_shot_success"] = exp::evaluate(base, cfg, demo.perturb, layout, episodes, seed).success_rate();
    m["adapted_success"] = exp::evaluate(store, cfg, demo.perturb, layout, episodes, seed).success_rate();
  }
  write_text(dir / "adapt.json", m.dump(2) + "\n");
  out << m.dump(2) << "\n";
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& base_path, std::optional<std::size_t> episodes,
              std::optional<std::size_t> threads, bool no_time, std::ostream& out) {
  exp::LabConfig cfg = base_config(c);
  const ParamStore base = load_base_for(base_path, c, cfg);
  auto cells = exp::sweep_preset(c.preset.empty() ? "libero-v-toy" : c.preset);
  if (episodes) {
    if (*episodes == 0) throw ContractError("--episodes must be at least 1");
    for (auto& cell : cells) cell.n_episodes = *episodes;
  }
  exp::SweepOptions opts;
  opts.seed = c.seed;
  opts.threads = threads ? *threads : exp::default_threads();
  opts.record_time = !no_time;
  opts.log = [&](const std::string& s) { out << s << std::endl; };
  const fs::path dir = out_dir(c);
  const auto rows = exp::run_sweep(base, cfg, cells, opts);
  exp::save_results_csv(dir / "results.csv", rows);
  nlohmann::json errors = nlohmann::json::object();
  for (const auto& r : rows)
    if (r.failed()) errors[r.cell_id] = r.error;
  write_text(dir / "errors.json", errors.dump(2) + "\n");
  out << "wrote " << (dir / "results.csv").string() << " (" << rows.size() << " cells, "
      << errors.size() << " failed)\n";
  return kOk;
}

int cmd_theory(const Common& c, std::vector<std::string> scenarios, const std::string& base_path,
               std::ostream& out, std::ostream& err) {
  exp::LabConfig cfg = base_config(c);
  if (!c.preset.empty()) throw ContractError("theory has no presets; use --scenario");
  std::optional<ParamStore> base;
  if (!base_path.empty()) base = load_base_for(base_path, c, cfg);
  if (scenarios.empty()) scenarios = exp::theory_scenario_names();
  const fs::path dir = out_dir(c);
  bool failed = false;
  for (const auto& name : scenarios) {
    const auto res = exp::run_theory_scenario(name, cfg, c.seed, base ? &*base : nullptr);
    write_text(dir / ("theory_" + name + ".json"), res.report.dump(2) + "\n");
    out << name << ": " << (res.ok() ? "ok" : "FAILED") << "\n";
    for (const auto& f : res.failures) err << "  " << name << ": " << f << "\n";
    failed = failed || !res.ok();
  }
  return failed ? kTheory : kOk;
}

int cmd_report(const Common& c, const std::string& results, std::ostream& out) {
  exp::ReportOptions opts;
  if (c.preset == "paper-scale") {
    // Full-size vision tower: width 2048, 16 heads, 27 layers.
    vision::EncoderConfig e;
    e.d_model = 2048;
    e.n_heads = 16;
    e.n_layers = 27;
    opts.params_encoder = e;
  } else if (!c.preset.empty() && c.preset != "toy") {
    throw ContractError("unknown report preset '" + c.preset + "' (toy, paper-scale)");
  }
  const auto report = exp::summarize(exp::load_results_csv(results), opts);
  const std::string text = exp::render_report(report);
  out << text;
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c);
    write_text(dir / "report.txt", text);
    write_text(dir / "report.json", exp::report_to_json(report).dump(2) + "\n");
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"one-shot visual adaptation lab"};
  app.require_subcommand(1);

  Common c;
  auto* pretrain = app.add_subcommand("pretrain", "behaviour-clone the base policy");
  add_common(pretrain, c, "(none)");

  std::string base, demo, perturb, adapter, results;
  std::size_t adapt_episodes = 0;
  auto* adapt = app.add_subcommand("adapt", "one-shot adaptation from a single demonstration");
  add_common(adapt, c, "ftm-paper or fla-paper step schedule");
  adapt->add_option("--base", base, "base checkpoint")->required()->check(CLI::ExistingFile);
  auto* demo_opt = adapt->add_option("--demo", demo, "demonstration file")->check(CLI::ExistingFile);
  auto* perturb_opt = adapt->add_option("--perturb", perturb, "record a demo under this perturbation");
  demo_opt->excludes(perturb_opt);
  adapt->add_option("--adapter", adapter, "none, ftm, fla:<r>, prompt:<n>, full-lora:<r>");
  adapt->add_option("--episodes", adapt_episodes, "evaluate zero-shot and adapted policies");

  std::optional<std::size_t> sweep_episodes, threads;
  bool no_time = false;
  auto* sweep = app.add_subcommand("sweep", "benchmark a preset grid of cells");
  add_common(sweep, c, "libero-v-toy (default), orbit-30, smoke");
  sweep->add_option("--base", base, "base checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--episodes", sweep_episodes, "episodes per cell");
  sweep->add_option("--threads", threads, "worker count (default LAB_THREADS or cores)");
  sweep->add_flag("--no-time", no_time, "write 0 wall times for byte-stable output");

  std::vector<std::string> scenarios;
  auto* theory = app.add_subcommand("theory", "run the theory scenarios");
  add_common(theory, c, "(none)");
  theory->add_option("--scenario", scenarios, "planted-spectrum, identity-drift, orbit-30");
  theory->add_option("--base", base, "frozen encoder for orbit-30")->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "summarize a results CSV");
  add_common(report, c, "toy (default) or paper-scale parameter counts");
  report->add_option("--results", results, "results CSV")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(c, out);
    if (*adapt) {
      if (demo.empty() && perturb.empty()) throw ContractError("adapt needs --demo or --perturb");
      return cmd_adapt(c, base, demo, perturb, adapter, adapt_episodes, out);
    }
    if (*sweep) return cmd_sweep(c, base, sweep_episodes, threads, no_time, out);
    if (*theory) return cmd_theory(c, scenarios, base, out, err);
    if (*report) return cmd_report(c, results, out);
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}

}  // namespace lab::cli
