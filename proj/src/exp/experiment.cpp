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

#include "lab/experiment.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "lab/checkpoint.hpp"
#include "lab/error.hpp"

namespace lab::exp {

namespace {

// Stream ids under the root seed of a sweep.
constexpr std::uint64_t kLayoutStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kDemoStream = 3;
constexpr std::uint64_t kAdaptStream = 4;

struct Episode {
  scene::EpisodeSpec spec;
  Image image;
};

Tensor take_rows(const Tensor& batch, const std::vector<std::size_t>& rows) {
  Shape shape = batch.shape();
  const std::size_t stride = batch.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(batch.data().begin() + rows[i] * stride, batch.data().begin() + (rows[i] + 1) * stride,
              out.data().begin() + i * stride);
  }
  return out;
}

using ChunkFn = std::function<Tensor(const std::vector<std::size_t>& active,
                                     const std::vector<scene::EnvState>& states)>;

// Steps every episode until done, asking `chunks` for [B x H x 2] action
// chunks of the still-running episodes and executing execute_steps of each.
EvalResult run_episodes(const LabConfig& cfg, const std::vector<Episode>& episodes,
                        const ChunkFn& chunks) {
  std::vector<scene::EnvState> states;
  for (const auto& e : episodes) states.push_back(scene::reset_env(e.spec, cfg.env));
  const std::size_t h = cfg.model.policy.horizon;
  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < states.size(); ++i)
      if (!states[i].done) active.push_back(i);
    if (active.empty()) break;
    const Tensor a = chunks(active, states);
    for (std::size_t b = 0; b < active.size(); ++b) {
      scene::EnvState& s = states[active[b]];
      for (std::size_t k = 0; k < cfg.eval.execute_steps && !s.done; ++k) {
        const scene::Vec2 act(a[(b * h + k) * 2], a[(b * h + k) * 2 + 1]);
        if (!act.allFinite()) throw NumericError("policy produced a non-finite action");
        s = scene::step_env(s, act, cfg.env).state;
      }
    }
  }
  EvalResult r;
  r.episodes = states.size();
  for (const auto& s : states) r.successes += s.success ? 1 : 0;
  return r;
}

EvalResult policy_rollout(const ParamStore& store, const LabConfig& cfg,
                          const std::vector<Episode>& episodes, Rng& act_rng) {
  std::vector<Image> images;
  for (const auto& e : episodes) images.push_back(e.image);
  Tensor prefix;
  {
    ad::Tape tape;
    prefix = policy::visual_prefix(tape, store, cfg.model, images).value();
  }
  return run_episodes(cfg, episodes, [&](const std::vector<std::size_t>& active,
                                         const std::vector<scene::EnvState>& states) {
    Tensor st({active.size(), 2});
    std::vector<std::size_t> tasks;
    for (std::size_t b = 0; b < active.size(); ++b) {
      st.at(b, 0) = states[active[b]].agent.x();
      st.at(b, 1) = states[active[b]].agent.y();
      tasks.push_back(states[active[b]].task);
    }
    return policy::sample_actions(store, cfg.model, take_rows(prefix, active), tasks, st, act_rng);
  });
}

std::vector<Episode> cell_episodes(const LabConfig& cfg, const scene::PerturbSpec& spec,
                                   const scene::CellLayout& layout, std::size_t n,
                                   const Rng& root) {
  std::vector<Episode> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = root.fork(i);
    Episode e;
    e.spec = scene::sample_cell_episode(layout, r, cfg.eval.jitter);
    const scene::Observer obs(cfg.env, spec, r.next_u64());
    e.image = obs.observe(e.spec.scene);
    out.push_back(std::move(e));
  }
  return out;
}

// Pretraining states: half uniform over the reachable square, half on the
// expert's path from the episode start with a small offset.
scene::Vec2 pretrain_state(const scene::EpisodeSpec& ep, const scene::EnvConfig& env, Rng& rng) {
  if (rng.uniform() < 0.5) return {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
  scene::Vec2 a = ep.agent_start;
  const scene::Vec2& t = ep.scene.target_position;
  const std::uint64_t k = rng.below(env.horizon);
  for (std::uint64_t i = 0; i < k; ++i) {
    a = (a + env.step_scale * scene::expert_action(a, t, env)).cwiseMax(-1.0).cwiseMin(1.0);
  }
  a += scene::Vec2(rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03));
  return a.cwiseMax(-1.0).cwiseMin(1.0);
}

policy::Transition labelled(const Image& image, std::size_t task, const scene::Vec2& agent,
                            const scene::Vec2& target, const LabConfig& cfg) {
  policy::Transition t;
  t.image = image;
  t.task = task;
  t.state = Tensor({2}, {agent.x(), agent.y()});
  const std::size_t h = cfg.model.policy.horizon;
  t.actions = Tensor({h, 2}, scene::expert_chunk(agent, target, h, cfg.env));
  return t;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

EvalResult evaluate(const ParamStore& store, const LabConfig& cfg, const scene::PerturbSpec& spec,
                    const scene::CellLayout& layout, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw ContractError("evaluate needs at least one episode");
  scene::validate(spec);
  const Rng root(seed);
  const auto eps = cell_episodes(cfg, spec, layout, episodes, root.fork(0));
  Rng act = root.fork(1);
  return policy_rollout(store, cfg, eps, act);
}

EvalResult evaluate_expert(const LabConfig& cfg, const scene::PerturbSpec& spec,
                           const scene::CellLayout& layout, std::size_t episodes,
                           std::uint64_t seed) {
  const auto eps = cell_episodes(cfg, spec, layout, episodes, Rng(seed).fork(0));
  const std::size_t h = cfg.model.policy.horizon;
  return run_episodes(cfg, eps, [&](const std::vector<std::size_t>& active,
                                    const std::vector<scene::EnvState>& states) {
    Tensor out({active.size(), h, 2});
    for (std::size_t b = 0; b < active.size(); ++b) {
      const auto& s = states[active[b]];
      const auto c = scene::expert_chunk(s.agent, s.scene.target_position, h, cfg.env);
      std::copy(c.begin(), c.end(), out.data().begin() + b * h * 2);
    }
    return out;
  });
}

PretrainResult pretrain(const LabConfig& cfg, std::uint64_t seed, const LogFn& log) {
  cfg.validate();
  const PretrainConfig& pc = cfg.pretrain;
  const Rng root(seed);
  Rng init = root.fork(0), data = root.fork(1), noise = root.fork(2);
  PretrainResult res;
  policy::init_model(res.store, cfg.model, init);
  const scene::Observer source(cfg.env, scene::NoPerturb{});
  const std::size_t n_tok = cfg.model.encoder.num_patches(), d = cfg.model.width();

  std::vector<policy::Transition> batch;
  train::StepLoss loss = [&](ad::Tape& tape, const ParamStore& s, std::size_t) {
    batch.clear();
    std::vector<Image> images;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < pc.images_per_batch; ++i) {
      const auto layout = scene::sample_cell_layout(data);
      const auto ep = scene::sample_cell_episode(layout, data, cfg.eval.jitter);
      images.push_back(source.observe(ep.scene));
      for (std::size_t j = 0; j < pc.states_per_image; ++j) {
        batch.push_back(labelled(images.back(), ep.task, pretrain_state(ep, cfg.env, data),
                                 ep.scene.target_position, cfg));
        rows.push_back(i);
      }
    }
    std::vector<const policy::Transition*> ptrs;
    for (const auto& t : batch) ptrs.push_back(&t);
    // Encode each image once and repeat its tokens for every state.
    ad::Var tokens = policy::visual_prefix(tape, s, cfg.model, images);
    tokens = ad::reshape(tokens, {images.size(), n_tok * d});
    tokens = ad::reshape(ad::gather_rows(tokens, rows), {rows.size(), n_tok, d});
    return policy::policy_loss(tape, s, cfg.model, tokens, ptrs, noise).total;
  };

  double window = 0.0;
  train::TrainOptions o;
  o.steps = pc.max_steps;
  o.schedule = {pc.warmup_steps, pc.max_steps, pc.peak_lr, pc.min_lr};
  o.stop = [&](std::size_t done) {
    if (done % pc.eval_every != 0) return false;
    const Rng er = root.fork(3).fork(done);
    std::vector<Episode> eps;
    for (std::size_t i = 0; i < pc.eval_episodes; ++i) {
      Rng r = er.fork(i);
      Episode e;
      e.spec = scene::sample_cell_episode(scene::sample_cell_layout(r), r, cfg.eval.jitter);
      e.image = source.observe(e.spec.scene);
      eps.push_back(std::move(e));
    }
    Rng act = root.fork(4).fork(done);
    const double rate = policy_rollout(res.store, cfg, eps, act).success_rate();
    res.evals.push_back({done, rate});
    if (log) {
      log("pretrain step " + std::to_string(done) + " loss " +
          fmt(window / static_cast<double>(pc.eval_every), 4) + " source success " +
          fmt(rate, 3));
    }
    window = 0.0;
    res.reached_target = rate >= pc.target_success;
    return res.reached_target;
  };
  res.loss_trace = train::train_loop(res.store, loss, o, [&](std::size_t, double l) { window += l; });
  if (!res.reached_target) {
    const double last = res.evals.empty() ? 0.0 : res.evals.back().success_rate;
    throw TrainingError("pretraining stopped at the step cap " + std::to_string(pc.max_steps) +
                        " with source success " + fmt(last, 3) + " < " +
                        fmt(pc.target_success, 3) +
                        "; raise [pretrain] max_steps or images_per_batch");
  }
  return res;
}

Checkpoint base_checkpoint(const ParamStore& store, const LabConfig& cfg) {
  Checkpoint c = checkpoint_from(store);
  c.meta = {{"kind", "base"}, {"config", config_to_json(cfg)}};
  nlohmann::json model;
  to_json(model, cfg.model);
  c.meta["model"] = model;
  return c;
}

ParamStore load_base(const Checkpoint& ckpt, policy::ModelConfig* model) {
  if (ckpt.is_delta() || ckpt.meta.value("kind", "") != "base") {
    throw ParseError("checkpoint is not a base checkpoint");
  }
  ParamStore store;
  apply_checkpoint(ckpt, store);
  if (model) {
    try {
      from_json(ckpt.meta.at("model"), *model);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("base checkpoint model config: ") + e.what());
    }
  }
  return store;
}

Demonstration make_demo(const LabConfig& cfg, const scene::PerturbSpec& spec,
                        const scene::CellLayout& layout, std::uint64_t seed) {
  scene::validate(spec);
  Rng r(seed);
  const auto ep = scene::sample_cell_episode(layout, r, cfg.eval.jitter);
  const scene::Observer obs(cfg.env, spec, r.next_u64());
  const Image image = obs.observe(ep.scene);
  Demonstration demo;
  demo.perturb = spec;
  scene::EnvState s = scene::reset_env(ep, cfg.env);
  const scene::Vec2& target = ep.scene.target_position;
  while (!s.done) {
    demo.steps.push_back(labelled(image, ep.task, s.agent, target, cfg));
    s = scene::step_env(s, scene::expert_action(s.agent, target, cfg.env), cfg.env).state;
  }
  if (demo.steps.empty()) throw ContractError("demo episode starts on the target");
  return demo;
}

void save_demo(const std::filesystem::path& path, const Demonstration& demo) {
  if (demo.steps.empty()) throw ContractError("cannot save an empty demonstration");
  const auto& first = demo.steps.front();
  const std::size_t n = demo.steps.size(), hgt = first.image.height, wid = first.image.width;
  const std::size_t h = first.actions.dim(0), da = first.actions.dim(1), ds = first.state.size();
  Tensor images({n, hgt, wid, 3}), states({n, ds}), actions({n, h, da}), tasks({n});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = demo.steps[i];
    if (t.image.height != hgt || t.image.width != wid || t.actions.shape() != first.actions.shape() ||
        t.state.size() != ds) {
      throw ShapeError("demonstration steps have inconsistent shapes");
    }
    std::copy(t.image.pixels.begin(), t.image.pixels.end(),
              images.data().begin() + i * hgt * wid * 3);
    std::copy(t.state.data().begin(), t.state.data().end(), states.data().begin() + i * ds);
    std::copy(t.actions.data().begin(), t.actions.data().end(),
              actions.data().begin() + i * h * da);
    tasks[i] = static_cast<double>(t.task);
  }
  Checkpoint c;
  c.arrays = {{"demo/images", images}, {"demo/states", states}, {"demo/actions", actions},
              {"demo/tasks", tasks}};
  c.meta = {{"kind", "demo"}, {"perturb", scene::perturb_to_json(demo.perturb)}};
  save_checkpoint(path, c);
}

Demonstration load_demo(const std::filesystem::path& path) {
  const Checkpoint c = load_checkpoint(path);
  if (c.meta.value("kind", "") != "demo") throw ParseError(path.string() + " is not a demo file");
  Demonstration demo;
  try {
    demo.perturb = scene::perturb_from_json(c.meta.at("perturb"));
    const Tensor& images = c.arrays.at("demo/images");
    const Tensor& states = c.arrays.at("demo/states");
    const Tensor& actions = c.arrays.at("demo/actions");
    const Tensor& tasks = c.arrays.at("demo/tasks");
    const std::size_t n = images.dim(0), hgt = images.dim(1), wid = images.dim(2);
    if (states.dim(0) != n || actions.dim(0) != n || tasks.size() != n || images.dim(3) != 3) {
      throw ParseError("demo arrays disagree on the number of steps");
    }
    const std::size_t ds = states.dim(1), h = actions.dim(1), da = actions.dim(2);
    for (std::size_t i = 0; i < n; ++i) {
      policy::Transition t;
      t.image = Image(hgt, wid);
      std::copy(images.data().begin() + i * hgt * wid * 3,
                images.data().begin() + (i + 1) * hgt * wid * 3, t.image.pixels.begin());
      t.state = Tensor({ds});
      std::copy(states.data().begin() + i * ds, states.data().begin() + (i + 1) * ds,
                t.state.data().begin());
      t.actions = Tensor({h, da});
      std::copy(actions.data().begin() + i * h * da, actions.data().begin() + (i + 1) * h * da,
                t.actions.data().begin());
      t.task = static_cast<std::size_t>(tasks[i]);
      demo.steps.push_back(std::move(t));
    }
  } catch (const std::out_of_range&) {
    throw ParseError(path.string() + ": demo file is missing an array");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (demo.steps.empty()) throw ParseError(path.string() + ": empty demonstration");
  return demo;
}

std::uint64_t demo_seed(std::uint64_t seed, const scene::PerturbSpec& spec) {
  return Rng(seed).fork(kDemoStream).fork(fnv1a(scene::perturb_to_json(spec).dump())).next_u64();
}

Rng adapt_stream(std::uint64_t seed, std::size_t index) {
  return Rng(seed).fork(kAdaptStream).fork(index);
}

std::uint64_t eval_seed(std::uint64_t seed) { return Rng(seed).fork(kEvalStream).next_u64(); }

scene::CellLayout sweep_layout(std::uint64_t seed) {
  Rng r = Rng(seed).fork(kLayoutStream);
  return scene::sample_cell_layout(r);
}

ResultRow run_cell(const ParamStore& base, const LabConfig& cfg, const ExperimentCell& cell,
                   std::size_t index, const SweepOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  ResultRow row;
  row.cell_id = cell.id;
  row.adapter = cell.adapter.to_string();
  row.perturb = scene::perturb_family(cell.perturb);
  row.severity = scene::perturb_severity(cell.perturb);
  row.episodes = cell.n_episodes;
  try {
    if (cell.n_episodes == 0) throw ContractError("cell " + cell.id + " has no episodes");
    const auto expert = policy::expert_linear_layers(cfg.model);
    row.trainable_params = adapters::count_trainable(cell.adapter, cfg.model.encoder, expert);
    ParamStore store = base;
    const scene::CellLayout layout = sweep_layout(opts.seed);
    if (cell.adapter.type != adapters::AdapterType::kNone) {
      const Demonstration demo = make_demo(cfg, cell.perturb, layout, demo_seed(opts.seed, cell.perturb));
      Rng own = adapt_stream(opts.seed, index);
      train::prepare_adapter(store, cfg.model, cell.adapter, own);
      train::AdaptConfig acfg = cfg.adapt;
      acfg.adapter = cell.adapter;
      acfg.seed = own.next_u64();
      train::one_shot_adapt(store, cfg.model, demo.steps, acfg);
      row.adapt_steps = acfg.steps;
    }
    const EvalResult ev = evaluate(store, cfg, cell.perturb, layout, cell.n_episodes,
                                   eval_seed(opts.seed));
    row.successes = ev.successes;
    row.success_rate = ev.success_rate();
  } catch (const Error& e) {
    row.error = e.what();
  }
  if (opts.record_time) {
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return row;
}

std::vector<ResultRow> run_sweep(const ParamStore& base, const LabConfig& cfg,
                                 const std::vector<ExperimentCell>& cells,
                                 const SweepOptions& opts) {
  cfg.validate();
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (cells[i].id == cells[j].id) throw ContractError("duplicate cell id " + cells[i].id);
  std::vector<ResultRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      rows[i] = run_cell(base, cfg, cells[i], i, opts);
      if (opts.log) {
        const std::lock_guard<std::mutex> lock(log_mu);
        const ResultRow& r = rows[i];
        opts.log("cell " + r.cell_id + (r.failed() ? " failed: " + r.error
                                                   : " success " + fmt(r.success_rate, 3)));
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opts.threads, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

namespace {

ExperimentCell make_cell(const adapters::AdapterKind& a, const scene::PerturbSpec& p,
                         std::size_t episodes = 50) {
  ExperimentCell c;
  c.adapter = a;
  c.perturb = p;
  c.n_episodes = episodes;
  c.id = scene::perturb_family(p) + ":" + scene::perturb_severity(p) + "/" + a.to_string();
  return c;
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

scene::PerturbSpec parse_perturb(const std::string& text) {
  const auto colon = text.find(':');
  const std::string family = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto number = [&]() {
    double v = 0.0;
    const auto r = std::from_chars(arg.data(), arg.data() + arg.size(), v);
    if (arg.empty() || r.ec != std::errc() || r.ptr != arg.data() + arg.size()) {
      throw ParseError("perturbation '" + text + "' needs a numeric severity");
    }
    return v;
  };
  auto integer = [&]() {
    const double v = number();
    if (v != std::floor(v)) throw ParseError("perturbation '" + text + "' needs an integer severity");
    return static_cast<int>(v);
  };
  scene::PerturbSpec out;
  if (family == "none") {
    if (!arg.empty() && arg != "0") throw ParseError("perturbation 'none' takes no severity");
    out = scene::NoPerturb{};
  } else if (family == "camera_orbit") {
    out = scene::CameraOrbit{deg(number())};
  } else if (family == "camera_discrete") {
    out = scene::CameraDiscrete{scene::parse_level(arg)};
  } else if (family == "lighting") {
    out = scene::Lighting{integer()};
  } else if (family == "texture") {
    out = scene::Texture{integer()};
  } else {
    out = scene::Noise{scene::parse_noise(family), integer()};
  }
  scene::validate(out);
  return out;
}

std::vector<std::string> sweep_preset_names() { return {"libero-v-toy", "orbit-30", "smoke"}; }

std::vector<ExperimentCell> sweep_preset(const std::string& name) {
  using adapters::AdapterKind;
  std::vector<ExperimentCell> out;
  if (name == "orbit-30") {
    out.push_back(make_cell(AdapterKind::none(), scene::NoPerturb{}));
    for (const auto& a : {AdapterKind::none(), AdapterKind::ftm(), AdapterKind::fla(16)})
      out.push_back(make_cell(a, scene::CameraOrbit{deg(30)}));
    return out;
  }
  if (name == "libero-v-toy") {
    std::vector<scene::PerturbSpec> ps;
    for (double t : {10.0, 25.0, 40.0}) ps.push_back(scene::CameraOrbit{deg(t)});
    for (auto l : {scene::Level::kSmall, scene::Level::kMedium, scene::Level::kLarge})
      ps.push_back(scene::CameraDiscrete{l});
    for (int v = 1; v <= scene::kNumLightingVariants; ++v) ps.push_back(scene::Lighting{v});
    for (int t : {1, 2, 3}) ps.push_back(scene::Texture{t});
    for (auto f : scene::kAllNoise)
      for (int s : {3, 6, 9}) ps.push_back(scene::Noise{f, s});
    out.push_back(make_cell(AdapterKind::none(), scene::NoPerturb{}));
    for (const auto& p : ps)
      for (const auto& a : {AdapterKind::none(), AdapterKind::ftm(), AdapterKind::fla(16)})
        out.push_back(make_cell(a, p));
    return out;
  }
  if (name == "smoke") {
    out.push_back(make_cell(AdapterKind::none(), scene::NoPerturb{}, 4));
    out.push_back(make_cell(AdapterKind::ftm(), scene::CameraOrbit{deg(30)}, 4));
    out.push_back(make_cell(AdapterKind::fla(2), scene::Lighting{1}, 4));
    return out;
  }
  throw ContractError("unknown sweep preset '" + name + "'");
}

std::size_t default_threads() {
  if (const char* env = std::getenv("LAB_THREADS")) {
    const std::string s(env);
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || v <= 0) {
      throw ContractError("LAB_THREADS must be a positive integer, got '" + s + "'");
    }
    return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace lab::exp
