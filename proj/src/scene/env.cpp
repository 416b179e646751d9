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

#include <cmath>
#include <numbers>
#include <sstream>

#include "lab/error.hpp"
#include "lab/scene.hpp"

namespace lab::scene {

namespace {
template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}
}  // namespace

void validate(const PerturbSpec& spec) {
  std::visit(Overloaded{
                 [](const NoPerturb&) {},
                 [](const CameraOrbit& o) {
                   if (!(o.theta > -std::numbers::pi && o.theta <= std::numbers::pi)) {
                     throw ContractError("orbit angle must lie in (-pi, pi]");
                   }
                 },
                 [](const CameraDiscrete&) {},
                 [](const Lighting& l) {
                   if (l.variant < 0 || l.variant > kNumLightingVariants) {
                     throw ContractError("unknown lighting variant " + std::to_string(l.variant));
                   }
                 },
                 [](const Texture& t) {
                   if (t.texture < 0 || t.texture >= kNumTextures) {
                     throw ContractError("unknown texture id " + std::to_string(t.texture));
                   }
                 },
                 [](const Noise& n) {
                   if (n.severity < 1 || n.severity > 10) {
                     throw ContractError("noise severity " + std::to_string(n.severity) +
                                         " outside 1..10");
                   }
                 },
             },
             spec);
}

std::string perturb_family(const PerturbSpec& spec) {
  return std::visit(Overloaded{
                        [](const NoPerturb&) -> std::string { return "none"; },
                        [](const CameraOrbit&) -> std::string { return "camera_orbit"; },
                        [](const CameraDiscrete&) -> std::string { return "camera_discrete"; },
                        [](const Lighting&) -> std::string { return "lighting"; },
                        [](const Texture&) -> std::string { return "texture"; },
                        [](const Noise& n) -> std::string { return to_string(n.family); },
                    },
                    spec);
}

std::string perturb_severity(const PerturbSpec& spec) {
  return std::visit(Overloaded{
                        [](const NoPerturb&) -> std::string { return "0"; },
                        [](const CameraOrbit& o) { return fixed(o.theta * 180.0 / std::numbers::pi, 1); },
                        [](const CameraDiscrete& d) { return to_string(d.level); },
                        [](const Lighting& l) { return std::to_string(l.variant); },
                        [](const Texture& t) { return std::to_string(t.texture); },
                        [](const Noise& n) { return std::to_string(n.severity); },
                    },
                    spec);
}

nlohmann::json perturb_to_json(const PerturbSpec& spec) {
  return std::visit(
      Overloaded{
          [](const NoPerturb&) { return nlohmann::json{{"kind", "none"}}; },
          [](const CameraOrbit& o) { return nlohmann::json{{"kind", "camera_orbit"}, {"theta", o.theta}}; },
          [](const CameraDiscrete& d) {
            return nlohmann::json{{"kind", "camera_discrete"}, {"level", to_string(d.level)}};
          },
          [](const Lighting& l) { return nlohmann::json{{"kind", "lighting"}, {"variant", l.variant}}; },
          [](const Texture& t) { return nlohmann::json{{"kind", "texture"}, {"texture", t.texture}}; },
          [](const Noise& n) {
            return nlohmann::json{{"kind", "noise"}, {"family", to_string(n.family)}, {"severity", n.severity}};
          },
      },
      spec);
}

PerturbSpec perturb_from_json(const nlohmann::json& j) {
  PerturbSpec out;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none") {
      out = NoPerturb{};
    } else if (kind == "camera_orbit") {
      out = CameraOrbit{j.at("theta").get<double>()};
    } else if (kind == "camera_discrete") {
      out = CameraDiscrete{parse_level(j.at("level").get<std::string>())};
    } else if (kind == "lighting") {
      out = Lighting{j.at("variant").get<int>()};
    } else if (kind == "texture") {
      out = Texture{j.at("texture").get<int>()};
    } else if (kind == "noise") {
      out = Noise{parse_noise(j.at("family").get<std::string>()), j.at("severity").get<int>()};
    } else {
      throw ParseError("unknown perturbation kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad perturbation manifest: ") + e.what());
  }
  validate(out);
  return out;
}

Light lighting_variant(int variant) {
  Light l;
  switch (variant) {
    case 0:
      break;
    case 1:
      l.diffuse = {0.75, 0.6, 0.45};
      break;
    case 2:
      l.direction = Vec3(1.0, 0.0, 0.35).normalized();
      l.specular = 0.6;
      break;
    case 3:
      l.diffuse = {0.6, 0.7, 1.0};
      l.direction = Vec3(-0.5, 0.6, 1.0).normalized();
      l.shadows = true;
      break;
    default:
      throw ContractError("unknown lighting variant " + std::to_string(variant));
  }
  return l;
}

void apply_perturb(const PerturbSpec& spec, Scene& scene, CameraPose& camera) {
  validate(spec);
  std::visit(Overloaded{
                 [](const NoPerturb&) {},
                 [&](const CameraOrbit& o) { camera = orbit_camera(camera, Vec3::Zero(), o.theta); },
                 [&](const CameraDiscrete& d) { camera = discrete_pose_perturb(camera, d.level); },
                 [&](const Lighting& l) { scene.light = lighting_variant(l.variant); },
                 [&](const Texture& t) { scene.background_texture_id = t.texture; },
                 [](const Noise&) {},
             },
             spec);
}

void EnvConfig::validate() const {
  if (image_size == 0 || horizon == 0) throw ContractError("image_size and horizon must be positive");
  if (!(step_scale > 0.0) || !(success_threshold > 0.0)) {
    throw ContractError("step_scale and success_threshold must be positive");
  }
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"image_size", c.image_size},
       {"horizon", c.horizon},
       {"step_scale", c.step_scale},
       {"success_threshold", c.success_threshold}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("horizon").get_to(c.horizon);
  j.at("step_scale").get_to(c.step_scale);
  j.at("success_threshold").get_to(c.success_threshold);
}

bool reached(const EnvState& s) {
  return (s.agent - s.scene.target_position).norm() < s.success_threshold - kSuccessMargin;
}

EnvState reset_env(const EpisodeSpec& ep, const EnvConfig& cfg) {
  cfg.validate();
  ep.scene.validate();
  EnvState s;
  s.scene = ep.scene;
  s.task = ep.task;
  s.agent = ep.agent_start;
  s.success_threshold = cfg.success_threshold;
  s.success = reached(s);
  s.done = s.success;
  return s;
}

StepResult step_env(const EnvState& state, const Vec2& action, const EnvConfig& cfg) {
  if (state.done) throw ContractError("step_env called on a finished episode");
  if (!action.allFinite()) throw ContractError("action is not finite");
  StepResult r{state, false, false};
  const Vec2 a = action.cwiseMax(-1.0).cwiseMin(1.0);
  r.state.agent = (state.agent + cfg.step_scale * a).cwiseMax(-1.0).cwiseMin(1.0);
  r.state.step_count += 1;
  r.state.success = reached(r.state);
  r.state.done = r.state.success || r.state.step_count >= cfg.horizon;
  r.done = r.state.done;
  r.success = r.state.success;
  return r;
}

Vec2 expert_action(const Vec2& agent, const Vec2& target, const EnvConfig& cfg) {
  Vec2 a = (target - agent) / cfg.step_scale;
  const double m = a.cwiseAbs().maxCoeff();
  if (m > 1.0) a /= m;
  return a;
}

std::vector<double> expert_chunk(const Vec2& agent, const Vec2& target, std::size_t horizon,
                                 const EnvConfig& cfg) {
  std::vector<double> out;
  Vec2 p = agent;
  for (std::size_t h = 0; h < horizon; ++h) {
    const Vec2 a = expert_action(p, target, cfg);
    out.push_back(a.x());
    out.push_back(a.y());
    p = (p + cfg.step_scale * a).cwiseMax(-1.0).cwiseMin(1.0);
  }
  return out;
}

Scene make_scene(const Vec2& red, const Vec2& blue, std::size_t task) {
  Scene s;
  const bool red_target = task == 0;
  s.target_position = red_target ? red : blue;
  s.target_color = red_target ? kRed : kBlue;
  s.distractor_positions = {red_target ? blue : red};
  s.distractor_colors = {red_target ? kBlue : kRed};
  return s;
}

namespace {
Vec2 uniform_box(Rng& rng, double half) { return {rng.uniform(-half, half), rng.uniform(-half, half)}; }

Vec2 sample_start(Rng& rng, const Vec2& target) {
  for (;;) {
    const Vec2 p = uniform_box(rng, 0.8);
    if ((p - target).norm() >= 0.25) return p;
  }
}
}  // namespace

EpisodeSpec sample_random_episode(Rng& rng, std::size_t task) {
  Vec2 red, blue;
  do {
    red = uniform_box(rng, 0.7);
    blue = uniform_box(rng, 0.7);
  } while ((red - blue).norm() < 0.4);
  EpisodeSpec ep;
  ep.task = task;
  ep.scene = make_scene(red, blue, ep.task);
  ep.agent_start = sample_start(rng, ep.scene.target_position);
  return ep;
}

CellLayout sample_cell_layout(Rng& rng, std::size_t task) {
  const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
  const double b = a + rng.uniform(std::numbers::pi / 3, 5 * std::numbers::pi / 3);
  const double ra = rng.uniform(0.4, 0.6), rb = rng.uniform(0.4, 0.6);
  CellLayout l;
  l.red = {ra * std::cos(a), ra * std::sin(a)};
  l.blue = {rb * std::cos(b), rb * std::sin(b)};
  l.task = task;
  return l;
}

EpisodeSpec sample_cell_episode(const CellLayout& layout, Rng& rng, double jitter) {
  EpisodeSpec ep;
  ep.task = layout.task;
  const Vec2 red = layout.red + uniform_box(rng, jitter);
  const Vec2 blue = layout.blue + uniform_box(rng, jitter);
  ep.scene = make_scene(red, blue, layout.task);
  ep.agent_start = sample_start(rng, ep.scene.target_position);
  return ep;
}

Observer::Observer(EnvConfig cfg, PerturbSpec spec, std::uint64_t noise_seed, CameraPose camera)
    : cfg_(cfg), spec_(spec), noise_seed_(noise_seed), camera_(camera) {
  cfg_.validate();
  validate(spec_);
}

Image Observer::observe(const Scene& scene) const {
  Scene s = scene;
  CameraPose c = camera_;
  apply_perturb(spec_, s, c);
  Image img = render(s, c, cfg_.image_size);
  if (const auto* n = std::get_if<Noise>(&spec_)) img = apply_noise(img, n->family, n->severity, noise_seed_);
  return img;
}

}  // namespace lab::scene
