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

#include <Eigen/Geometry>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lab/image.hpp"
#include "lab/rng.hpp"

namespace lab::scene {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

struct Light {
  Vec3 diffuse{1.0, 1.0, 1.0};
  Vec3 direction = Vec3(0.3, 0.2, 1.0).normalized();  // towards the light
  double specular = 0.0;
  bool shadows = false;
};

struct Scene {
  Vec2 target_position{0.5, 0.0};
  std::vector<Vec2> distractor_positions;
  Vec3 target_color{0.9, 0.15, 0.1};
  std::vector<Vec3> distractor_colors;
  int background_texture_id = 0;
  Light light;

  // Throws ContractError on out-of-bounds positions or a non-unit light.
  void validate() const;
};

inline constexpr double kObjectRadius = 0.14;
inline constexpr double kAmbient = 0.3;
inline constexpr int kNumTextures = 5;

// Camera-to-world rotation; camera axes are x right, y down, z forward.
struct CameraPose {
  Vec3 position{1.4, 0.0, 1.6};
  Quat orientation = Quat::Identity();
  double fov_y = 1.0471975511965976;  // 60 degrees

  Vec3 forward() const { return orientation * Vec3::UnitZ(); }
  void validate() const;
};

// Pose at `position` whose optical axis passes through `target`.
CameraPose look_at(const Vec3& position, const Vec3& target);
// The source-domain camera: orbital angle 0, looking at the workspace centre.
CameraPose default_camera();

// Moves the camera to orbital angle theta (absolute, about p_eef) at the
// same radius and height, rotating the orientation by R_z(theta - theta0).
CameraPose orbit_camera(const CameraPose& pose, const Vec3& p_eef, double theta);
Vec3 orbit_position(const Vec3& p_cam, const Vec3& p_eef, double theta);

enum class Level { kSmall, kMedium, kLarge };
struct LevelMagnitude {
  double angle;  // radians
  double lift;   // translation along +z
};
LevelMagnitude level_magnitude(Level level);
std::string to_string(Level level);
Level parse_level(const std::string& s);

// Relative orbit by the level's angle about p_eef followed by a lift.
CameraPose discrete_pose_perturb(const CameraPose& pose, Level level, const Vec3& p_eef = Vec3::Zero());

// Rotation angle (radians) taking orientation a to b.
double rotation_angle(const Quat& a, const Quat& b);

Image render(const Scene& scene, const CameraPose& camera, std::size_t image_size);

// ---- noise ----------------------------------------------------------------

enum class NoiseFamily { kMotionBlur, kGaussianBlur, kZoomBlur, kFog, kGlassBlur };
inline constexpr NoiseFamily kAllNoise[] = {NoiseFamily::kMotionBlur, NoiseFamily::kGaussianBlur,
                                            NoiseFamily::kZoomBlur, NoiseFamily::kFog,
                                            NoiseFamily::kGlassBlur};
std::string to_string(NoiseFamily f);
NoiseFamily parse_noise(const std::string& s);

// Severity 0 is the identity; 1..10 are the documented corruption levels.
Image apply_noise(const Image& image, NoiseFamily family, int severity, std::uint64_t seed = 0);

Image gaussian_blur(const Image& image, double sigma);

// ---- perturbations --------------------------------------------------------

struct NoPerturb {
  friend bool operator==(const NoPerturb&, const NoPerturb&) = default;
};
struct CameraOrbit {
  double theta = 0.0;
  friend bool operator==(const CameraOrbit&, const CameraOrbit&) = default;
};
struct CameraDiscrete {
  Level level = Level::kSmall;
  friend bool operator==(const CameraDiscrete&, const CameraDiscrete&) = default;
};
struct Lighting {
  int variant = 1;
  friend bool operator==(const Lighting&, const Lighting&) = default;
};
struct Texture {
  int texture = 2;
  friend bool operator==(const Texture&, const Texture&) = default;
};
struct Noise {
  NoiseFamily family = NoiseFamily::kGaussianBlur;
  int severity = 1;
  friend bool operator==(const Noise&, const Noise&) = default;
};

using PerturbSpec = std::variant<NoPerturb, CameraOrbit, CameraDiscrete, Lighting, Texture, Noise>;

void validate(const PerturbSpec& spec);
// Short family name for result tables: none, camera_orbit, camera_discrete,
// lighting, texture, or the noise family.
std::string perturb_family(const PerturbSpec& spec);
// Magnitude column: degrees, level name, variant/texture id or severity.
std::string perturb_severity(const PerturbSpec& spec);
nlohmann::json perturb_to_json(const PerturbSpec& spec);
PerturbSpec perturb_from_json(const nlohmann::json& j);

inline constexpr int kNumLightingVariants = 3;
Light lighting_variant(int variant);

// Geometry-only changes go to the camera, appearance changes to the scene;
// noise is applied after rendering.
void apply_perturb(const PerturbSpec& spec, Scene& scene, CameraPose& camera);

// ---- environment ----------------------------------------------------------

struct EnvConfig {
  std::size_t image_size = 32;
  std::size_t horizon = 12;
  double step_scale = 0.15;
  double success_threshold = 0.1;

  void validate() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

// Distances this far below the threshold count as reached; absorbs the
// rounding of repeated step additions.
inline constexpr double kSuccessMargin = 1e-9;

struct EpisodeSpec {
  Scene scene;
  std::size_t task = 0;
  Vec2 agent_start{0.0, 0.0};
};

struct EnvState {
  Scene scene;
  std::size_t task = 0;
  Vec2 agent{0.0, 0.0};
  std::size_t step_count = 0;
  double success_threshold = 0.1;
  bool done = false;
  bool success = false;
};

struct StepResult {
  EnvState state;
  bool done = false;
  bool success = false;
};

bool reached(const EnvState& s);
EnvState reset_env(const EpisodeSpec& ep, const EnvConfig& cfg);
// Moves by clamp(action, -1, 1) * step_scale and clips to the workspace.
StepResult step_env(const EnvState& state, const Vec2& action, const EnvConfig& cfg);

// Straight-line expert: (target - agent) / step_scale, scaled down so its
// largest component is at most 1.
Vec2 expert_action(const Vec2& agent, const Vec2& target, const EnvConfig& cfg);
// H expert actions starting from `agent`, as a row-major [H x 2] list.
std::vector<double> expert_chunk(const Vec2& agent, const Vec2& target, std::size_t horizon,
                                 const EnvConfig& cfg);

inline const Vec3 kRed{0.9, 0.15, 0.1};
inline const Vec3 kBlue{0.1, 0.25, 0.9};

// Task 0 reaches the red disc, task 1 the blue one.
Scene make_scene(const Vec2& red, const Vec2& blue, std::size_t task);

// Uniform layout over the workspace.
EpisodeSpec sample_random_episode(Rng& rng, std::size_t task = 0);

// A fixed object layout; episodes jitter the objects slightly and draw a
// fresh agent start.
struct CellLayout {
  Vec2 red;
  Vec2 blue;
  std::size_t task = 0;
};
// Discs on a ring of radius 0.4-0.6 about the centre, at least 60 degrees
// apart. Pretraining and every evaluation cell draw from this family.
CellLayout sample_cell_layout(Rng& rng, std::size_t task = 0);
EpisodeSpec sample_cell_episode(const CellLayout& layout, Rng& rng, double jitter = 0.03);

// Renders what the policy sees: perturbed scene and camera, then noise.
class Observer {
 public:
  Observer(EnvConfig cfg, PerturbSpec spec, std::uint64_t noise_seed = 0,
           CameraPose camera = default_camera());
  Image observe(const Scene& scene) const;
  const EnvConfig& config() const { return cfg_; }
  const PerturbSpec& spec() const { return spec_; }

 private:
  EnvConfig cfg_;
  PerturbSpec spec_;
  std::uint64_t noise_seed_;
  CameraPose camera_;
};

}  // namespace lab::scene
