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

#include "lab/scene.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lab/error.hpp"

namespace lab::scene {
namespace {

constexpr double kPi = std::numbers::pi;

CameraPose pose_at(const Vec3& p) { return look_at(p, Vec3::Zero()); }

// Distance from the workspace centre to the optical axis.
double axis_miss(const CameraPose& c) {
  const Vec3 f = c.forward();
  const Vec3 to_center = -c.position;
  return (to_center - to_center.dot(f) * f).norm();
}

TEST(OrbitTest, Examples) {
  const CameraPose p = pose_at({1, 0, 2});
  const CameraPose q = orbit_camera(p, Vec3::Zero(), kPi / 2);
  EXPECT_NEAR(q.position.x(), 0.0, 1e-15);
  EXPECT_NEAR(q.position.y(), 1.0, 1e-15);
  EXPECT_EQ(q.position.z(), 2.0);

  const CameraPose same = orbit_camera(p, Vec3::Zero(), 0.0);
  EXPECT_EQ(same.position, p.position);
  EXPECT_NEAR(rotation_angle(same.orientation, p.orientation), 0.0, 1e-12);

  const CameraPose wrap = orbit_camera(p, Vec3::Zero(), 2 * kPi);
  EXPECT_NEAR((wrap.position - same.position).norm(), 0.0, 1e-12);
}

TEST(OrbitTest, CameraAboveEefIsRejected) {
  CameraPose p = default_camera();
  p.position = {0.0, 0.0, 2.0};
  EXPECT_THROW(orbit_camera(p, Vec3::Zero(), 0.3), ContractError);
}

TEST(OrbitTest, FuzzIsometryUnitNormAndAxis) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 eef{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 0.0};
    const double r = rng.uniform(0.5, 2.0), phi = rng.uniform(-kPi, kPi);
    const Vec3 cam{eef.x() + r * std::cos(phi), eef.y() + r * std::sin(phi), rng.uniform(0.5, 2.5)};
    const CameraPose p = look_at(cam, eef);
    const double theta = rng.uniform(-kPi, kPi);
    const CameraPose q = orbit_camera(p, eef, theta);
    const double r0 = (p.position.head<2>() - eef.head<2>()).norm();
    const double r1 = (q.position.head<2>() - eef.head<2>()).norm();
    ASSERT_NEAR(r1, r0, 1e-12);
    ASSERT_EQ(q.position.z(), p.position.z());
    ASSERT_NEAR(q.orientation.norm(), 1.0, 1e-9);
    // Optical axis keeps passing through the orbit centre.
    const Vec3 f = q.forward(), d = eef - q.position;
    ASSERT_NEAR((d - d.dot(f) * f).norm(), 0.0, 1e-9);
  }
}

TEST(DiscreteLevelTest, AnglesAndOrdering) {
  const CameraPose p = default_camera();
  const double expect[] = {10.0, 25.0, 40.0};
  double prev_angle = 0.0, prev_shift = -1.0;
  int i = 0;
  for (Level l : {Level::kSmall, Level::kMedium, Level::kLarge}) {
    const CameraPose q = discrete_pose_perturb(p, l);
    const double deg = rotation_angle(p.orientation, q.orientation) * 180.0 / kPi;
    EXPECT_NEAR(deg, expect[i++], 1e-9);
    const double shift = (q.position - p.position).norm();
    EXPECT_GT(deg, prev_angle);
    EXPECT_GT(shift, prev_shift);
    EXPECT_NEAR(q.orientation.norm(), 1.0, 1e-9);
    EXPECT_LT(axis_miss(q), 0.2);
    prev_angle = deg;
    prev_shift = shift;
  }
  EXPECT_EQ(level_magnitude(Level::kSmall).lift, 0.0);
  EXPECT_EQ(level_magnitude(Level::kLarge).lift, 0.10);
}

TEST(DiscreteLevelTest, NotIdempotent) {
  const CameraPose p = default_camera();
  for (Level l : {Level::kSmall, Level::kMedium, Level::kLarge}) {
    const CameraPose once = discrete_pose_perturb(p, l);
    const CameraPose twice = discrete_pose_perturb(once, l);
    EXPECT_GT((twice.position - once.position).norm(), 1e-3);
  }
}

TEST(DiscreteLevelTest, ParseRoundTrip) {
  for (Level l : {Level::kSmall, Level::kMedium, Level::kLarge}) EXPECT_EQ(parse_level(to_string(l)), l);
  EXPECT_THROW(parse_level("huge"), ParseError);
}

TEST(RenderTest, EmptyWhiteSceneUnderOverheadLightIsUniform) {
  Scene s;
  s.target_position = {0.0, 0.0};
  s.target_color = {1.0, 1.0, 1.0};
  s.background_texture_id = 1;
  s.light.diffuse = {1, 1, 1};
  s.light.direction = {0, 0, 1};
  // The target has the ground colour and lies flat, so the image carries no objects.
  const Image img = render(s, default_camera(), 32);
  ASSERT_EQ(img.height, 32u);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(img.at(y, x, c), img.at(0, 0, c));
    }
  }
}

// Mean pixel coordinates where the red channel dominates.
std::pair<double, double> red_centroid(const Image& img) {
  double sx = 0, sy = 0, n = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      if (r > 0.35 && r > 2.0 * g && r > 2.0 * b) {
        sx += x;
        sy += y;
        n += 1;
      }
    }
  }
  EXPECT_GT(n, 0.0);
  return {sx / n, sy / n};
}

TEST(RenderTest, CentroidTracksTargetMonotonically) {
  // The default camera sits on +x looking back at the origin, so +x in the
  // workspace is towards the camera, which is down the image.
  Scene s;
  s.background_texture_id = 1;
  double prev = -1.0;
  for (double x = -0.5; x <= 0.5 + 1e-9; x += 0.1) {
    s.target_position = {x, 0.0};
    const auto [cx, cy] = red_centroid(render(s, default_camera(), 64));
    EXPECT_GT(cy, prev) << "x=" << x;
    EXPECT_NEAR(cx, 31.5, 1.0);
    prev = cy;
  }
}

TEST(RenderTest, DeterministicAndInRange) {
  Rng rng(3);
  const EpisodeSpec ep = sample_random_episode(rng);
  for (int tex = 0; tex < kNumTextures; ++tex) {
    Scene s = ep.scene;
    s.background_texture_id = tex;
    s.light = lighting_variant(3);
    const Image a = render(s, default_camera(), 32);
    const Image b = render(s, default_camera(), 32);
    EXPECT_TRUE(a.bit_equal(b));
    for (double v : a.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(RenderTest, TargetBehindCameraIsRejected) {
  CameraPose c = default_camera();
  c.orientation = Quat(Eigen::AngleAxisd(kPi, Vec3::UnitY())) * c.orientation;
  EXPECT_THROW(render(Scene{}, c, 16), RenderError);
}

TEST(SceneTest, ValidateRejectsBadInputs) {
  Scene s;
  s.target_position = {1.5, 0.0};
  EXPECT_THROW(s.validate(), ContractError);
  Scene t;
  t.light.direction = {0, 0, 2};
  EXPECT_THROW(t.validate(), ContractError);
}

Image checkerboard(std::size_t n) {
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = ((x / 4 + y / 4) % 2) ? 0.9 : 0.1;
    }
  }
  return img;
}

TEST(NoiseTest, GaussianBlurOfConstantIsConstant) {
  const Image flat(24, 24, 0.37);
  for (int s = 1; s <= 10; ++s) {
    const Image out = apply_noise(flat, NoiseFamily::kGaussianBlur, s);
    for (double v : out.pixels) ASSERT_NEAR(v, 0.37, 1e-12);
  }
}

TEST(NoiseTest, StrongBlurLowersVariance) {
  const Image board = checkerboard(32);
  const double v1 = pixel_variance(apply_noise(board, NoiseFamily::kGaussianBlur, 1));
  const double v10 = pixel_variance(apply_noise(board, NoiseFamily::kGaussianBlur, 10));
  EXPECT_LT(v10, v1);
}

// 64 px: at 32 px a 21-tap motion kernel spans most of a row and PSNR saturates.
Image test_scene_image() {
  Rng rng(5);
  const EpisodeSpec ep = sample_random_episode(rng);
  return render(ep.scene, default_camera(), 64);
}

TEST(NoiseTest, PsnrNonIncreasingInSeverity) {
  const Image ref = test_scene_image();
  for (NoiseFamily f : kAllNoise) {
    double prev = std::numeric_limits<double>::infinity();
    for (int s = 1; s <= 10; ++s) {
      const double p = psnr(ref, apply_noise(ref, f, s, 9));
      EXPECT_LE(p, prev) << to_string(f) << " severity " << s;
      prev = p;
    }
  }
}

TEST(NoiseTest, SeverityZeroIsIdentityAndOutputsClamped) {
  const Image ref = test_scene_image();
  for (NoiseFamily f : kAllNoise) {
    EXPECT_TRUE(apply_noise(ref, f, 0).bit_equal(ref)) << to_string(f);
    for (int s = 1; s <= 10; ++s) {
      for (double v : apply_noise(ref, f, s, 4).pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
    EXPECT_THROW(apply_noise(ref, f, 11), ContractError);
    EXPECT_THROW(apply_noise(ref, f, -1), ContractError);
  }
}

TEST(NoiseTest, SeededFamiliesAreDeterministic) {
  const Image ref = test_scene_image();
  for (NoiseFamily f : {NoiseFamily::kFog, NoiseFamily::kGlassBlur}) {
    EXPECT_TRUE(apply_noise(ref, f, 5, 1).bit_equal(apply_noise(ref, f, 5, 1)));
    EXPECT_FALSE(apply_noise(ref, f, 5, 1).bit_equal(apply_noise(ref, f, 5, 2)));
  }
  for (NoiseFamily f : kAllNoise) EXPECT_EQ(parse_noise(to_string(f)), f);
}

TEST(EnvTest, ReachesTargetAtStepFive) {
  EnvConfig cfg;
  cfg.step_scale = 0.1;
  EpisodeSpec ep;
  ep.scene.target_position = {0.5, 0.0};
  EnvState s = reset_env(ep, cfg);
  EXPECT_FALSE(s.success);
  int steps = 0;
  while (!s.done) {
    const StepResult r = step_env(s, {1.0, 0.0}, cfg);
    s = r.state;
    ++steps;
  }
  EXPECT_EQ(steps, 5);
  EXPECT_TRUE(s.success);
  EXPECT_THROW(step_env(s, {0.0, 0.0}, cfg), ContractError);
}

TEST(EnvTest, AgentOnTargetStaysSuccessful) {
  EnvConfig cfg;
  EpisodeSpec ep;
  ep.scene.target_position = {0.2, 0.2};
  ep.agent_start = {0.2, 0.2};
  EXPECT_TRUE(reset_env(ep, cfg).success);
  ep.agent_start = {0.2, 0.35};
  EnvState s = reset_env(ep, cfg);
  EXPECT_FALSE(s.success);
  EXPECT_TRUE(step_env(s, {0.0, -1.0}, cfg).success);
}

TEST(EnvTest, ClampsActionAndWorkspace) {
  EnvConfig cfg;
  EpisodeSpec ep;
  ep.scene.target_position = {-0.5, 0.0};
  ep.agent_start = {0.95, 0.0};
  const StepResult r = step_env(reset_env(ep, cfg), {7.0, 0.0}, cfg);
  EXPECT_EQ(r.state.agent.x(), 1.0);
  EXPECT_EQ(r.state.step_count, 1u);
}

TEST(EnvTest, HorizonEndsEpisode) {
  EnvConfig cfg;
  EpisodeSpec ep;
  ep.scene.target_position = {0.5, 0.5};
  ep.agent_start = {-0.5, -0.5};
  EnvState s = reset_env(ep, cfg);
  std::size_t n = 0;
  while (!s.done) {
    s = step_env(s, {0.0, 0.0}, cfg).state;
    ++n;
  }
  EXPECT_EQ(n, cfg.horizon);
  EXPECT_FALSE(s.success);
}

// Independent scalar rollout of the same dynamics.
bool oracle_episode(double ax, double ay, double tx, double ty, Rng& rng) {
  for (int t = 0; t < 12; ++t) {
    const double dx = rng.uniform(-1.0, 1.0), dy = rng.uniform(-1.0, 1.0);
    ax = std::clamp(ax + 0.15 * dx, -1.0, 1.0);
    ay = std::clamp(ay + 0.15 * dy, -1.0, 1.0);
    if (std::hypot(ax - tx, ay - ty) < 0.1 - 1e-9) return true;
  }
  return false;
}

TEST(EnvTest, RandomPolicyMatchesMonteCarloOracle) {
  const EnvConfig cfg;
  Rng layouts(21);
  int env_hits = 0, oracle_hits = 0;
  for (int e = 0; e < 1000; ++e) {
    const EpisodeSpec ep = sample_random_episode(layouts);
    Rng a(1000 + e), b(1000 + e);
    EnvState s = reset_env(ep, cfg);
    while (!s.done) {
      const double dx = a.uniform(-1.0, 1.0), dy = a.uniform(-1.0, 1.0);
      s = step_env(s, {dx, dy}, cfg).state;
    }
    env_hits += s.success;
    oracle_hits += oracle_episode(ep.agent_start.x(), ep.agent_start.y(), ep.scene.target_position.x(),
                                  ep.scene.target_position.y(), b);
  }
  EXPECT_NEAR(env_hits / 1000.0, oracle_hits / 1000.0, 0.03);
}

TEST(EnvTest, ExpertSolvesEveryCellEpisode) {
  const EnvConfig cfg;
  Rng rng(8);
  for (int e = 0; e < 200; ++e) {
    const EpisodeSpec ep = sample_cell_episode(sample_cell_layout(rng), rng);
    EnvState s = reset_env(ep, cfg);
    while (!s.done) s = step_env(s, expert_action(s.agent, s.scene.target_position, cfg), cfg).state;
    ASSERT_TRUE(s.success) << e;
  }
}

TEST(EnvTest, ExpertChunkMatchesRollout) {
  const EnvConfig cfg;
  const Vec2 start{-0.6, 0.3}, target{0.4, -0.2};
  const std::vector<double> chunk = expert_chunk(start, target, 4, cfg);
  ASSERT_EQ(chunk.size(), 8u);
  Vec2 p = start;
  for (std::size_t h = 0; h < 4; ++h) {
    const Vec2 a = expert_action(p, target, cfg);
    EXPECT_EQ(chunk[2 * h], a.x());
    EXPECT_EQ(chunk[2 * h + 1], a.y());
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
    p += cfg.step_scale * a;
  }
}

TEST(EpisodeTest, SamplersRespectBoundsAndTask) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const EpisodeSpec ep = sample_random_episode(rng, i % 2);
    ep.scene.validate();
    EXPECT_GE((ep.agent_start - ep.scene.target_position).norm(), 0.25);
    EXPECT_EQ(ep.scene.target_color, ep.task == 0 ? kRed : kBlue);
    ASSERT_EQ(ep.scene.distractor_positions.size(), 1u);
    EXPECT_GE((ep.scene.distractor_positions[0] - ep.scene.target_position).norm(), 0.4);
  }
}

TEST(PerturbTest, TextureAndLightingKeepGeometry) {
  Rng rng(6);
  const EpisodeSpec ep = sample_random_episode(rng);
  const PerturbSpec specs[] = {Lighting{1}, Lighting{2}, Lighting{3}, Texture{1}, Texture{2}, Texture{4}};
  for (const PerturbSpec& spec : specs) {
    Scene s = ep.scene;
    CameraPose c = default_camera();
    apply_perturb(spec, s, c);
    EXPECT_EQ(s.target_position, ep.scene.target_position);
    EXPECT_EQ(s.distractor_positions, ep.scene.distractor_positions);
    EXPECT_EQ(c.position, default_camera().position);
    const Image a = Observer(EnvConfig{}, spec).observe(ep.scene);
    EXPECT_FALSE(a.bit_equal(Observer(EnvConfig{}, NoPerturb{}).observe(ep.scene)));
  }
}

TEST(PerturbTest, ValidationRanges) {
  EXPECT_THROW(validate(Noise{NoiseFamily::kFog, 0}), ContractError);
  EXPECT_THROW(validate(Noise{NoiseFamily::kFog, 11}), ContractError);
  EXPECT_THROW(validate(CameraOrbit{-kPi}), ContractError);
  EXPECT_NO_THROW(validate(CameraOrbit{kPi}));
  EXPECT_THROW(validate(Texture{kNumTextures}), ContractError);
  EXPECT_THROW(validate(Lighting{4}), ContractError);
}

TEST(PerturbTest, JsonManifestRoundTrip) {
  const PerturbSpec specs[] = {NoPerturb{},     CameraOrbit{0.5}, CameraDiscrete{Level::kLarge},
                               Lighting{2},     Texture{3},       Noise{NoiseFamily::kZoomBlur, 7}};
  for (const PerturbSpec& spec : specs) {
    const nlohmann::json j = perturb_to_json(spec);
    EXPECT_TRUE(j.contains("kind"));
    EXPECT_EQ(perturb_from_json(nlohmann::json::parse(j.dump())), spec);
  }
  EXPECT_THROW(perturb_from_json(nlohmann::json{{"kind", "warp"}}), ParseError);
  EXPECT_THROW(perturb_from_json(nlohmann::json{{"kind", "noise"}, {"family", "fog"}}), ParseError);
  EXPECT_EQ(perturb_family(Noise{NoiseFamily::kFog, 3}), "fog");
  EXPECT_EQ(perturb_severity(CameraOrbit{kPi / 6}), "30.0");
}

TEST(PerturbTest, ObservationPpmRoundTrip) {
  Rng rng(2);
  const EpisodeSpec ep = sample_random_episode(rng);
  const Image img = Observer(EnvConfig{}, Noise{NoiseFamily::kMotionBlur, 2}).observe(ep.scene);
  const Image back = decode_ppm(encode_ppm(img));
  ASSERT_EQ(back.width, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ASSERT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-12);
  EXPECT_TRUE(decode_ppm(encode_ppm(back)).bit_equal(back));
}

TEST(EnvConfigTest, JsonRoundTrip) {
  EnvConfig c;
  c.horizon = 20;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<EnvConfig>(), c);
}

}  // namespace
}  // namespace lab::scene
