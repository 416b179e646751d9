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
#include <cmath>
#include <numbers>

#include "lab/error.hpp"
#include "lab/scene.hpp"

namespace lab::scene {

void Scene::validate() const {
  auto inside = [](const Vec2& p) { return std::abs(p.x()) <= 1.0 && std::abs(p.y()) <= 1.0; };
  if (!inside(target_position)) throw ContractError("target outside the workspace");
  for (const auto& p : distractor_positions)
    if (!inside(p)) throw ContractError("distractor outside the workspace");
  if (distractor_colors.size() != distractor_positions.size()) {
    throw ContractError("one colour per distractor expected");
  }
  if (std::abs(light.direction.norm() - 1.0) > 1e-9) throw ContractError("light direction is not unit");
  if (background_texture_id < 0 || background_texture_id >= kNumTextures) {
    throw ContractError("unknown texture id " + std::to_string(background_texture_id));
  }
}

namespace {

double hash01(long ix, long iy, std::uint64_t salt) {
  std::uint64_t h = static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL ^
                    static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4fULL ^ salt;
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 29;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const long ix = static_cast<long>(std::floor(gx)), iy = static_cast<long>(std::floor(gy));
  const double fx = gx - ix, fy = gy - iy;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double a = hash01(ix, iy, 7), b = hash01(ix + 1, iy, 7);
  const double c = hash01(ix, iy + 1, 7), d = hash01(ix + 1, iy + 1, 7);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

Vec3 texture_color(int id, double x, double y) {
  auto tiles = [&](double period, const Vec3& a, const Vec3& b) {
    const long k = static_cast<long>(std::floor(x / period)) + static_cast<long>(std::floor(y / period));
    return (k % 2 == 0) ? a : b;
  };
  switch (id) {
    case 0:
      return tiles(0.25, {0.72, 0.70, 0.66}, {0.62, 0.60, 0.56});
    case 1:
      return {1.0, 1.0, 1.0};
    case 2: {
      const double s = 0.85 + 0.15 * std::sin(2 * std::numbers::pi * (x / 0.15 + 0.3 * std::sin(y / 0.7 * 2 * std::numbers::pi)));
      return Vec3(0.55, 0.38, 0.22) * s;
    }
    case 3: {
      const double n = 0.5 * value_noise(x, y, 0.2) + 0.5 * value_noise(x, y, 0.07);
      return Vec3(0.85, 0.85, 0.9) * (0.7 + 0.3 * n);
    }
    case 4:
      return tiles(0.4, {0.25, 0.45, 0.25}, {0.35, 0.55, 0.30});
    default:
      throw ContractError("unknown texture id " + std::to_string(id));
  }
}

constexpr double kShadowHeight = 0.08;
constexpr double kShininess = 32.0;

Vec3 shade(const Scene& s, const Vec3& hit, const Vec3& cam_pos) {
  const Vec2 p(hit.x(), hit.y());
  Vec3 base = texture_color(s.background_texture_id, p.x(), p.y());
  if ((p - s.target_position).norm() < kObjectRadius) {
    base = s.target_color;
  } else {
    for (std::size_t i = 0; i < s.distractor_positions.size(); ++i) {
      if ((p - s.distractor_positions[i]).norm() < kObjectRadius) {
        base = s.distractor_colors[i];
        break;
      }
    }
  }
  const Vec3 n = Vec3::UnitZ();
  const Vec3& d = s.light.direction;
  double lambert = std::max(0.0, d.dot(n));
  if (s.light.shadows && d.z() > 0.0) {
    const Vec2 toward(d.x() / d.z() * kShadowHeight, d.y() / d.z() * kShadowHeight);
    const Vec2 q = p + toward;
    bool shadowed = (q - s.target_position).norm() < kObjectRadius;
    for (const auto& o : s.distractor_positions) shadowed = shadowed || (q - o).norm() < kObjectRadius;
    if (shadowed && (p - s.target_position).norm() >= kObjectRadius) lambert = 0.0;
  }
  Vec3 c = base.cwiseProduct(Vec3::Constant(kAmbient) + (1.0 - kAmbient) * lambert * s.light.diffuse);
  if (s.light.specular > 0.0) {
    const Vec3 v = (cam_pos - hit).normalized();
    const Vec3 h = (d + v).normalized();
    c += Vec3::Constant(s.light.specular * std::pow(std::max(0.0, n.dot(h)), kShininess));
  }
  return c;
}

}  // namespace

Image render(const Scene& scene, const CameraPose& camera, std::size_t image_size) {
  scene.validate();
  camera.validate();
  if (image_size == 0) throw RenderError("image size must be positive");
  const Vec3 fwd = camera.forward();
  if (fwd.dot(Vec3::Zero() - camera.position) <= 0.0) {
    throw RenderError("workspace centre is behind the camera");
  }
  const Eigen::Matrix3d r = camera.orientation.toRotationMatrix();
  const double half = std::tan(camera.fov_y / 2.0);
  const double size = static_cast<double>(image_size);
  Image img(image_size, image_size);
  constexpr int kSub = 2;
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double u = (static_cast<double>(x) + (sx + 0.5) / kSub) / size * 2.0 - 1.0;
          const double v = (static_cast<double>(y) + (sy + 0.5) / kSub) / size * 2.0 - 1.0;
          const Vec3 dir = r * Vec3(u * half, v * half, 1.0);
          if (dir.z() >= 0.0) {
            acc += Vec3(0.55, 0.65, 0.8);  // sky
            continue;
          }
          const double t = -camera.position.z() / dir.z();
          acc += shade(scene, camera.position + t * dir, camera.position);
        }
      }
      acc /= static_cast<double>(kSub * kSub);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(acc[c], 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace lab::scene
