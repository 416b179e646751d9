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

#include "lab/error.hpp"
#include "lab/scene.hpp"

namespace lab::scene {

void CameraPose::validate() const {
  if (std::abs(orientation.norm() - 1.0) > 1e-9) throw ContractError("camera quaternion is not unit");
  if (!(position.z() > 0.0)) throw ContractError("camera must be above the ground plane");
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw ContractError("fov_y outside (0, pi)");
}

CameraPose look_at(const Vec3& position, const Vec3& target) {
  const Vec3 fwd = (target - position).normalized();
  Vec3 right = fwd.cross(Vec3::UnitZ());
  if (right.norm() < 1e-12) throw ContractError("look_at: view direction is vertical");
  right.normalize();
  const Vec3 down = fwd.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = fwd;
  CameraPose pose;
  pose.position = position;
  pose.orientation = Quat(r).normalized();
  return pose;
}

CameraPose default_camera() { return look_at(Vec3(1.4, 0.0, 1.6), Vec3::Zero()); }

Vec3 orbit_position(const Vec3& p_cam, const Vec3& p_eef, double theta) {
  const double r = std::hypot(p_cam.x() - p_eef.x(), p_cam.y() - p_eef.y());
  if (r == 0.0) throw ContractError("orbit undefined: camera is directly above the end-effector");
  return {r * std::cos(theta) + p_eef.x(), r * std::sin(theta) + p_eef.y(), p_cam.z()};
}

CameraPose orbit_camera(const CameraPose& pose, const Vec3& p_eef, double theta) {
  const double theta0 = std::atan2(pose.position.y() - p_eef.y(), pose.position.x() - p_eef.x());
  CameraPose out = pose;
  out.position = orbit_position(pose.position, p_eef, theta);
  out.orientation = (Quat(Eigen::AngleAxisd(theta - theta0, Vec3::UnitZ())) * pose.orientation).normalized();
  return out;
}

LevelMagnitude level_magnitude(Level level) {
  constexpr double deg = std::numbers::pi / 180.0;
  switch (level) {
    case Level::kSmall:
      return {10.0 * deg, 0.0};
    case Level::kMedium:
      return {25.0 * deg, 0.05};
    case Level::kLarge:
      return {40.0 * deg, 0.10};
  }
  return {0.0, 0.0};
}

std::string to_string(Level level) {
  switch (level) {
    case Level::kSmall:
      return "small";
    case Level::kMedium:
      return "medium";
    case Level::kLarge:
      return "large";
  }
  return "small";
}

Level parse_level(const std::string& s) {
  if (s == "small" || s == "S") return Level::kSmall;
  if (s == "medium" || s == "M") return Level::kMedium;
  if (s == "large" || s == "L") return Level::kLarge;
  throw ParseError("unknown camera level '" + s + "'");
}

CameraPose discrete_pose_perturb(const CameraPose& pose, Level level, const Vec3& p_eef) {
  const LevelMagnitude m = level_magnitude(level);
  const double theta0 = std::atan2(pose.position.y() - p_eef.y(), pose.position.x() - p_eef.x());
  CameraPose out = orbit_camera(pose, p_eef, theta0 + m.angle);
  out.position.z() += m.lift;
  return out;
}

double rotation_angle(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return 2.0 * std::acos(d);
}

}  // namespace lab::scene
