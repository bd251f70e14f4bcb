// Copyright 2026 The motion_prior Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <filesystem>
#include <string>

namespace mprior {

inline constexpr int kNumJoints = 4;
inline constexpr int kNumFeet = 2;

using JointVector = std::array<double, kNumJoints>;

struct Vec2 {
  double x = 0.0;
  double z = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double norm(Vec2 v);

struct JointRange {
  double lo = -1.0;
  double hi = 1.0;
};

// Joint ordering: front-hip, front-knee, rear-hip, rear-knee.
// Foot ordering: front, rear.
struct RobotGeometry {
  double l1 = 0.2;  // thigh length [m]
  double l2 = 0.2;  // shank length [m]
  double d = 0.2;   // hip offset from the trunk centre along the trunk axis [m]
  double trunk_mass = 6.0;
  double trunk_inertia = 0.1;
  std::array<JointRange, kNumJoints> joint_limits{{{-2.6, 2.6}, {-2.8, 0.0}, {-2.6, 2.6}, {-2.8, 0.0}}};
  double torque_limit = 30.0;

  // Throws ValidationError if a length, mass or range is not sensible.
  void validate() const;

  JointVector clamp_joints(const JointVector& q) const;
  bool within_limits(const JointVector& q, double tol = 0.0) const;
};

RobotGeometry load_robot(const std::filesystem::path& path);
void save_robot(const RobotGeometry& geometry, const std::filesystem::path& path);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

// Hip position for the given foot (0 = front at +d, 1 = rear at -d).
// Pitch is counter-clockwise positive in the x-z plane, so positive pitch
// raises the front hip.
Vec2 hip_position(double root_x, double root_z, double pitch, int foot, const RobotGeometry& g);

std::array<Vec2, kNumFeet> foot_fk(double root_x, double root_z, double pitch, const JointVector& joints,
                                   const RobotGeometry& g);

// Partial derivatives of one foot position with respect to its hip and knee
// angles (the same expressions hold for derivatives wrt pitch via the hip).
struct LegJacobian {
  Vec2 d_hip;
  Vec2 d_knee;
};
LegJacobian leg_jacobian(double pitch, double hip, double knee, const RobotGeometry& g);

// Inverse kinematics for one leg: returns (hip, knee) such that the foot lands
// at `rel` relative to the hip in world axes, with the knee bent backwards
// (knee angle <= 0). Targets outside the workspace are pulled onto its boundary.
std::array<double, 2> leg_ik(Vec2 rel, double pitch, const RobotGeometry& g);

// A nominal standing posture with both feet under their hips.
JointVector standing_joints();
double standing_height(const RobotGeometry& g);

}  // namespace mprior
