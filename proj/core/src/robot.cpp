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

#include "mprior/robot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "mprior/error.hpp"

namespace mprior {

double norm(Vec2 v) { return std::hypot(v.x, v.z); }

void RobotGeometry::validate() const {
  if (!(l1 > 0.0) || !(l2 > 0.0)) throw ValidationError("robot: link lengths must be positive");
  if (!(d >= 0.0)) throw ValidationError("robot: hip offset d must be non-negative");
  if (!(trunk_mass > 0.0) || !(trunk_inertia > 0.0))
    throw ValidationError("robot: trunk mass and inertia must be positive");
  if (!(torque_limit > 0.0)) throw ValidationError("robot: torque_limit must be positive");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(joint_limits[j].lo < joint_limits[j].hi))
      throw ValidationError(fmt::format("robot: joint {} has an empty range", j));
  }
}

JointVector RobotGeometry::clamp_joints(const JointVector& q) const {
  JointVector out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = std::clamp(q[j], joint_limits[j].lo, joint_limits[j].hi);
  return out;
}

bool RobotGeometry::within_limits(const JointVector& q, double tol) const {
  for (int j = 0; j < kNumJoints; ++j) {
    if (q[j] < joint_limits[j].lo - tol || q[j] > joint_limits[j].hi + tol) return false;
  }
  return true;
}

RobotGeometry load_robot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open robot file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(fmt::format("{}: {}", path.string(), e.what()));
  }
  RobotGeometry g;
  try {
    g.l1 = j.at("l1").get<double>();
    g.l2 = j.at("l2").get<double>();
    g.d = j.at("d").get<double>();
    g.trunk_mass = j.at("trunk_mass").get<double>();
    g.trunk_inertia = j.at("trunk_inertia").get<double>();
    g.torque_limit = j.at("torque_limit").get<double>();
    const auto& limits = j.at("joint_limits");
    if (!limits.is_array() || limits.size() != kNumJoints)
      throw SchemaError(fmt::format("{}: joint_limits must hold {} [lo, hi] pairs", path.string(), kNumJoints));
    for (int k = 0; k < kNumJoints; ++k) {
      g.joint_limits[k] = {limits[k].at(0).get<double>(), limits[k].at(1).get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", path.string(), e.what()));
  }
  g.validate();
  return g;
}

void save_robot(const RobotGeometry& g, const std::filesystem::path& path) {
  nlohmann::json j;
  j["l1"] = g.l1;
  j["l2"] = g.l2;
  j["d"] = g.d;
  j["trunk_mass"] = g.trunk_mass;
  j["trunk_inertia"] = g.trunk_inertia;
  j["torque_limit"] = g.torque_limit;
  j["joint_limits"] = nlohmann::json::array();
  for (const auto& r : g.joint_limits) j["joint_limits"].push_back({r.lo, r.hi});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write robot file " + path.string());
  out << j.dump(2) << '\n';
}

double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

Vec2 hip_position(double root_x, double root_z, double pitch, int foot, const RobotGeometry& g) {
  const double s = foot == 0 ? g.d : -g.d;
  return {root_x + s * std::cos(pitch), root_z + s * std::sin(pitch)};
}

std::array<Vec2, kNumFeet> foot_fk(double root_x, double root_z, double pitch, const JointVector& joints,
                                   const RobotGeometry& g) {
  std::array<Vec2, kNumFeet> feet;
  for (int f = 0; f < kNumFeet; ++f) {
    const Vec2 hip = hip_position(root_x, root_z, pitch, f, g);
    const double psi1 = pitch + joints[2 * f];
    const double psi2 = psi1 + joints[2 * f + 1];
    feet[f] = {hip.x + g.l1 * std::sin(psi1) + g.l2 * std::sin(psi2),
               hip.z - g.l1 * std::cos(psi1) - g.l2 * std::cos(psi2)};
  }
  return feet;
}

LegJacobian leg_jacobian(double pitch, double hip, double knee, const RobotGeometry& g) {
  const double psi1 = pitch + hip;
  const double psi2 = psi1 + knee;
  const Vec2 shank{g.l2 * std::cos(psi2), g.l2 * std::sin(psi2)};
  const Vec2 thigh{g.l1 * std::cos(psi1), g.l1 * std::sin(psi1)};
  return {thigh + shank, shank};
}

std::array<double, 2> leg_ik(Vec2 rel, double pitch, const RobotGeometry& g) {
  const double reach_max = g.l1 + g.l2 - 1e-9;
  const double reach_min = std::abs(g.l1 - g.l2) + 1e-9;
  double r = norm(rel);
  if (r < 1e-12) rel = {0.0, -reach_min}, r = reach_min;
  const double rc = std::clamp(r, reach_min, reach_max);
  const double c = std::clamp((rc * rc - g.l1 * g.l1 - g.l2 * g.l2) / (2.0 * g.l1 * g.l2), -1.0, 1.0);
  const double knee = -std::acos(c);
  const double direction = std::atan2(rel.x, -rel.z);
  const double psi1 = direction - std::atan2(g.l2 * std::sin(knee), g.l1 + g.l2 * std::cos(knee));
  return {psi1 - pitch, knee};
}

JointVector standing_joints() { return {0.7, -1.4, 0.7, -1.4}; }

double standing_height(const RobotGeometry& g) {
  const JointVector q = standing_joints();
  return g.l1 * std::cos(q[0]) + g.l2 * std::cos(q[0] + q[1]);
}

}  // namespace mprior
