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

#include "mprior/sim.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {

void SimConfig::validate() const {
  if (substeps < 1) throw ConfigError("sim: substeps must be >= 1");
  if (!(control_dt > 0.0)) throw ConfigError("sim: control_dt must be positive");
  if (!(kp > 0.0) || !(kd > 0.0)) throw ConfigError("sim: PD gains must be positive");
  if (!(contact_stiffness > 0.0) || !(contact_damping > 0.0) || !(tangential_damping > 0.0))
    throw ConfigError("sim: contact gains must be positive");
  if (!(friction >= 0.0)) throw ConfigError("sim: friction must be non-negative");
  if (!(torque_limit > 0.0) || !(leg_inertia > 0.0)) throw ConfigError("sim: torque_limit and leg_inertia must be positive");
  if (!(joint_damping >= 0.0)) throw ConfigError("sim: joint_damping must be non-negative");
  if (!(pos_err_max > 0.0) || !(ori_err_max > 0.0)) throw ConfigError("sim: termination thresholds must be positive");
}

JointVector pd_torque(const JointVector& target, const JointVector& q, const JointVector& qdot, const PdGains& gains) {
  JointVector tau;
  for (int j = 0; j < kNumJoints; ++j) {
    tau[j] = std::clamp(gains.kp * (target[j] - q[j]) - gains.kd * qdot[j], -gains.torque_limit, gains.torque_limit);
  }
  return tau;
}

double contact_normal_force(double foot_z, double foot_vz, const SimConfig& cfg) {
  if (!(foot_z < 0.0)) return 0.0;
  return std::max(0.0, -cfg.contact_stiffness * foot_z - cfg.contact_damping * foot_vz);
}

PlanarSim::PlanarSim(RobotGeometry geometry, SimConfig config) : geometry_(geometry), config_(config) {
  geometry_.validate();
  config_.validate();
}

std::array<Vec2, kNumFeet> PlanarSim::feet(const RobotState& s) const {
  return foot_fk(s.root_x, s.root_z, s.pitch, s.joints, geometry_);
}

std::array<Vec2, kNumFeet> PlanarSim::foot_velocities(const RobotState& s) const {
  const auto p = feet(s);
  std::array<Vec2, kNumFeet> v;
  for (int f = 0; f < kNumFeet; ++f) {
    const Vec2 r = p[f] - Vec2{s.root_x, s.root_z};
    const LegJacobian jac = leg_jacobian(s.pitch, s.joints[2 * f], s.joints[2 * f + 1], geometry_);
    v[f] = Vec2{s.vx - s.pitch_rate * r.z, s.vz + s.pitch_rate * r.x} + s.joint_vels[2 * f] * jac.d_hip +
           s.joint_vels[2 * f + 1] * jac.d_knee;
  }
  return v;
}

namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw SimulationDiverged(name, v);
}

}  // namespace

RobotState PlanarSim::step(const RobotState& state, const JointVector& action, ContactLog* log) const {
  for (double a : action) {
    if (!std::isfinite(a)) throw ValidationError("sim: non-finite action");
  }
  const RobotGeometry& g = geometry_;
  const SimConfig& c = config_;
  const double dt = c.substep_dt();
  const PdGains gains{c.kp, c.kd, std::min(c.torque_limit, g.torque_limit)};

  RobotState s = state;
  for (int k = 0; k < c.substeps; ++k) {
    const auto foot_pos = foot_fk(s.root_x, s.root_z, s.pitch, s.joints, g);
    const auto foot_vel = foot_velocities(s);

    double fx = 0.0;
    double fz = 0.0;
    double moment = 0.0;
    JointVector tau_contact{};
    ContactSample sample;
    for (int f = 0; f < kNumFeet; ++f) {
      const double fn = contact_normal_force(foot_pos[f].z, foot_vel[f].z, c);
      const double limit = c.friction * fn;
      const double ft = fn > 0.0 ? std::clamp(-c.tangential_damping * foot_vel[f].x, -limit, limit) : 0.0;
      sample.feet[f] = {fn, ft};
      if (fn == 0.0) continue;
      const Vec2 r = foot_pos[f] - Vec2{s.root_x, s.root_z};
      fx += ft;
      fz += fn;
      moment += r.x * fn - r.z * ft;
      const LegJacobian jac = leg_jacobian(s.pitch, s.joints[2 * f], s.joints[2 * f + 1], g);
      tau_contact[2 * f] = jac.d_hip.x * ft + jac.d_hip.z * fn;
      tau_contact[2 * f + 1] = jac.d_knee.x * ft + jac.d_knee.z * fn;
    }
    if (log != nullptr) log->samples.push_back(sample);

    const JointVector tau = pd_torque(action, s.joints, s.joint_vels, gains);

    // Trunk: semi-implicit Euler (velocity first, then position).
    const double ax = fx / g.trunk_mass;
    const double az = fz / g.trunk_mass + c.gravity;
    const double alpha = moment / g.trunk_inertia;
    s.vx += ax * dt;
    s.vz += az * dt;
    s.pitch_rate += alpha * dt;
    s.root_x += s.vx * dt;
    s.root_z += s.vz * dt;
    s.pitch += s.pitch_rate * dt;

    for (int j = 0; j < kNumJoints; ++j) {
      const double qdd = (tau[j] - c.joint_damping * s.joint_vels[j] + tau_contact[j]) / c.leg_inertia;
      s.joint_vels[j] += qdd * dt;
      s.joints[j] += s.joint_vels[j] * dt;
      const JointRange& lim = g.joint_limits[j];
      if (s.joints[j] < lim.lo) {
        s.joints[j] = lim.lo;
        s.joint_vels[j] = std::max(0.0, s.joint_vels[j]);
      } else if (s.joints[j] > lim.hi) {
        s.joints[j] = lim.hi;
        s.joint_vels[j] = std::min(0.0, s.joint_vels[j]);
      }
    }
  }

  s.last_action = action;
  s.time = state.time + c.control_dt;
  update_contacts(s, g);

  require_finite(s.root_x, "root_x");
  require_finite(s.root_z, "root_z");
  require_finite(s.pitch, "pitch");
  require_finite(s.vx, "vx");
  require_finite(s.vz, "vz");
  require_finite(s.pitch_rate, "pitch_rate");
  static constexpr const char* kJointNames[] = {"joint[0]", "joint[1]", "joint[2]", "joint[3]"};
  static constexpr const char* kJointVelNames[] = {"joint_vel[0]", "joint_vel[1]", "joint_vel[2]", "joint_vel[3]"};
  for (int j = 0; j < kNumJoints; ++j) {
    require_finite(s.joints[j], kJointNames[j]);
    require_finite(s.joint_vels[j], kJointVelNames[j]);
  }
  return s;
}

void update_contacts(RobotState& s, const RobotGeometry& g) {
  const auto p = foot_fk(s.root_x, s.root_z, s.pitch, s.joints, g);
  for (int f = 0; f < kNumFeet; ++f) s.foot_contact[f] = p[f].z <= 0.0;
}

RobotState reset_from_reference(const RefPose& ref, const RefVelocity& ref_vel, double noise_scale,
                                const RobotGeometry& g, std::mt19937_64& rng) {
  if (!(noise_scale >= 0.0)) throw ValidationError("reset_from_reference: noise_scale must be >= 0");
  RobotState s;
  s.root_x = ref.root_x;
  s.root_z = ref.root_z;
  s.pitch = ref.pitch;
  s.vx = ref_vel.vx;
  s.vz = ref_vel.vz;
  s.pitch_rate = ref_vel.pitch_rate;
  s.joints = ref.joints;
  s.joint_vels = ref_vel.joint_vels;
  if (noise_scale > 0.0) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    s.root_x += 0.5 * noise_scale * unit(rng);
    s.root_z += 0.5 * noise_scale * unit(rng);
    for (double& q : s.joints) q += noise_scale * unit(rng);
  }
  s.joints = g.clamp_joints(s.joints);
  s.last_action = s.joints;
  update_contacts(s, g);
  return s;
}

std::string_view to_string(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::kNone:
      return "none";
    case TerminationReason::kPosition:
      return "position";
    case TerminationReason::kOrientation:
      return "orientation";
  }
  return "none";
}

Termination check_termination(const RobotState& state, const RefPose& ref, const SimConfig& cfg) {
  if (std::hypot(state.root_x - ref.root_x, state.root_z - ref.root_z) > cfg.pos_err_max)
    return {TerminationReason::kPosition};
  if (std::abs(wrap_angle(state.pitch - ref.pitch)) > cfg.ori_err_max) return {TerminationReason::kOrientation};
  return {};
}

}  // namespace mprior
