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
#include <random>
#include <string_view>
#include <vector>

#include "mprior/motion_clip.hpp"
#include "mprior/robot.hpp"

namespace mprior {

struct RobotState {
  double root_x = 0.0;
  double root_z = 0.0;
  double pitch = 0.0;  // unwrapped
  double vx = 0.0;
  double vz = 0.0;
  double pitch_rate = 0.0;
  JointVector joints{};
  JointVector joint_vels{};
  std::array<bool, kNumFeet> foot_contact{};
  JointVector last_action{};
  double time = 0.0;

  friend bool operator==(const RobotState&, const RobotState&) = default;
};

struct SimConfig {
  double control_dt = 0.02;
  int substeps = 10;
  double gravity = -9.81;
  double contact_stiffness = 5000.0;  // k_n [N/m]
  double contact_damping = 60.0;      // c_n [N s/m]
  double tangential_damping = 200.0;  // viscous ground friction before the Coulomb clamp [N s/m]
  double friction = 0.8;              // mu
  double kp = 60.0;
  double kd = 1.5;
  double torque_limit = 30.0;
  double leg_inertia = 0.04;  // reflected inertia per joint [kg m^2]
  double joint_damping = 0.2;
  double pos_err_max = 0.5;
  double ori_err_max = 0.8;

  double substep_dt() const { return control_dt / substeps; }
  void validate() const;
};

struct PdGains {
  double kp = 60.0;
  double kd = 1.5;
  double torque_limit = 30.0;
};

// tau_j = clamp(kp * (target_j - q_j) - kd * qdot_j, +-torque_limit)
JointVector pd_torque(const JointVector& target, const JointVector& q, const JointVector& qdot, const PdGains& gains);

struct ContactForce {
  double normal = 0.0;
  double tangential = 0.0;
};

// Per-substep contact record, used by invariant checks and trajectory dumps.
struct ContactSample {
  std::array<ContactForce, kNumFeet> feet{};
};

struct ContactLog {
  std::vector<ContactSample> samples;
};

// Penalty normal force for one foot: max(0, -k_n z - c_n vz) when z < 0, else 0.
double contact_normal_force(double foot_z, double foot_vz, const SimConfig& cfg);

// Fixed-timestep planar simulator. Trunk is a rigid body under gravity and
// contact forces applied at the feet. Legs are massless: each joint
// integrates (tau - b qdot + tau_contact) / I_leg where tau_contact is the
// contact force mapped through the leg Jacobian.
class PlanarSim {
 public:
  PlanarSim(RobotGeometry geometry, SimConfig config);

  const RobotGeometry& geometry() const { return geometry_; }
  const SimConfig& config() const { return config_; }

  // Advances control_dt with `substeps` semi-implicit Euler substeps.
  // Pure: identical inputs give bit-identical outputs.
  // Throws SimulationDiverged if any state quantity becomes non-finite.
  RobotState step(const RobotState& state, const JointVector& action, ContactLog* log = nullptr) const;

  std::array<Vec2, kNumFeet> feet(const RobotState& s) const;
  std::array<Vec2, kNumFeet> foot_velocities(const RobotState& s) const;

 private:
  RobotGeometry geometry_;
  SimConfig config_;
};

// Contact flags are evaluated from FK: true iff foot z <= 0.
void update_contacts(RobotState& s, const RobotGeometry& g);

// State at a reference pose with finite-difference velocities, plus uniform
// noise of +-noise_scale rad on joints and +-noise_scale/2 m on the root position.
RobotState reset_from_reference(const RefPose& ref, const RefVelocity& ref_vel, double noise_scale,
                                const RobotGeometry& g, std::mt19937_64& rng);

enum class TerminationReason { kNone, kPosition, kOrientation };

std::string_view to_string(TerminationReason reason);

struct Termination {
  TerminationReason reason = TerminationReason::kNone;
  bool terminated() const { return reason != TerminationReason::kNone; }
};

// Position bound is checked first; orientation uses the wrapped pitch difference.
Termination check_termination(const RobotState& state, const RefPose& ref, const SimConfig& cfg);

}  // namespace mprior
