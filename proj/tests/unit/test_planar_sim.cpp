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

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mprior/error.hpp"
#include "mprior/motion_clip.hpp"
#include "mprior/sim.hpp"
#include "mprior/synthetic_clips.hpp"
#include "test_support.hpp"

using namespace mprior;
using mprior::testing::uniform;

namespace {

RobotState standing(const RobotGeometry& g) {
  RefPose p;
  p.root_z = standing_height(g);
  p.joints = standing_joints();
  p.update_feet(g);
  std::mt19937_64 rng(0);
  return reset_from_reference(p, RefVelocity{}, 0.0, g, rng);
}

RobotState airborne(const RobotGeometry& g) {
  RobotState s = standing(g);
  s.root_z = 10.0;
  s.vx = 0.7;
  s.vz = 1.3;
  s.pitch_rate = 0.4;
  update_contacts(s, g);
  return s;
}

}  // namespace

TEST_CASE("pd_torque examples") {
  const PdGains gains{60.0, 1.5, 30.0};
  const JointVector q{0.1, -0.2, 0.3, -0.4};
  const JointVector zero{};
  for (double t : pd_torque(q, q, zero, gains)) CHECK(t == 0.0);

  JointVector target = q;
  for (auto& v : target) v += 0.1;
  for (double t : pd_torque(target, q, zero, gains)) CHECK(t == doctest::Approx(6.0).epsilon(1e-12));

  for (auto& v : target) v = 10.0;
  for (double t : pd_torque(target, zero, zero, gains)) CHECK(t == 30.0);
  for (auto& v : target) v = -10.0;
  for (double t : pd_torque(target, zero, zero, gains)) CHECK(t == -30.0);

  const JointVector qdot{1.0, 1.0, 1.0, 1.0};
  for (double t : pd_torque(zero, zero, qdot, gains)) CHECK(t == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("penalty normal force") {
  SimConfig c;
  c.contact_stiffness = 4000.0;
  c.contact_damping = 50.0;
  CHECK(contact_normal_force(-0.01, 0.0, c) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(contact_normal_force(0.01, -1.0, c) == 0.0);
  // A foot separating fast enough would pull; the force is clipped at zero.
  CHECK(contact_normal_force(-0.001, 10.0, c) == 0.0);
  CHECK(contact_normal_force(-0.01, -0.2, c) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("step is a pure function of its inputs") {
  const RobotGeometry g;
  const PlanarSim sim(g, SimConfig{});
  const RobotState s = standing(g);
  const JointVector a{0.3, -1.0, -0.2, -0.9};
  const RobotState x = sim.step(s, a);
  const RobotState y = sim.step(s, a);
  CHECK(x == y);
  CHECK(x.time == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(x.last_action == a);
}

TEST_CASE("airborne trunk follows the discrete ballistic recurrence exactly") {
  const RobotGeometry g;
  SimConfig cfg;
  const PlanarSim sim(g, cfg);
  RobotState s = airborne(g);
  double x = s.root_x, z = s.root_z, p = s.pitch, vx = s.vx, vz = s.vz, w = s.pitch_rate;
  const double dt = cfg.substep_dt();
  for (int step = 0; step < 50; ++step) {
    s = sim.step(s, JointVector{0.5, -1.0, 0.2, -0.5});
    for (int k = 0; k < cfg.substeps; ++k) {
      vx += 0.0 * dt;
      vz += (0.0 / g.trunk_mass + cfg.gravity) * dt;
      w += 0.0 * dt;
      x += vx * dt;
      z += vz * dt;
      p += w * dt;
    }
    REQUIRE(!s.foot_contact[0]);
    REQUIRE(!s.foot_contact[1]);
    CHECK(s.vz == vz);
    CHECK(s.root_z == z);
    CHECK(s.vx == vx);
    CHECK(s.root_x == x);
    CHECK(s.pitch == p);
  }
}

TEST_CASE("flight keeps horizontal velocity constant") {
  const RobotGeometry g;
  const PlanarSim sim(g, SimConfig{});
  RobotState s = airborne(g);
  const double vx0 = s.vx;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 40; ++i) {
    JointVector a;
    for (auto& v : a) v = uniform(rng, -1.5, 0.0);
    s = sim.step(s, a);
    CHECK(std::abs(s.vx - vx0) <= 1e-12);
  }
}

TEST_CASE("trunk energy drops by the semi-implicit Euler drift each substep") {
  const RobotGeometry g;
  SimConfig cfg;
  cfg.substeps = 1;
  cfg.control_dt = 0.002;
  cfg.kp = 1e-300;
  cfg.kd = 1e-300;
  const PlanarSim sim(g, cfg);
  RobotState s = airborne(g);
  auto energy = [&](const RobotState& r) {
    return 0.5 * g.trunk_mass * (r.vx * r.vx + r.vz * r.vz) + 0.5 * g.trunk_inertia * r.pitch_rate * r.pitch_rate -
           g.trunk_mass * cfg.gravity * r.root_z;
  };
  const double dt = cfg.substep_dt();
  const double drift = -0.5 * g.trunk_mass * cfg.gravity * cfg.gravity * dt * dt;
  for (int i = 0; i < 200; ++i) {
    const RobotState n = sim.step(s, s.joints);
    const double de = energy(n) - energy(s);
    CHECK(de <= 1e-9);
    CHECK(de == doctest::Approx(drift).epsilon(1e-6));
    s = n;
  }
}

TEST_CASE("standing pose settles and then holds its height") {
  const RobotGeometry g;
  const PlanarSim sim(g, SimConfig{});
  RobotState s = standing(g);
  const JointVector hold = s.joints;
  for (int i = 0; i < 100; ++i) s = sim.step(s, hold);
  const double z_settled = s.root_z;
  double z_min = z_settled, z_max = z_settled;
  for (int i = 0; i < 50; ++i) {
    s = sim.step(s, hold);
    z_min = std::min(z_min, s.root_z);
    z_max = std::max(z_max, s.root_z);
  }
  CHECK(z_max - z_min < 1e-3);
  // Static sinkage is near m g / (2 k_n) below the kinematic standing height.
  const double sink = standing_height(g) - z_settled;
  CHECK(sink > 0.0);
  CHECK(sink < 0.02);
}

TEST_CASE("random-action fuzz respects unilateral contact, the friction cone and joint limits") {
  const RobotGeometry g;
  const SimConfig cfg;
  const PlanarSim sim(g, cfg);
  std::mt19937_64 rng(11);
  RobotState s = standing(g);
  int violations = 0;
  for (int i = 0; i < 2000; ++i) {
    if (i % 200 == 0) s = standing(g);
    JointVector a;
    for (int j = 0; j < kNumJoints; ++j) a[j] = uniform(rng, g.joint_limits[j].lo, g.joint_limits[j].hi);
    ContactLog log;
    s = sim.step(s, a, &log);
    CHECK(log.samples.size() == static_cast<std::size_t>(cfg.substeps));
    for (const auto& smp : log.samples)
      for (const auto& f : smp.feet) violations += (f.normal < 0.0) || (std::abs(f.tangential) > cfg.friction * f.normal + 1e-9);
    for (int j = 0; j < kNumJoints; ++j) {
      CHECK(s.joints[j] >= g.joint_limits[j].lo);
      CHECK(s.joints[j] <= g.joint_limits[j].hi);
    }
    const auto feet = sim.feet(s);
    for (int f = 0; f < kNumFeet; ++f) CHECK(s.foot_contact[f] == (feet[f].z <= 0.0));
  }
  CHECK(violations == 0);
}

TEST_CASE("non-finite state raises SimulationDiverged naming the quantity") {
  const RobotGeometry g;
  const PlanarSim sim(g, SimConfig{});
  RobotState s = airborne(g);
  s.vz = std::numeric_limits<double>::infinity();
  try {
    sim.step(s, s.joints);
    FAIL("expected divergence");
  } catch (const SimulationDiverged& e) {
    CHECK(e.quantity() == "root_z");
  }
  JointVector bad = s.joints;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sim.step(airborne(g), bad), ValidationError);
}

TEST_CASE("reset_from_reference") {
  const RobotGeometry g;
  const MotionClip walk = generate_synthetic_clip(ClipKind::kWalk, ClipParams{}, g);
  const RefPose& ref = walk.frames[20];
  const RefVelocity vel = reference_velocity(walk, 20);

  SUBCASE("zero noise reproduces the reference") {
    std::mt19937_64 rng(1);
    const RobotState s = reset_from_reference(ref, vel, 0.0, g, rng);
    CHECK(s.root_x == ref.root_x);
    CHECK(s.root_z == ref.root_z);
    CHECK(s.pitch == ref.pitch);
    CHECK(s.joints == ref.joints);
    CHECK(s.vx == vel.vx);
    CHECK(s.joint_vels == vel.joint_vels);
  }
  SUBCASE("noise is bounded and seed-deterministic") {
    std::mt19937_64 r1(9), r2(9);
    const RobotState a = reset_from_reference(ref, vel, 0.05, g, r1);
    const RobotState b = reset_from_reference(ref, vel, 0.05, g, r2);
    CHECK(a == b);
    CHECK(std::abs(a.root_x - ref.root_x) <= 0.025);
    CHECK(std::abs(a.root_z - ref.root_z) <= 0.025);
    for (int j = 0; j < kNumJoints; ++j) CHECK(std::abs(a.joints[j] - ref.joints[j]) <= 0.05 + 1e-15);
  }
  SUBCASE("mid-flight backflip frame is airborne") {
    const MotionClip flip = generate_synthetic_clip(ClipKind::kBackflip, ClipParams{}, g);
    int best = 0;
    for (int i = 0; i <= flip.last(); ++i)
      if (flip.frames[i].root_z > flip.frames[best].root_z) best = i;
    std::mt19937_64 rng(1);
    const RobotState s = reset_from_reference(flip.frames[best], reference_velocity(flip, best), 0.0, g, rng);
    CHECK(!s.foot_contact[0]);
    CHECK(!s.foot_contact[1]);
  }
  SUBCASE("negative noise is rejected") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(reset_from_reference(ref, vel, -0.1, g, rng), ValidationError);
  }
}

TEST_CASE("check_termination") {
  SimConfig cfg;
  RefPose ref;
  ref.root_z = 0.3;
  RobotState s;
  s.root_z = 0.3;
  CHECK(!check_termination(s, ref, cfg).terminated());

  s.root_x = 0.6;
  CHECK(check_termination(s, ref, cfg).reason == TerminationReason::kPosition);

  s.root_x = 0.0;
  s.pitch = 0.9;
  CHECK(check_termination(s, ref, cfg).reason == TerminationReason::kOrientation);

  s.pitch = 0.1;
  ref.pitch = -6.183;
  CHECK(!check_termination(s, ref, cfg).terminated());

  // Combined planar distance, not per-axis.
  s.pitch = ref.pitch;
  s.root_x = 0.4;
  s.root_z = 0.65;
  CHECK(check_termination(s, ref, cfg).reason == TerminationReason::kPosition);
}

TEST_CASE("sim config validation") {
  SimConfig c;
  c.substeps = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.kp = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
