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
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mprior/error.hpp"
#include "mprior/motion_clip.hpp"
#include "mprior/synthetic_clips.hpp"
#include "test_support.hpp"

using namespace mprior;
using mprior::testing::TempDir;

namespace {

constexpr double kPi = std::numbers::pi;

RobotGeometry no_offset_geometry() {
  RobotGeometry g;
  g.l1 = 0.2;
  g.l2 = 0.2;
  g.d = 0.0;
  return g;
}

std::string standing_clip_json(int frames, double dt, bool with_bad_feet = false) {
  const JointVector q = standing_joints();
  const double h = standing_height(RobotGeometry{});
  std::string s = fmt::format(R"({{"name": "stand", "source": "synthetic", "dt": {}, "frames": [)", dt);
  for (int i = 0; i < frames; ++i) {
    if (i) s += ",\n";
    s += fmt::format("[0.0, {}, 0.0, {}, {}, {}, {}", h, q[0], q[1], q[2], q[3]);
    if (with_bad_feet) s += ", 0.3, 0.1, -0.1, 0.1";
    s += "]";
  }
  return s + "]}";
}

MotionClip ramp_clip(int frames, double dt) {
  const RobotGeometry g;
  MotionClip c;
  c.name = "ramp";
  c.dt = dt;
  for (int i = 0; i < frames; ++i) {
    RefPose p;
    p.root_x = 0.01 * i;
    p.root_z = standing_height(g);
    p.joints = standing_joints();
    p.update_feet(g);
    c.frames.push_back(p);
  }
  return c;
}

}  // namespace

TEST_CASE("load_clip accepts a minimal standing clip") {
  const RobotGeometry g;
  const MotionClip c = parse_clip(standing_clip_json(31, 0.02), g);
  CHECK(c.last() == 30);
  for (const auto& p : c.frames)
    for (const auto& f : p.feet) CHECK(f.z == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("load_clip rejects dt = 0") {
  CHECK_THROWS_AS(parse_clip(standing_clip_json(31, 0.0), RobotGeometry{}), ValidationError);
}

TEST_CASE("load_clip rejects clips shorter than 31 frames") {
  CHECK_THROWS_AS(parse_clip(standing_clip_json(30, 0.02), RobotGeometry{}), ValidationError);
}

TEST_CASE("load_clip recomputes stored feet from forward kinematics") {
  const RobotGeometry g;
  const MotionClip c = parse_clip(standing_clip_json(31, 0.02, true), g);
  for (const auto& p : c.frames) {
    const auto fk = foot_fk(p.root_x, p.root_z, p.pitch, p.joints, g);
    for (int f = 0; f < kNumFeet; ++f) {
      CHECK(p.feet[f].x == doctest::Approx(fk[f].x).epsilon(1e-12));
      CHECK(p.feet[f].z == doctest::Approx(fk[f].z).epsilon(1e-12));
    }
  }
}

TEST_CASE("load_clip reports the line of a parse error") {
  try {
    parse_clip("{\n\"name\": \"x\",\n\"dt\": 0.02,,\n}", RobotGeometry{}, "bad.json");
    FAIL("expected a schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("bad.json:3") != std::string::npos);
  }
}

TEST_CASE("load_clip names the frame that violates continuity") {
  const RobotGeometry g;
  MotionClip c = ramp_clip(40, 0.02);
  c.frames[17].root_x += 2.0;
  try {
    parse_clip(clip_to_json(c), g);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
}

TEST_CASE("load_clip rejects joints outside the limits") {
  const RobotGeometry g;
  MotionClip c = ramp_clip(40, 0.02);
  c.frames[3].joints[1] = 0.5;  // knee limit is [-2.8, 0]
  CHECK_THROWS_AS(parse_clip(clip_to_json(c), g), ValidationError);
}

TEST_CASE("clip files round-trip through save and load") {
  TempDir dir("clip");
  const RobotGeometry g;
  const MotionClip c = generate_synthetic_clip(ClipKind::kHop, ClipParams{}, g);
  save_clip(c, dir / "hop.json");
  const MotionClip back = load_clip(dir / "hop.json", g);
  REQUIRE(back.frames.size() == c.frames.size());
  CHECK(back.dt == c.dt);
  CHECK(back.source == c.source);
  for (std::size_t i = 0; i < c.frames.size(); ++i) {
    CHECK(back.frames[i].root_x == c.frames[i].root_x);
    CHECK(back.frames[i].pitch == c.frames[i].pitch);
    CHECK(back.frames[i].joints == c.frames[i].joints);
  }
}

TEST_CASE("robot geometry round-trips and rejects bad lengths") {
  TempDir dir("robot");
  RobotGeometry g;
  g.l1 = 0.25;
  save_robot(g, dir / "robot.json");
  CHECK(load_robot(dir / "robot.json").l1 == 0.25);
  std::ofstream(dir / "bad.json") << R"({"l1": -1, "l2": 0.2, "d": 0.2})";
  CHECK_THROWS_AS(load_robot(dir / "bad.json"), ValidationError);
}

TEST_CASE("walk generator integrates the commanded speed") {
  ClipParams p;
  p.speed = 1.0;
  p.duration = 2.0;
  p.dt = 0.02;
  const MotionClip c = generate_synthetic_clip(ClipKind::kWalk, p, RobotGeometry{});
  CHECK(c.frames.size() == 101);
  CHECK(c.frames.back().root_x - c.frames.front().root_x == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("backflip generator reaches the apex and turns a full circle") {
  const RobotGeometry g;
  ClipParams p;
  p.apex_height = 0.6;
  const MotionClip c = generate_synthetic_clip(ClipKind::kBackflip, p, g);
  double max_z = 0.0;
  for (const auto& f : c.frames) max_z = std::max(max_z, f.root_z);
  // Frames sample the ballistic arc, so the sampled maximum sits within g dt^2 / 8 of the apex.
  CHECK(max_z <= 0.6 + 1e-12);
  CHECK(max_z >= 0.6 - 9.81 * p.dt * p.dt / 8.0 - 1e-12);
  // Pitch is counter-clockwise positive here, so a backflip turns by +2 pi.
  CHECK(c.frames.back().pitch - c.frames.front().pitch == doctest::Approx(2.0 * kPi).epsilon(1e-12));
}

TEST_CASE("backflip pitch is monotone in flight and wrapped steps stay below pi") {
  const RobotGeometry g;
  const MotionClip c = generate_synthetic_clip(ClipKind::kBackflip, ClipParams{}, g);
  bool airborne_seen = false;
  for (int i = 1; i <= c.last(); ++i) {
    const auto& a = c.frames[static_cast<std::size_t>(i - 1)];
    const auto& b = c.frames[static_cast<std::size_t>(i)];
    CHECK(std::abs(wrap_angle(b.pitch - a.pitch)) < kPi);
    const bool airborne = a.feet[0].z > 0.0 && a.feet[1].z > 0.0 && b.feet[0].z > 0.0 && b.feet[1].z > 0.0;
    if (airborne) {
      airborne_seen = true;
      CHECK(b.pitch >= a.pitch);
    }
  }
  CHECK(airborne_seen);
}

TEST_CASE("jump clips contain an airborne interval") {
  const RobotGeometry g;
  for (ClipKind kind : {ClipKind::kJumpForward, ClipKind::kBackflip}) {
    const MotionClip c = generate_synthetic_clip(kind, ClipParams{}, g);
    int airborne = 0;
    for (const auto& f : c.frames) airborne += (f.feet[0].z > 0.0 && f.feet[1].z > 0.0);
    CHECK(airborne > 0);
  }
}

TEST_CASE("hop in place has zero net displacement") {
  ClipParams p;
  p.speed = 0.0;
  const MotionClip c = generate_synthetic_clip(ClipKind::kHop, p, RobotGeometry{});
  CHECK(std::abs(c.frames.back().root_x - c.frames.front().root_x) < 1e-12);
}

TEST_CASE("generator rejects out-of-range parameters") {
  ClipParams p;
  p.speed = 2.5;
  CHECK_THROWS_AS(generate_synthetic_clip(ClipKind::kWalk, p, RobotGeometry{}), ValidationError);
  p = {};
  p.apex_height = 2.0;
  CHECK_THROWS_AS(generate_synthetic_clip(ClipKind::kBackflip, p, RobotGeometry{}), ValidationError);
}

TEST_CASE("dataset menu holds the seven fixed clips and every clip is valid") {
  const RobotGeometry g;
  const auto menu = default_dataset_menu();
  CHECK(menu.size() == 7);
  for (const auto& spec : menu) {
    const MotionClip c = generate_synthetic_clip(spec.kind, spec.params, g);
    CHECK_NOTHROW(c.validate(g));
    for (const auto& f : c.frames) CHECK(g.within_limits(f.joints, 1e-12));
  }
}

TEST_CASE("extract_segment takes offsets 1, 2, 10, 30 and clamps at the end") {
  const MotionClip c = ramp_clip(201, 0.02);
  auto idx = [&](int t) { return extract_segment(c, t).frame_index; };
  CHECK(idx(0) == std::array<int, 4>{1, 2, 10, 30});
  CHECK(idx(195) == std::array<int, 4>{196, 197, 200, 200});
  CHECK(idx(200) == std::array<int, 4>{200, 200, 200, 200});
  const MotionSegment s = extract_segment(c, 195, 3);
  CHECK(s.clip_id == 3);
  CHECK(s.frames[2].root_x == c.frames[200].root_x);
  CHECK_THROWS_AS(extract_segment(c, -1), IndexError);
  CHECK_THROWS_AS(extract_segment(c, 201), IndexError);
}

TEST_CASE("segment offsets are non-decreasing and bounded for every t") {
  const MotionClip c = generate_synthetic_clip(ClipKind::kJumpForward, ClipParams{}, RobotGeometry{});
  for (int t = 0; t <= c.last(); ++t) {
    const auto idx = extract_segment(c, t).frame_index;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      CHECK(idx[k] <= c.last());
      CHECK(idx[k] >= t);
      if (k) CHECK(idx[k] >= idx[k - 1]);
    }
  }
}

TEST_CASE("foot_fk closed-form cases") {
  const RobotGeometry g = no_offset_geometry();
  const JointVector zero{};
  auto feet = foot_fk(0.15, 0.5, 0.0, zero, g);
  CHECK(feet[0].x == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(feet[0].z == doctest::Approx(0.1).epsilon(1e-12));

  const JointVector hip90{kPi / 2, 0.0, kPi / 2, 0.0};
  feet = foot_fk(0.15, 0.5, 0.0, hip90, g);
  CHECK(feet[0].x == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(feet[0].z == doctest::Approx(0.5).epsilon(1e-12));

  feet = foot_fk(0.0, 0.5, kPi, zero, g);
  CHECK(std::abs(feet[1].x) < 1e-12);
  CHECK(feet[1].z == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("foot_fk matches an independent evaluation with hip offsets") {
  const RobotGeometry g;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const double x = mprior::testing::uniform(rng, -1, 1), z = mprior::testing::uniform(rng, 0, 1);
    const double p = mprior::testing::uniform(rng, -4, 4);
    JointVector q;
    for (auto& v : q) v = mprior::testing::uniform(rng, -2, 2);
    const auto feet = foot_fk(x, z, p, q, g);
    for (int f = 0; f < 2; ++f) {
      const double off = f == 0 ? g.d : -g.d;
      const double hx = x + std::cos(p) * off, hz = z + std::sin(p) * off;
      const double a1 = p + q[2 * f], a2 = a1 + q[2 * f + 1];
      CHECK(feet[f].x == doctest::Approx(hx + g.l1 * std::sin(a1) + g.l2 * std::sin(a2)).epsilon(1e-12));
      CHECK(feet[f].z == doctest::Approx(hz - g.l1 * std::cos(a1) - g.l2 * std::cos(a2)).epsilon(1e-12));
    }
  }
}

TEST_CASE("foot_fk is Lipschitz in each joint with constant l1 + l2") {
  const RobotGeometry g;
  std::mt19937_64 rng(5);
  const double eps = 1e-3;
  for (int trial = 0; trial < 200; ++trial) {
    JointVector q;
    for (auto& v : q) v = mprior::testing::uniform(rng, -2, 2);
    const double p = mprior::testing::uniform(rng, -3, 3);
    const auto base = foot_fk(0.0, 0.3, p, q, g);
    for (int j = 0; j < kNumJoints; ++j) {
      JointVector q2 = q;
      q2[j] += eps;
      const auto moved = foot_fk(0.0, 0.3, p, q2, g);
      for (int f = 0; f < 2; ++f) {
        CHECK(std::abs(moved[f].x - base[f].x) <= (g.l1 + g.l2) * eps + 1e-15);
        CHECK(std::abs(moved[f].z - base[f].z) <= (g.l1 + g.l2) * eps + 1e-15);
      }
    }
  }
}

TEST_CASE("resample at the original dt is the identity") {
  const RobotGeometry g;
  const MotionClip c = generate_synthetic_clip(ClipKind::kWalk, ClipParams{}, g);
  const MotionClip r = resample_clip(c, c.dt, g);
  REQUIRE(r.frames.size() == c.frames.size());
  for (std::size_t i = 0; i < c.frames.size(); ++i) {
    CHECK(r.frames[i].root_x == c.frames[i].root_x);
    CHECK(r.frames[i].root_z == c.frames[i].root_z);
    CHECK(r.frames[i].pitch == c.frames[i].pitch);
    CHECK(r.frames[i].joints == c.frames[i].joints);
  }
}

TEST_CASE("resample interpolates linearly and along the shortest pitch arc") {
  const RobotGeometry g;
  MotionClip c;
  c.dt = 1.0;
  RefPose a, b;
  a.root_x = 0.0;
  b.root_x = 1.0;
  a.pitch = 3.0;
  b.pitch = -3.0;
  c.frames = {a, b};
  const MotionClip r = resample_clip(c, 0.5, g);
  REQUIRE(r.frames.size() == 3);
  CHECK(r.frames[0].root_x == 0.0);
  CHECK(r.frames[1].root_x == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.frames[2].root_x == 1.0);
  // Shortest arc from 3 to -3 passes through pi: the midpoint is 3 + (2 pi - 6) / 2.
  CHECK(std::abs(wrap_angle(r.frames[1].pitch)) == doctest::Approx(kPi).epsilon(1e-9));
  CHECK(std::abs(r.frames[1].pitch) > 3.0);
}

TEST_CASE("resample preserves duration to within one target step") {
  const RobotGeometry g;
  const MotionClip c = generate_synthetic_clip(ClipKind::kHop, ClipParams{}, g);
  for (double dt : {0.01, 0.015, 0.033}) {
    const MotionClip r = resample_clip(c, dt, g);
    CHECK(std::abs(r.duration() - c.duration()) <= dt);
    for (const auto& p : r.frames) {
      const auto fk = foot_fk(p.root_x, p.root_z, p.pitch, p.joints, g);
      CHECK(p.feet[0].x == fk[0].x);
    }
  }
}

TEST_CASE("reference velocity of a walk matches the commanded speed") {
  ClipParams p;
  p.speed = 1.0;
  const MotionClip c = generate_synthetic_clip(ClipKind::kWalk, p, RobotGeometry{});
  double mean = 0.0;
  for (int i = 0; i < c.last(); ++i) mean += reference_velocity(c, i).vx;
  CHECK(mean / c.last() == doctest::Approx(1.0).epsilon(1e-9));
}
