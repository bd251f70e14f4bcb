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

#include "mprior/synthetic_clips.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kGravity = 9.81;

// Cubic Hermite segment from (p0, v0) to (p1, v1) over duration T.
double hermite(double p0, double v0, double p1, double v1, double T, double tau) {
  const double s = std::clamp(tau / T, 0.0, 1.0);
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * T * v0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * T * v1;
}

double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

struct RootSample {
  double x, z, pitch;
};

// Samples root(t) at the clip rate and places each foot with IK at
// foot_world(t, foot). Frames are exactly at k * dt.
MotionClip sample_with_feet(const std::string& name, ClipSource source, double dt, double duration,
                            const std::function<RootSample(double)>& root,
                            const std::function<Vec2(double, int)>& foot_world, const RobotGeometry& g) {
  MotionClip clip;
  clip.name = name;
  clip.source = source;
  clip.dt = dt;
  const int n = static_cast<int>(std::lround(duration / dt));
  clip.frames.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    const double t = k * dt;
    const RootSample r = root(t);
    RefPose p;
    p.root_x = r.x;
    p.root_z = r.z;
    p.pitch = r.pitch;
    for (int f = 0; f < kNumFeet; ++f) {
      const Vec2 hip = hip_position(r.x, r.z, r.pitch, f, g);
      const auto q = leg_ik(foot_world(t, f) - hip, r.pitch, g);
      p.joints[2 * f] = q[0];
      p.joints[2 * f + 1] = q[1];
    }
    p.joints = g.clamp_joints(p.joints);
    p.update_feet(g);
    clip.frames.push_back(p);
  }
  return clip;
}

MotionClip make_stand(const ClipParams& prm, const RobotGeometry& g) {
  const double h = prm.height;
  return sample_with_feet(
      "stand", ClipSource::kSynthetic, prm.dt, prm.duration, [h](double) { return RootSample{0.0, h, 0.0}; },
      [&g](double, int f) { return Vec2{f == 0 ? g.d : -g.d, 0.0}; }, g);
}

// Periodic two-beat gait: each leg alternates a stance phase (foot fixed on
// the ground) and a swing phase along a raised cosine arc.
MotionClip make_gait(ClipKind kind, const ClipParams& prm, const RobotGeometry& g) {
  const bool trot = kind == ClipKind::kTrotLike;
  const double duty = trot ? 0.5 : 0.65;
  const double base_freq = trot ? 2.5 : 1.8;
  const double v = prm.speed;
  constexpr double kMaxStep = 0.3;
  double freq = prm.frequency > 0.0 ? prm.frequency : std::max(base_freq, v * duty / kMaxStep);
  const double step = v * duty / freq;
  const double h = prm.height;
  const double clearance = prm.swing_height;

  auto rel_foot = [=](double t, int f) {
    double phase = freq * t + (f == 0 ? 0.0 : 0.5);
    phase -= std::floor(phase);
    if (phase < duty) return Vec2{step / 2 - step * phase / duty, -h};
    const double s = (phase - duty) / (1.0 - duty);
    return Vec2{-step / 2 + step * (1.0 - std::cos(kPi * s)) / 2.0, -h + clearance * std::sin(kPi * s)};
  };
  auto root = [=](double t) { return RootSample{v * t, h, 0.0}; };
  auto foot = [&](double t, int f) {
    const RootSample r = root(t);
    return hip_position(r.x, r.z, r.pitch, f, g) + rel_foot(t, f);
  };
  return sample_with_feet(std::string(to_string(kind)), ClipSource::kSynthetic, prm.dt, prm.duration, root, foot, g);
}

// Pronking hop: both legs in stance together, a sinusoidal dip whose end
// velocities match a ballistic flight of height hop_height.
MotionClip make_hop(const ClipParams& prm, const RobotGeometry& g) {
  const double h = prm.height;
  const double v0 = std::sqrt(2.0 * kGravity * prm.hop_height);
  const double tf = 2.0 * v0 / kGravity;
  const double ts = prm.stance_time;
  const double period = ts + tf;
  const double dip = v0 * ts / kPi;
  const double v = prm.speed;
  const double step = v * ts;

  auto root = [=](double t) {
    double tau = std::fmod(t, period);
    double z = tau < ts ? h - dip * std::sin(kPi * tau / ts)
                        : h + v0 * (tau - ts) - 0.5 * kGravity * (tau - ts) * (tau - ts);
    return RootSample{v * t, z, 0.0};
  };
  auto foot = [&, root](double t, int f) {
    const RootSample r = root(t);
    const Vec2 hip = hip_position(r.x, r.z, r.pitch, f, g);
    const double tau = std::fmod(t, period);
    if (tau < ts) {
      // Stance: foot planted where the hip is at mid-stance.
      const double cycle_start = t - tau;
      const RootSample mid = root(cycle_start + ts / 2);
      return Vec2{hip_position(mid.x, mid.z, 0.0, f, g).x, 0.0};
    }
    const double s = (tau - ts) / tf;
    return hip + Vec2{-step / 2 + step * (1.0 - std::cos(kPi * s)) / 2.0, -h};
  };
  MotionClip clip = sample_with_feet("hop", ClipSource::kSynthetic, prm.dt, prm.duration, root, foot, g);
  return clip;
}

// Phase layout shared by jump_forward and backflip.
struct JumpTimeline {
  double rest_before;
  double push;
  double flight;
  double land;
  double rest_after;
  double t_takeoff() const { return rest_before + push; }
  double t_touchdown() const { return t_takeoff() + flight; }
  double t_settled() const { return t_touchdown() + land; }
  double total() const { return t_settled() + rest_after; }
};

// Rest time is stretched so that the flight apex falls exactly on a frame.
JumpTimeline make_timeline(double flight, double dt, double min_total) {
  JumpTimeline tl{0.5, 0.3, flight, 0.3, 0.8};
  const double apex = tl.t_takeoff() + flight / 2;
  const double aligned = std::ceil(apex / dt - 1e-9) * dt;
  tl.rest_before += aligned - apex;
  if (tl.total() < min_total) tl.rest_after += min_total - tl.total();
  return tl;
}

MotionClip make_jump_forward(const ClipParams& prm, const RobotGeometry& g) {
  const double h = prm.height;
  const double v0 = std::sqrt(2.0 * kGravity * (prm.apex_height - h));
  const double flight = 2.0 * v0 / kGravity;
  const JumpTimeline tl = make_timeline(flight, prm.dt, prm.duration);
  const double vx = prm.flight_distance / flight;
  const double push_travel = vx * tl.push / 2.0;
  const double x_takeoff = push_travel;
  const double x_touchdown = x_takeoff + prm.flight_distance;
  const double x_final = x_touchdown + push_travel;

  auto root = [=](double t) {
    if (t < tl.rest_before) return RootSample{0.0, h, 0.0};
    if (t < tl.t_takeoff()) {
      const double tau = t - tl.rest_before;
      return RootSample{hermite(0.0, 0.0, x_takeoff, vx, tl.push, tau), hermite(h, 0.0, h, v0, tl.push, tau), 0.0};
    }
    if (t < tl.t_touchdown()) {
      const double tau = t - tl.t_takeoff();
      return RootSample{x_takeoff + vx * tau, h + v0 * tau - 0.5 * kGravity * tau * tau, 0.0};
    }
    if (t < tl.t_settled()) {
      const double tau = t - tl.t_touchdown();
      return RootSample{hermite(x_touchdown, vx, x_final, 0.0, tl.land, tau), hermite(h, -v0, h, 0.0, tl.land, tau),
                        0.0};
    }
    return RootSample{x_final, h, 0.0};
  };
  auto foot = [&, root](double t, int f) {
    const double side = f == 0 ? g.d : -g.d;
    if (t < tl.t_takeoff()) return Vec2{side, 0.0};
    if (t >= tl.t_touchdown()) return Vec2{x_final + side, 0.0};
    const RootSample r = root(t);
    const double s = (t - tl.t_takeoff()) / flight;
    const double rel_x = -push_travel + 2.0 * push_travel * (1.0 - std::cos(kPi * s)) / 2.0;
    return hip_position(r.x, r.z, r.pitch, f, g) + Vec2{rel_x, -h};
  };
  return sample_with_feet("jump_forward", ClipSource::kOptimized, prm.dt, tl.total(), root, foot, g);
}

// In-place backflip. The trunk rotates at constant rate during flight and the
// clip's net pitch change is exactly 2*pi. Legs are planted during push and
// landing and tuck in joint space while airborne.
MotionClip make_backflip(const ClipParams& prm, const RobotGeometry& g) {
  const double h = prm.height;
  const double z_takeoff = h + 0.04;
  const double v0 = std::sqrt(2.0 * kGravity * (prm.apex_height - z_takeoff));
  const double flight = 2.0 * v0 / kGravity;
  // Lean back by pitch_takeoff before leaving the ground and finish the last
  // pitch_takeoff of the turn after touchdown; power-law easing keeps pitch
  // monotone with a continuous rate at both phase boundaries.
  const double pitch_takeoff = 0.6;
  const double omega = (2.0 * kPi - 2.0 * pitch_takeoff) / flight;
  const JumpTimeline tl = make_timeline(flight, prm.dt, prm.duration);
  const double k_push = std::max(2.0, omega * tl.push / pitch_takeoff);
  const double k_land = std::max(2.0, omega * tl.land / pitch_takeoff);

  auto root = [=](double t) {
    if (t < tl.rest_before) return RootSample{0.0, h, 0.0};
    if (t < tl.t_takeoff()) {
      const double tau = t - tl.rest_before;
      return RootSample{0.0, hermite(h, 0.0, z_takeoff, v0, tl.push, tau),
                        pitch_takeoff * std::pow(tau / tl.push, k_push)};
    }
    if (t < tl.t_touchdown()) {
      const double tau = t - tl.t_takeoff();
      return RootSample{0.0, z_takeoff + v0 * tau - 0.5 * kGravity * tau * tau, pitch_takeoff + omega * tau};
    }
    if (t < tl.t_settled()) {
      const double tau = t - tl.t_touchdown();
      return RootSample{0.0, hermite(z_takeoff, -v0, h, 0.0, tl.land, tau),
                        2.0 * kPi - pitch_takeoff * std::pow(1.0 - tau / tl.land, k_land)};
    }
    return RootSample{0.0, h, 2.0 * kPi};
  };

  auto planted = [&](const RootSample& r) {
    JointVector q{};
    for (int f = 0; f < kNumFeet; ++f) {
      const Vec2 foot{f == 0 ? g.d : -g.d, 0.0};
      const auto leg = leg_ik(foot - hip_position(r.x, r.z, r.pitch, f, g), r.pitch, g);
      q[2 * f] = leg[0];
      q[2 * f + 1] = leg[1];
    }
    return g.clamp_joints(q);
  };
  const JointVector q_takeoff = planted(root(tl.t_takeoff() - 1e-9));
  const JointVector q_touchdown = planted(root(tl.t_touchdown() + 1e-9));
  const JointVector q_tuck{1.6, -2.6, 1.6, -2.6};

  MotionClip clip;
  clip.name = "backflip";
  clip.source = ClipSource::kOptimized;
  clip.dt = prm.dt;
  const int n = static_cast<int>(std::lround(tl.total() / prm.dt));
  for (int k = 0; k <= n; ++k) {
    const double t = k * prm.dt;
    const RootSample r = root(t);
    RefPose p;
    p.root_x = r.x;
    p.root_z = r.z;
    p.pitch = r.pitch;
    if (t < tl.t_takeoff() || t >= tl.t_touchdown()) {
      p.joints = planted(r);
    } else {
      const double s = (t - tl.t_takeoff()) / flight;
      // Retract quickly after takeoff, extend late before touchdown.
      const double tuck_in = std::min(1.0, s / 0.25);
      const double tuck_out = smoothstep((s - 0.7) / 0.3);
      for (int j = 0; j < kNumJoints; ++j) {
        const double a = q_takeoff[j] + (q_tuck[j] - q_takeoff[j]) * (tuck_in * (2.0 - tuck_in));
        p.joints[j] = a + (q_touchdown[j] - a) * tuck_out;
      }
      p.joints = g.clamp_joints(p.joints);
    }
    p.update_feet(g);
    clip.frames.push_back(p);
  }
  return clip;
}

}  // namespace

std::string_view to_string(ClipKind kind) {
  switch (kind) {
    case ClipKind::kStand:
      return "stand";
    case ClipKind::kWalk:
      return "walk";
    case ClipKind::kTrotLike:
      return "trot_like";
    case ClipKind::kHop:
      return "hop";
    case ClipKind::kJumpForward:
      return "jump_forward";
    case ClipKind::kBackflip:
      return "backflip";
  }
  return "stand";
}

ClipKind clip_kind_from_string(std::string_view s) {
  for (ClipKind k : {ClipKind::kStand, ClipKind::kWalk, ClipKind::kTrotLike, ClipKind::kHop, ClipKind::kJumpForward,
                     ClipKind::kBackflip}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError(fmt::format("unknown clip kind '{}'", s));
}

void validate_params(ClipKind kind, const ClipParams& p, const RobotGeometry& g) {
  auto require = [](bool ok, std::string_view what) {
    if (!ok) throw ValidationError(fmt::format("clip parameters: {}", what));
  };
  require(p.dt > 0.0 && p.dt <= 0.1, "dt must be in (0, 0.1]");
  require(p.height > 0.15 && p.height < g.l1 + g.l2, "height must be in (0.15, l1 + l2)");
  switch (kind) {
    case ClipKind::kStand:
      require(p.duration >= (kMinClipFrames - 1) * p.dt, "duration too short for 31 frames");
      break;
    case ClipKind::kWalk:
    case ClipKind::kTrotLike:
      require(p.speed >= 0.0 && p.speed <= 2.0, "speed must be in [0, 2] m/s");
      require(p.frequency >= 0.0 && p.frequency <= 5.0, "frequency must be in [0, 5] Hz");
      require(p.swing_height >= 0.0 && p.swing_height <= 0.15, "swing_height must be in [0, 0.15] m");
      require(p.duration >= (kMinClipFrames - 1) * p.dt, "duration too short for 31 frames");
      break;
    case ClipKind::kHop:
      require(p.speed >= 0.0 && p.speed <= 2.0, "speed must be in [0, 2] m/s");
      require(p.hop_height >= 0.01 && p.hop_height <= 0.25, "hop_height must be in [0.01, 0.25] m");
      require(p.stance_time >= 0.1 && p.stance_time <= 0.5, "stance_time must be in [0.1, 0.5] s");
      require(p.duration >= (kMinClipFrames - 1) * p.dt, "duration too short for 31 frames");
      break;
    case ClipKind::kJumpForward:
      require(p.apex_height >= p.height + 0.05 && p.apex_height <= 1.0, "apex_height must be in [height + 0.05, 1]");
      require(p.flight_distance >= 0.0 && p.flight_distance <= 1.0, "flight_distance must be in [0, 1] m");
      break;
    case ClipKind::kBackflip:
      require(p.apex_height >= p.height + 0.15 && p.apex_height <= 1.2, "apex_height must be in [height + 0.15, 1.2]");
      break;
  }
}

MotionClip generate_synthetic_clip(ClipKind kind, const ClipParams& params, const RobotGeometry& g) {
  validate_params(kind, params, g);
  MotionClip clip;
  switch (kind) {
    case ClipKind::kStand:
      clip = make_stand(params, g);
      break;
    case ClipKind::kWalk:
    case ClipKind::kTrotLike:
      clip = make_gait(kind, params, g);
      break;
    case ClipKind::kHop:
      clip = make_hop(params, g);
      break;
    case ClipKind::kJumpForward:
      clip = make_jump_forward(params, g);
      break;
    case ClipKind::kBackflip:
      clip = make_backflip(params, g);
      break;
  }
  clip.validate(g);
  return clip;
}

std::vector<NamedClipSpec> default_dataset_menu() {
  std::vector<NamedClipSpec> menu;
  ClipParams stand;
  stand.duration = 2.0;
  menu.push_back({"stand", ClipKind::kStand, stand});

  ClipParams walk_slow;
  walk_slow.speed = 0.5;
  walk_slow.duration = 4.0;
  menu.push_back({"walk_0.5", ClipKind::kWalk, walk_slow});

  ClipParams walk_fast = walk_slow;
  walk_fast.speed = 1.0;
  menu.push_back({"walk_1.0", ClipKind::kWalk, walk_fast});

  ClipParams trot;
  trot.speed = 1.2;
  trot.duration = 4.0;
  menu.push_back({"trot_like", ClipKind::kTrotLike, trot});

  ClipParams hop;
  hop.speed = 0.0;
  hop.duration = 3.0;
  menu.push_back({"hop", ClipKind::kHop, hop});

  ClipParams jump;
  jump.apex_height = 0.5;
  jump.flight_distance = 0.4;
  menu.push_back({"jump_forward", ClipKind::kJumpForward, jump});

  ClipParams flip;
  flip.apex_height = 0.6;
  menu.push_back({"backflip", ClipKind::kBackflip, flip});
  return menu;
}

}  // namespace mprior
