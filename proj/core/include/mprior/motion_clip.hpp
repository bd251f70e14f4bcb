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
#include <string_view>
#include <vector>

#include "mprior/robot.hpp"

namespace mprior {

// One reference pose. Pitch is stored unwrapped so that flips accumulate
// +-2*pi instead of aliasing back to zero.
struct RefPose {
  double root_x = 0.0;
  double root_z = 0.0;
  double pitch = 0.0;
  JointVector joints{};
  std::array<Vec2, kNumFeet> feet{};  // always derived with foot_fk

  void update_feet(const RobotGeometry& g) { feet = foot_fk(root_x, root_z, pitch, joints, g); }
};

enum class ClipSource { kMocapLike, kSynthetic, kOptimized };

std::string_view to_string(ClipSource source);
ClipSource clip_source_from_string(std::string_view s);

struct MotionClip {
  std::string name;
  ClipSource source = ClipSource::kSynthetic;
  double dt = 0.02;
  std::vector<RefPose> frames;

  // Index of the last frame.
  int last() const { return static_cast<int>(frames.size()) - 1; }
  double duration() const { return dt * last(); }

  // Checks dt, length, finiteness, joint limits and frame-to-frame continuity.
  // Throws ValidationError naming the first offending frame.
  void validate(const RobotGeometry& g) const;
};

inline constexpr int kMinClipFrames = 31;
inline constexpr double kMaxFrameDisplacement = 0.5;

MotionClip load_clip(const std::filesystem::path& path, const RobotGeometry& g);
MotionClip parse_clip(std::string_view json_text, const RobotGeometry& g, std::string_view origin = "<memory>");
void save_clip(const MotionClip& clip, const std::filesystem::path& path);
std::string clip_to_json(const MotionClip& clip);

inline constexpr std::array<int, 4> kSegmentOffsets{1, 2, 10, 30};

// The future reference frames the encoder sees at step t.
struct MotionSegment {
  std::array<RefPose, kSegmentOffsets.size()> frames;
  std::array<int, kSegmentOffsets.size()> frame_index{};
  int clip_id = 0;
  int t = 0;
};

// Frames at min(t + k, T) for k in kSegmentOffsets. Throws IndexError unless 0 <= t <= T.
MotionSegment extract_segment(const MotionClip& clip, int t, int clip_id = 0);

// Linear interpolation of root and joints, shortest-arc interpolation of
// pitch, feet recomputed by FK.
MotionClip resample_clip(const MotionClip& clip, double target_dt, const RobotGeometry& g);

// Finite-difference velocities of a reference frame: forward difference,
// backward difference at the final frame.
struct RefVelocity {
  double vx = 0.0;
  double vz = 0.0;
  double pitch_rate = 0.0;
  JointVector joint_vels{};
};
RefVelocity reference_velocity(const MotionClip& clip, int i);

}  // namespace mprior
