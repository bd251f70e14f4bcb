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

#include <string_view>
#include <vector>

#include "mprior/motion_clip.hpp"

namespace mprior {

enum class ClipKind { kStand, kWalk, kTrotLike, kHop, kJumpForward, kBackflip };

std::string_view to_string(ClipKind kind);
ClipKind clip_kind_from_string(std::string_view s);

// Generator parameters. Not every field applies to every kind:
//   stand        duration, height
//   walk/trot    speed [0, 2] m/s, duration, height, frequency (0 = automatic), swing_height
//   hop          speed [0, 2] m/s, duration, height, hop_height [0.01, 0.25] m, stance_time
//   jump_forward apex_height (absolute, > height + 0.05), flight_distance [0, 1] m
//   backflip     apex_height (absolute, > height + 0.1)
// Jumps and flips have fixed phase timings; `duration` only extends the final rest.
struct ClipParams {
  double speed = 1.0;
  double duration = 2.0;
  double dt = 0.02;
  double height = 0.29;
  double frequency = 0.0;
  double swing_height = 0.06;
  double hop_height = 0.05;
  double stance_time = 0.22;
  double apex_height = 0.5;
  double flight_distance = 0.4;
};

// Throws ValidationError when a parameter is out of its documented range.
void validate_params(ClipKind kind, const ClipParams& params, const RobotGeometry& g);

MotionClip generate_synthetic_clip(ClipKind kind, const ClipParams& params, const RobotGeometry& g);

struct NamedClipSpec {
  std::string name;
  ClipKind kind;
  ClipParams params;
};

// The fixed dataset menu: stand, walk at two speeds, trot-like, hop,
// jump_forward and backflip.
std::vector<NamedClipSpec> default_dataset_menu();

}  // namespace mprior
