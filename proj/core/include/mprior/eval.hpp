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

#include <filesystem>
#include <span>
#include <vector>

#include "mprior/motion_clip.hpp"
#include "mprior/rewards.hpp"
#include "mprior/sim.hpp"

namespace mprior {

// states[0] is the reset state at frame `start`; states[k] was reached after k
// control steps and is compared with frame start + k.
struct EpisodeTrajectory {
  int clip_id = 0;
  int start = 0;
  std::vector<RobotState> states;
  std::vector<double> rewards;  // one per step, optional
  bool terminated = false;      // ended by the tracking bounds rather than the clip end
};

struct TrackingErrors {
  double root_x = 0.0;    // |dx| [m]
  double root_z = 0.0;    // |dz| [m]
  double root_ori = 0.0;  // |wrap(dpitch)| [rad]
  double joint = 0.0;     // mean over joints of dtheta^2 [rad^2/joint]
  double foot = 0.0;      // mean Euclidean foot error [m]
};

TrackingErrors step_errors(const RobotState& s, const RefPose& ref, const RobotGeometry& g);

struct EpisodeMetrics {
  int clip_id = 0;
  int start = 0;
  int length = 0;  // control steps taken
  bool reached_end = false;
  double ret = 0.0;
  TrackingErrors err;
};

// Errors averaged over the steps of one episode. Throws ValidationError if
// the trajectory does not fit its clip (bad clip id, start, or too many states).
EpisodeMetrics tracking_metrics(const EpisodeTrajectory& traj, const MotionClip& clip, const RobotGeometry& g);
std::vector<EpisodeMetrics> tracking_metrics(std::span<const EpisodeTrajectory> trajs,
                                             std::span<const MotionClip> clips, const RobotGeometry& g);

// One row per control step: time, full state, contact forces of the last
// substep, reference pose, and the reward breakdown.
struct TrajectoryRow {
  RobotState state;
  ContactSample contact;
  RefPose ref;
  RewardBreakdown reward;
};
void write_trajectory_csv(const std::filesystem::path& path, std::span<const TrajectoryRow> rows);

}  // namespace mprior
