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

#include "mprior/eval.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mprior/csv.hpp"
#include "mprior/error.hpp"

namespace mprior {

TrackingErrors step_errors(const RobotState& s, const RefPose& ref, const RobotGeometry& g) {
  TrackingErrors e;
  e.root_x = std::abs(s.root_x - ref.root_x);
  e.root_z = std::abs(s.root_z - ref.root_z);
  e.root_ori = std::abs(wrap_angle(s.pitch - ref.pitch));
  double sq = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    const double d = s.joints[j] - ref.joints[j];
    sq += d * d;
  }
  e.joint = sq / kNumJoints;
  const auto feet = foot_fk(s.root_x, s.root_z, s.pitch, s.joints, g);
  for (int f = 0; f < kNumFeet; ++f) e.foot += norm(feet[f] - ref.feet[f]) / kNumFeet;
  return e;
}

EpisodeMetrics tracking_metrics(const EpisodeTrajectory& traj, const MotionClip& clip, const RobotGeometry& g) {
  const int steps = static_cast<int>(traj.states.size()) - 1;
  if (steps < 1) throw ValidationError("trajectory needs a reset state and at least one step");
  if (traj.start < 0 || traj.start + steps > clip.last())
    throw ValidationError(fmt::format("trajectory (start {}, {} steps) does not fit clip '{}' with {} frames", traj.start,
                                      steps, clip.name, clip.frames.size()));
  if (!traj.rewards.empty() && static_cast<int>(traj.rewards.size()) != steps)
    throw ValidationError("trajectory reward count does not match its step count");
  EpisodeMetrics m;
  m.clip_id = traj.clip_id;
  m.start = traj.start;
  m.length = steps;
  m.reached_end = !traj.terminated && traj.start + steps == clip.last();
  for (double r : traj.rewards) m.ret += r;
  for (int k = 1; k <= steps; ++k) {
    const TrackingErrors e = step_errors(traj.states[static_cast<std::size_t>(k)],
                                         clip.frames[static_cast<std::size_t>(traj.start + k)], g);
    m.err.root_x += e.root_x;
    m.err.root_z += e.root_z;
    m.err.root_ori += e.root_ori;
    m.err.joint += e.joint;
    m.err.foot += e.foot;
  }
  const double inv = 1.0 / steps;
  m.err.root_x *= inv;
  m.err.root_z *= inv;
  m.err.root_ori *= inv;
  m.err.joint *= inv;
  m.err.foot *= inv;
  return m;
}

std::vector<EpisodeMetrics> tracking_metrics(std::span<const EpisodeTrajectory> trajs,
                                             std::span<const MotionClip> clips, const RobotGeometry& g) {
  std::vector<EpisodeMetrics> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) {
    if (t.clip_id < 0 || t.clip_id >= static_cast<int>(clips.size()))
      throw ValidationError(fmt::format("trajectory refers to clip {} but only {} clips were given", t.clip_id,
                                        clips.size()));
    out.push_back(tracking_metrics(t, clips[static_cast<std::size_t>(t.clip_id)], g));
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& path, std::span<const TrajectoryRow> rows) {
  CsvWriter w(path, "trajectory", {"time", "root_x", "root_z", "pitch", "vx", "vz", "pitch_rate", "q0", "q1", "q2",
                                   "q3", "qd0", "qd1", "qd2", "qd3", "contact0", "contact1", "a0", "a1", "a2", "a3",
                                   "fn0", "ft0", "fn1", "ft1", "ref_x", "ref_z", "ref_pitch", "ref_q0", "ref_q1",
                                   "ref_q2", "ref_q3", "r_ori", "r_pos_xy", "r_pos_z", "r_joint", "r_adv", "mean_adv",
                                   "scheduled_style", "total", "terminated"});
  for (const auto& r : rows) {
    auto row = w.row();
    const RobotState& s = r.state;
    row << s.time << s.root_x << s.root_z << s.pitch << s.vx << s.vz << s.pitch_rate;
    for (double q : s.joints) row << q;
    for (double q : s.joint_vels) row << q;
    for (bool c : s.foot_contact) row << (c ? 1 : 0);
    for (double a : s.last_action) row << a;
    for (const auto& f : r.contact.feet) row << f.normal << f.tangential;
    row << r.ref.root_x << r.ref.root_z << r.ref.pitch;
    for (double q : r.ref.joints) row << q;
    const RewardBreakdown& b = r.reward;
    row << b.r_ori << b.r_pos_xy << b.r_pos_z << b.r_joint << b.r_adv << b.mean_adv << b.scheduled_style << b.total
        << (b.terminated ? 1 : 0);
    w.write(row);
  }
}

}  // namespace mprior
