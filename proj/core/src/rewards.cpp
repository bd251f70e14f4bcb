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

#include "mprior/rewards.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {

void RewardWeights::validate() const {
  for (double v : {func_ori, func_pos_xy, func_pos_z, style_adv, style_joint})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("reward weights must be finite and non-negative");
}

std::string_view to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::kVim: return "vim";
    case RewardMode::kVimNoSched: return "vim-no-sched";
    case RewardMode::kMotionImitation: return "motion-imitation";
    case RewardMode::kGail: return "gail";
  }
  return "?";
}

RewardMode reward_mode_from_string(std::string_view s) {
  std::string norm(s);
  std::replace(norm.begin(), norm.end(), '_', '-');
  for (RewardMode m : {RewardMode::kVim, RewardMode::kVimNoSched, RewardMode::kMotionImitation, RewardMode::kGail})
    if (to_string(m) == norm) return m;
  throw ConfigError(fmt::format("unknown reward mode '{}' (expected vim, vim-no-sched, motion-imitation, gail)", s));
}

FunctionalityReward functionality_reward(const RobotState& state, const RefPose& ref, const RewardWeights& w) {
  const double dq = wrap_angle(state.pitch - ref.pitch);
  const double dx = state.root_x - ref.root_x;
  const double dz = state.root_z - ref.root_z;
  FunctionalityReward r;
  r.r_ori = std::exp(-kOriScale * dq * dq);
  r.r_pos_xy = std::exp(-kPosXyScale * dx * dx);
  r.r_pos_z = std::exp(-kPosZScale * dz * dz);
  r.weighted = w.func_ori * r.r_ori + w.func_pos_xy * r.r_pos_xy + w.func_pos_z * r.r_pos_z;
  return r;
}

double joint_style_reward(const RobotState& state, const RefPose& ref, const RobotGeometry& g) {
  double joint_sq = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    const double d = state.joints[j] - ref.joints[j];
    joint_sq += d * d;
  }
  const auto feet = foot_fk(state.root_x, state.root_z, state.pitch, state.joints, g);
  double foot_sq = 0.0;
  for (int f = 0; f < kNumFeet; ++f) {
    const Vec2 d = feet[f] - ref.feet[f];
    foot_sq += d.x * d.x + d.z * d.z;
  }
  return std::exp(-kJointScale * joint_sq) + std::exp(-kFootScale * foot_sq);
}

double adversarial_style_reward(double d_out) {
  const double e = 1.0 - d_out;
  return std::clamp(1.0 - 0.25 * e * e, 0.0, 1.0);
}

double schedule_style_reward(double r_adv, double r_joint, double mean_adv, const RewardWeights& w) {
  if (!(mean_adv >= 0.0 && mean_adv <= 1.0))
    throw ValidationError(fmt::format("mean adversarial reward {} outside [0, 1]", mean_adv));
  return w.style_adv * r_adv + w.style_joint * r_joint + w.style_adv * (1.0 - mean_adv) * r_joint;
}

double combine_reward(const RewardBreakdown& b, const RewardWeights& w, RewardMode mode) {
  const double func = w.func_ori * b.r_ori + w.func_pos_xy * b.r_pos_xy + w.func_pos_z * b.r_pos_z;
  switch (mode) {
    case RewardMode::kVim: return func + schedule_style_reward(b.r_adv, b.r_joint, b.mean_adv, w);
    case RewardMode::kVimNoSched: return func + w.style_adv * b.r_adv + w.style_joint * b.r_joint;
    case RewardMode::kMotionImitation: return func + w.style_joint * b.r_joint;
    case RewardMode::kGail: return w.style_adv * b.r_adv;
  }
  throw ConfigError("unknown reward mode");
}

RewardBreakdown total_reward(const RobotState& /*prev_state*/, const RobotState& state, const RefPose& ref,
                             double d_out, double mean_adv, const RewardWeights& w, RewardMode mode,
                             const RobotGeometry& g) {
  const FunctionalityReward f = functionality_reward(state, ref, w);
  RewardBreakdown b;
  b.r_ori = f.r_ori;
  b.r_pos_xy = f.r_pos_xy;
  b.r_pos_z = f.r_pos_z;
  b.r_joint = joint_style_reward(state, ref, g);
  b.r_adv = adversarial_style_reward(d_out);
  b.mean_adv = mean_adv;
  b.scheduled_style = schedule_style_reward(b.r_adv, b.r_joint, mean_adv, w);
  b.total = combine_reward(b, w, mode);
  return b;
}

AdversarialEma::AdversarialEma(int num_clips, double decay)
    : decay_(decay), values_(static_cast<std::size_t>(std::max(num_clips, 0)), 0.0) {
  if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("EMA decay must be in [0, 1)");
}

double AdversarialEma::value(int clip_id) const {
  if (clip_id < 0 || clip_id >= num_clips()) throw IndexError(fmt::format("clip id {} out of range", clip_id));
  return values_[static_cast<std::size_t>(clip_id)];
}

void AdversarialEma::update(int clip_id, double r_adv) {
  if (clip_id < 0 || clip_id >= num_clips()) throw IndexError(fmt::format("clip id {} out of range", clip_id));
  double& v = values_[static_cast<std::size_t>(clip_id)];
  v = std::clamp(decay_ * v + (1.0 - decay_) * r_adv, 0.0, 1.0);
}

void AdversarialEma::set_values(std::vector<double> v) {
  if (v.size() != values_.size()) throw CompatibilityError("EMA state size does not match clip count");
  values_ = std::move(v);
}

}  // namespace mprior
