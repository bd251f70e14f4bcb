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
#include "mprior/sim.hpp"

namespace mprior {

struct RewardWeights {
  double func_ori = 0.3;
  double func_pos_xy = 0.3;
  double func_pos_z = 0.4;
  double style_adv = 0.5;
  double style_joint = 0.5;

  void validate() const;
};

enum class RewardMode { kVim, kVimNoSched, kMotionImitation, kGail };

std::string_view to_string(RewardMode mode);
// Accepts both dash and underscore spellings ("vim-no-sched", "vim_no_sched").
// Throws ConfigError for anything else.
RewardMode reward_mode_from_string(std::string_view s);

struct FunctionalityReward {
  double r_ori = 0.0;
  double r_pos_xy = 0.0;
  double r_pos_z = 0.0;
  double weighted = 0.0;
};

struct RewardBreakdown {
  double r_ori = 0.0;
  double r_pos_xy = 0.0;
  double r_pos_z = 0.0;
  double r_joint = 0.0;
  double r_adv = 0.0;
  double mean_adv = 0.0;
  double scheduled_style = 0.0;
  double total = 0.0;
  bool terminated = false;
};

inline constexpr double kOriScale = 10.0;
inline constexpr double kPosXyScale = 20.0;
inline constexpr double kPosZScale = 80.0;
inline constexpr double kJointScale = 5.0;
inline constexpr double kFootScale = 20.0;

FunctionalityReward functionality_reward(const RobotState& state, const RefPose& ref, const RewardWeights& w);

// exp(-5 sum dtheta^2) + exp(-20 sum |dfoot|^2); the robot's feet come from FK.
double joint_style_reward(const RobotState& state, const RefPose& ref, const RobotGeometry& g);

// clamp(1 - (1 - d)^2 / 4, 0, 1)
double adversarial_style_reward(double d_out);

// w_adv r_adv + w_joint r_joint + w_adv (1 - mean_adv) r_joint.
// Throws ValidationError unless mean_adv is in [0, 1].
double schedule_style_reward(double r_adv, double r_joint, double mean_adv, const RewardWeights& w);

// Total from already-computed terms; used by total_reward and to re-check stored breakdowns.
double combine_reward(const RewardBreakdown& b, const RewardWeights& w, RewardMode mode);

// `state` is the post-step state tracked against `ref`. `prev_state` is part
// of the transition scored by the discriminator and is not otherwise used.
RewardBreakdown total_reward(const RobotState& prev_state, const RobotState& state, const RefPose& ref, double d_out,
                             double mean_adv, const RewardWeights& w, RewardMode mode, const RobotGeometry& g);

// Per-clip exponential moving average of the adversarial reward, starting at 0.
class AdversarialEma {
 public:
  explicit AdversarialEma(int num_clips = 0, double decay = 0.99);

  double value(int clip_id) const;
  void update(int clip_id, double r_adv);
  int num_clips() const { return static_cast<int>(values_.size()); }
  double decay() const { return decay_; }
  const std::vector<double>& values() const { return values_; }
  void set_values(std::vector<double> v);

 private:
  double decay_;
  std::vector<double> values_;
};

}  // namespace mprior
