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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mprior/config.hpp"
#include "mprior/nn.hpp"
#include "mprior/prior.hpp"
#include "mprior/sim.hpp"

namespace mprior {

enum class DownstreamTask { kFollowCommand, kJumpForward, kCombined };

std::string_view to_string(DownstreamTask task);
DownstreamTask downstream_task_from_string(std::string_view s);

// What the high-level policy is asked to do at one control step.
struct TaskCommand {
  double v_cmd = 0.0;           // target forward speed [m/s]
  double jump_countdown = 0.0;  // seconds until the next jump window opens (0 inside a window)
  bool in_window = false;
};

inline constexpr double kJumpHeight = 0.45;
inline constexpr double kJumpHeightScale = 0.15;

// Speed tracking exp(-4 (v_cmd - vx)^2) outside jump windows; inside a window
// the height bonus clamp(2 max(0, z - 0.45) / 0.15, 0, 2).
double task_reward(DownstreamTask task, const RobotState& state, const TaskCommand& cmd);

struct DownstreamConfig {
  DownstreamTask task = DownstreamTask::kFollowCommand;
  std::filesystem::path prior_checkpoint;
  bool random_prior = false;  // ablation: same architecture, untrained parameters

  int n_envs = 16;
  int horizon = 64;
  long long total_env_steps = 1'000'000;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 8;
  double lr = 3e-4;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  std::vector<int> hidden{256, 256};
  double init_latent_std = 0.3;

  double cmd_min = 0.0;
  double cmd_max = 1.2;
  double episode_seconds = 8.0;
  double command_period = 3.0;  // combined task: speed command resampled this often
  double jump_period = 3.0;
  double jump_first = 2.0;      // first window opens at this time
  double jump_window = 0.5;
  double fall_height = 0.12;
  double fall_pitch = 1.0;
  double reset_noise = 0.02;

  std::vector<double> eval_commands{0.3, 0.6, 1.0};
  double eval_warmup = 1.0;
  double eval_seconds = 6.0;
  int eval_every = 25;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "downstream";

  void validate() const;
};

// Reads downstream.* keys (plus seed and out_dir).
DownstreamConfig downstream_config_from(const KeyValueConfig& kv);

// Command schedule for one episode, fixed at reset.
class CommandSchedule {
 public:
  CommandSchedule() = default;
  CommandSchedule(const DownstreamConfig& cfg, std::mt19937_64& rng);
  // Fixed speed command, jump windows per the task.
  CommandSchedule(const DownstreamConfig& cfg, double v_cmd);

  TaskCommand at(double time) const;
  const std::vector<double>& speeds() const { return speeds_; }

 private:
  DownstreamTask task_ = DownstreamTask::kFollowCommand;
  double period_ = 3.0;
  double jump_period_ = 3.0;
  double jump_first_ = 2.0;
  double jump_window_ = 0.5;
  std::vector<double> speeds_;
};

inline constexpr int kTaskFeatures = 3;
Eigen::VectorXd task_features(const TaskCommand& cmd);

// Maps task features plus the frozen proprioception embedding to a Gaussian over latent commands.
class HighLevelPolicy {
 public:
  HighLevelPolicy() = default;
  HighLevelPolicy(int prop_width, int latent_dim, const std::vector<int>& hidden, double init_std);

  void init(std::mt19937_64& rng);
  int latent_dim() const { return latent_dim_; }
  int input_dim() const { return policy.input_dim(); }

  // Throws CompatibilityError if the prior's latent or embedding width differs.
  void check_compatible(const MotionPrior& prior) const;

  // Batched: input is (kTaskFeatures + prop_width) x B.
  Eigen::MatrixXd mean(const Eigen::MatrixXd& input) const;
  DiagGaussian distribution(const Eigen::VectorXd& input) const;
  Eigen::VectorXd act(const Eigen::VectorXd& input, std::uint64_t seed) const;

  Mlp policy;
  Mlp value;
  Eigen::VectorXd log_std;

  void save(Checkpoint& ck) const;
  void load(const Checkpoint& ck);

 private:
  int latent_dim_ = 0;
};

// Observation for the high-level policy: task features then E_prop(s).
Eigen::MatrixXd high_level_input(const MotionPrior& prior, const std::vector<TaskCommand>& cmds,
                                 const std::vector<RobotState>& states);

RobotState standing_state(const RobotGeometry& g);

// Fallen: height below fall_height or |pitch| above fall_pitch.
bool fallen(const RobotState& s, const DownstreamConfig& cfg);

struct CommandEval {
  double v_cmd = 0.0;
  double mean_vx = 0.0;
  double speed_error = 0.0;
  double mean_speed_reward = 0.0;
  bool fell = false;
  int jump_windows = 0;
  int jump_successes = 0;
  double max_abs_latent = 0.0;
};

struct DownstreamEval {
  std::vector<CommandEval> commands;
  double mean_speed_error = 0.0;
  double jump_success_rate = 0.0;  // in [0, 1]; 0 when no window was scheduled
  double max_abs_latent = 0.0;
};

// Deterministic episodes from the standing pose, one per eval command.
DownstreamEval evaluate_downstream(const MotionPrior& prior, const HighLevelPolicy& hl, const PlanarSim& sim,
                                   const DownstreamConfig& cfg);

struct DownstreamResult {
  DownstreamEval final_eval;
  bool prior_unchanged = false;
  long long env_steps = 0;
};

// PPO on the high-level policy only; the prior is never written. Writes
// downstream_metrics.csv, downstream_eval.csv and highlevel.bin under out_dir.
DownstreamResult train_downstream(const DownstreamConfig& cfg,
                                  const std::function<void(int update, long long env_steps)>& progress = {});

}  // namespace mprior
