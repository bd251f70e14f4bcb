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
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mprior/config.hpp"
#include "mprior/discriminator.hpp"
#include "mprior/eval.hpp"
#include "mprior/motion_clip.hpp"
#include "mprior/nn.hpp"
#include "mprior/prior.hpp"
#include "mprior/rewards.hpp"
#include "mprior/sim.hpp"

namespace mprior {

struct TrainConfig {
  int n_envs = 16;
  int horizon = 64;
  long long total_env_steps = 2'000'000;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 8;
  double lr = 3e-4;
  double entropy_coef = 0.003;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;
  double value_scale = 0.0;  // 0 picks 1 / (1 - gamma)
  RewardMode mode = RewardMode::kVim;
  std::uint64_t seed = 0;
  int eval_every = 25;  // updates; 0 disables periodic eval (a final eval always runs)
  int eval_episodes_per_clip = 4;
  int checkpoint_every = 100;  // updates; 0 saves only at the end
  bool keep_checkpoints = false;
  double reset_noise = 0.05;
  int start_margin = 40;  // episode starts are drawn from [0, T - start_margin]
  double ema_decay = 0.99;
  bool single_thread = false;

  RewardWeights weights;
  PriorConfig prior;
  DiscConfig disc;
  SimConfig sim;

  std::filesystem::path dataset_dir;  // empty: clips are generated from the built-in menu
  std::vector<std::string> clips;     // empty: every clip of the dataset
  std::filesystem::path robot;        // empty: default geometry
  std::filesystem::path out_dir = "run";

  double effective_value_scale() const { return value_scale > 0.0 ? value_scale : 1.0 / (1.0 - gamma); }
  void validate() const;
};

// Reads every recognised key; throws ConfigError for unknown keys or bad values.
TrainConfig train_config_from(const KeyValueConfig& kv);
std::string train_config_to_string(const TrainConfig& cfg);

RobotGeometry load_geometry(const TrainConfig& cfg);
// Clips named in cfg.clips (all when empty), loaded from dataset_dir or generated.
std::vector<MotionClip> load_dataset(const TrainConfig& cfg, const RobotGeometry& g);

// Uniform start index in [0, max(0, T - margin)].
int sample_start(std::mt19937_64& rng, int last_frame, int margin);

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// One trajectory in time order. next_values[t] is the value of the state
// reached by step t (ignored when terminal[t]); done[t] stops the backward
// accumulation at an episode boundary (terminal or truncated).
GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> next_values,
              std::span<const std::uint8_t> terminal, std::span<const std::uint8_t> done, double gamma, double lambda);

// Shifts and scales to zero mean, unit std (population std).
void normalize_advantages(Eigen::VectorXd& adv);

// Per-sample clipped surrogate min(rho A, clip(rho, 1 - eps, 1 + eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);

// Transitions stored time-major: index = step * n_envs + env.
struct RolloutBuffer {
  int n_envs = 0;
  int horizon = 0;
  Eigen::MatrixXd seg;       // kSegmentFeatures x n
  Eigen::MatrixXd prop;      // kPropFeatures x n
  Eigen::MatrixXd eps;       // latent noise (zero when the latent was held)
  Eigen::MatrixXd z;         // latent used
  Eigen::MatrixXd z_prev;
  Eigen::MatrixXd action;    // 4 x n
  Eigen::MatrixXd disc_feat; // kTransitionFeatures x n
  Eigen::VectorXd logp;
  Eigen::VectorXd value;
  Eigen::VectorXd next_value;
  Eigen::VectorXd reward;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  std::vector<std::uint8_t> fresh;
  std::vector<std::uint8_t> terminal;
  std::vector<std::uint8_t> done;
  std::vector<int> clip_id;
  std::vector<int> t;
  std::vector<RewardBreakdown> breakdown;

  std::vector<double> finished_returns;
  std::vector<int> finished_lengths;
  int diverged = 0;

  int size() const { return n_envs * horizon; }
  void resize(int n_envs, int horizon, int latent_dim);
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double ar_kl = 0.0;
  double approx_kl = 0.0;
  double clip_frac = 0.0;
  double grad_norm = 0.0;
  double disc_loss = 0.0;
  double disc_expert = 0.0;
  double disc_policy = 0.0;
};

struct EvalSummary {
  std::vector<EpisodeMetrics> episodes;
  double err_x = 0.0;
  double err_z = 0.0;
  double err_ori = 0.0;
  double err_joint = 0.0;
  double err_foot = 0.0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  double reached_end_frac = 0.0;
};

EvalSummary summarize(std::vector<EpisodeMetrics> episodes);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<MotionClip> clips, RobotGeometry geometry);

  const TrainConfig& config() const { return cfg_; }
  const std::vector<MotionClip>& clips() const { return clips_; }
  const RobotGeometry& geometry() const { return geometry_; }
  MotionPrior& prior() { return prior_; }
  const MotionPrior& prior() const { return prior_; }
  DiscriminatorBank& bank() { return bank_; }
  const AdversarialEma& ema() const { return ema_; }
  const RolloutBuffer& buffer() const { return buffer_; }
  long long env_steps() const { return env_steps_; }
  int updates() const { return updates_; }
  bool uses_discriminators() const { return cfg_.mode != RewardMode::kMotionImitation; }

  // Fills the rollout buffer with n_envs * horizon transitions, computes
  // rewards and advantages, and advances the adversarial EMA.
  const RolloutBuffer& collect_rollouts();
  // PPO epochs over the buffer, then one discriminator bank update.
  UpdateStats ppo_update();
  // Deterministic episodes: latent mean, action mean, noise-free resets at
  // evenly spaced start indices.
  EvalSummary evaluate() const;

  // collect/update until total_env_steps, writing metrics.csv,
  // eval_episodes.csv, config.cfg and checkpoints under out_dir.
  void train(const std::function<void(int update, long long env_steps)>& progress = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores networks, optimizer moments, discriminators, EMA and progress
  // counters. Throws CompatibilityError if the clip set or architecture differs.
  void load_checkpoint(const std::filesystem::path& path);

  // One deterministic episode (latent mean, action mean, no reset noise) with
  // contact forces and reward breakdowns per step.
  std::vector<TrajectoryRow> rollout_trajectory(int clip_id, int start, int max_steps) const;

 private:
  struct Env {
    int clip = 0;
    int t = 0;
    int step = 0;
    RobotState state;
    Eigen::VectorXd z_prev;
    double ep_return = 0.0;
    int ep_length = 0;
    std::mt19937_64 rng;
  };

  void reset_env(Env& env);
  void compute_rewards_and_advantages();

  TrainConfig cfg_;
  std::vector<MotionClip> clips_;
  RobotGeometry geometry_;
  PlanarSim sim_;
  MotionPrior prior_;
  DiscriminatorBank bank_;
  AdversarialEma ema_;
  AdamOptimizer opt_;
  std::mt19937_64 rng_;
  std::vector<Eigen::MatrixXd> seg_cache_;  // per clip, kSegmentFeatures x (T + 1)
  std::vector<Env> envs_;
  RolloutBuffer buffer_;
  std::vector<Eigen::MatrixXd> pending_disc_;  // policy features per clip since the last bank update
  long long env_steps_ = 0;
  int updates_ = 0;
};

// A prior restored from a training checkpoint, with the settings it was trained under.
struct LoadedPrior {
  MotionPrior prior;
  TrainConfig config;
  std::vector<std::string> clip_names;
  RobotGeometry geometry;
};

LoadedPrior load_prior_checkpoint(const std::filesystem::path& path);

}  // namespace mprior
