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
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mprior/checkpoint.hpp"
#include "mprior/motion_clip.hpp"
#include "mprior/nn.hpp"
#include "mprior/sim.hpp"

namespace mprior {

// The part of a pose the discriminators look at. Root x is deliberately absent.
struct KinematicFrame {
  JointVector joints{};
  JointVector joint_vels{};
  double root_z = 0.0;
  double pitch = 0.0;
  double vx = 0.0;
  double vz = 0.0;
};

KinematicFrame kinematic_frame(const RobotState& s);
// Velocities by finite differences of the clip.
KinematicFrame kinematic_frame(const MotionClip& clip, int i);

inline constexpr int kFrameFeatures = 13;
inline constexpr int kTransitionFeatures = 2 * kFrameFeatures;

// Per frame: joints, joint velocities, height, sin/cos pitch, vx, vz.
Eigen::VectorXd make_feature(const KinematicFrame& s, const KinematicFrame& s_next);
Eigen::VectorXd make_feature(const RobotState& s, const RobotState& s_next);

// All transitions (i, i+1) of a clip, one per column.
Eigen::MatrixXd expert_features(const MotionClip& clip);

// Affine input normalization fixed from expert statistics.
struct FeatureNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;

  static FeatureNormalizer identity(int dim);
  // std is floored at min_std so constant features do not explode.
  static FeatureNormalizer fit(const Eigen::MatrixXd& samples, double min_std = 0.1);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

struct DiscLossStats {
  double lsgan = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  double mean_expert = 0.0;
  double mean_policy = 0.0;
};

// mean (D(e) - 1)^2 + mean (D(p) + 1)^2 + gp_weight * mean |dD/dx(e)|^2.
// Inputs are already normalized, one sample per column. Accumulates the
// parameter gradient into `grad` when non-null. Throws UsageError on an empty batch.
DiscLossStats disc_loss(const Mlp& net, const Eigen::MatrixXd& expert, const Eigen::MatrixXd& policy, double gp_weight,
                        Eigen::VectorXd* grad = nullptr);

struct DiscConfig {
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::kTanh;
  double lr = 1e-4;
  double gp_weight = 5.0;
  int batch_size = 256;
  int steps_per_update = 4;
  int replay_capacity = 20000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DiscUpdateStats {
  int clip_id = 0;
  bool updated = false;
  DiscLossStats last;
};

class DiscriminatorBank {
 public:
  DiscriminatorBank() = default;
  DiscriminatorBank(int num_clips, DiscConfig cfg, int feature_dim = kTransitionFeatures);

  int size() const { return static_cast<int>(clips_.size()); }
  const DiscConfig& config() const { return cfg_; }
  int feature_dim() const { return feature_dim_; }

  void set_expert(int clip_id, Eigen::MatrixXd features);
  bool has_expert(int clip_id) const;
  void set_normalizer(FeatureNormalizer n) { normalizer_ = std::move(n); }
  const FeatureNormalizer& normalizer() const { return normalizer_; }

  // Appends policy transitions to the clip's replay (oldest dropped first).
  void add_policy(int clip_id, const Eigen::MatrixXd& features);
  int replay_size(int clip_id) const;

  // Raw discriminator outputs on raw (unnormalized) features, one per column.
  Eigen::VectorXd score(int clip_id, const Eigen::MatrixXd& features) const;

  const Mlp& net(int clip_id) const { return at(clip_id).net; }
  Mlp& mutable_net(int clip_id) { return at(clip_id).net; }

  // `steps` Adam steps on fresh expert/replay minibatches; no-op when the replay is empty.
  DiscUpdateStats update_clip(int clip_id, int steps);

  void save(Checkpoint& ck, const std::string& prefix = "disc") const;
  void load(const Checkpoint& ck, const std::string& prefix = "disc");

 private:
  struct PerClip {
    Mlp net;
    AdamOptimizer opt;
    std::mt19937_64 rng;
    Eigen::MatrixXd expert;  // normalized lazily at sampling time
    Eigen::MatrixXd replay;  // feature_dim x capacity ring buffer
    int replay_count = 0;
    int replay_head = 0;
  };
  PerClip& at(int clip_id);
  const PerClip& at(int clip_id) const;

  DiscConfig cfg_;
  int feature_dim_ = kTransitionFeatures;
  FeatureNormalizer normalizer_;
  std::vector<PerClip> clips_;
};

// Policy transitions grouped by clip: features[c] is feature_dim x n_c (may be empty).
// Adds each group to the replay, then updates every clip that received data.
// Clips are updated independently, optionally on separate threads.
// Throws ConfigError if a clip with data has no expert buffer.
std::vector<DiscUpdateStats> update_bank(DiscriminatorBank& bank, const std::vector<Eigen::MatrixXd>& features,
                                         int steps_per_update, bool parallel = false);

}  // namespace mprior
