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

#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mprior/checkpoint.hpp"
#include "mprior/motion_clip.hpp"
#include "mprior/nn.hpp"
#include "mprior/sim.hpp"

namespace mprior {

struct PriorConfig {
  double alpha = 0.95;  // AR prior correlation
  double beta = 1e-3;   // KL coefficient
  int latent_dim = 16;
  int resample_every = 1;  // control steps between latent samples
  int embedding_dim = 8;
  std::vector<int> encoder_hidden{256, 256};
  int prop_width = 128;
  std::vector<int> policy_hidden{256, 256};
  std::vector<int> critic_hidden{256, 256};
  Activation activation = Activation::kTanh;
  double init_action_std = 0.25;
  double action_scale = 1.6;  // rad, half-range of the tanh map around the standing pose

  double prior_std() const;  // sqrt(1 - alpha^2)
  void validate() const;
};

// Per-frame encoder features: dx from the current reference frame, height,
// sin/cos of pitch, unwrapped pitch delta / pi, four joints.
inline constexpr int kSegmentFrameFeatures = 9;
inline constexpr int kSegmentFeatures = kSegmentFrameFeatures * static_cast<int>(kSegmentOffsets.size());
// height, sin/cos pitch, vx, vz, pitch_rate/10, joints, joint_vels/10, contacts, last action
inline constexpr int kPropFeatures = 20;

// Root-relativized against `current`, the reference frame at the segment's t.
Eigen::VectorXd segment_features(const MotionSegment& seg, const RefPose& current);
Eigen::VectorXd segment_features(const MotionClip& clip, int t);
Eigen::VectorXd proprio_features(const RobotState& s);

struct LatentCommand {
  Eigen::VectorXd z;
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  Eigen::VectorXd z_prev;
  Eigen::VectorXd eps;  // unit-normal draw behind z (zero when z was held)
};

// beta * KL(N(mu, sigma^2) || N(alpha z_prev, (1 - alpha^2) I))
double ar_kl_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                  const PriorConfig& cfg);

// Gradients of ar_kl_loss with respect to mu and log(sigma).
void ar_kl_grad(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                const PriorConfig& cfg, Eigen::VectorXd& d_mu, Eigen::VectorXd& d_log_sigma);

// Reparameterized sample on steps that are multiples of resample_every; the
// previous z is held otherwise. Pass an empty z_prev at episode start.
LatentCommand next_latent(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                          int step_index, const PriorConfig& cfg, std::mt19937_64& rng);
LatentCommand next_latent(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                          int step_index, const PriorConfig& cfg, std::uint64_t seed);

// Batched encoder output.
struct EncoderBatch {
  Eigen::MatrixXd mu;         // d_z x B
  Eigen::MatrixXd log_sigma;  // clamped, d_z x B
  Eigen::MatrixXd raw_log_sigma;
  Tape tape;
};

// The motion prior: reference encoder, proprioception encoder, low-level
// policy with state-independent log-std, critic, and per-clip critic embeddings.
class MotionPrior {
 public:
  MotionPrior() = default;
  MotionPrior(PriorConfig cfg, int num_clips, RobotGeometry geometry);

  void init(std::mt19937_64& rng);

  const PriorConfig& config() const { return cfg_; }
  int num_clips() const { return static_cast<int>(embeddings.cols()); }
  const RobotGeometry& geometry() const { return geometry_; }

  DiagGaussian encode_reference(const Eigen::VectorXd& seg_features) const;
  DiagGaussian encode_reference(const MotionSegment& seg, const RefPose& current) const;
  EncoderBatch encode_batch(const Eigen::MatrixXd& seg_features) const;

  // Action distribution over PD target angles; the mean is bounded to joint limits.
  DiagGaussian act(const LatentCommand& z, const RobotState& state) const;
  DiagGaussian act(const Eigen::VectorXd& z, const RobotState& state) const;

  // Throws IndexError for an invalid clip id.
  double critic_value(const RobotState& state, const Eigen::VectorXd& z, int clip_id) const;

  // Batched variants, one sample per column. clip_ids has one entry per column.
  Eigen::MatrixXd encode_proprio(const Eigen::MatrixXd& prop_features) const;
  Eigen::MatrixXd policy_mean(const Eigen::MatrixXd& prop_hidden, const Eigen::MatrixXd& z) const;
  Eigen::VectorXd critic_values(const Eigen::MatrixXd& prop_hidden, const Eigen::MatrixXd& z,
                                std::span<const int> clip_ids) const;

  // clamp(center + scale * tanh(raw), lo, hi) per joint, and its derivative wrt raw.
  Eigen::MatrixXd bounded_action(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd bounded_action_grad(const Eigen::MatrixXd& raw) const;

  Mlp ref_encoder;
  Mlp prop_encoder;
  Mlp policy;
  Mlp critic;
  Eigen::VectorXd action_log_std;
  Eigen::MatrixXd embeddings;  // embedding_dim x num_clips

  void save(Checkpoint& ck, const std::string& prefix = "prior") const;
  // Throws CompatibilityError if the stored architecture differs.
  void load(const Checkpoint& ck, const std::string& prefix = "prior");

  // Flat copy of every parameter in a fixed order (for frozen-parameter checks).
  Eigen::VectorXd flat_parameters() const;

 private:
  PriorConfig cfg_;
  RobotGeometry geometry_;
};

std::string prior_config_to_string(const PriorConfig& cfg, int num_clips);

}  // namespace mprior
