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

#include "mprior/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "mprior/config.hpp"
#include "mprior/error.hpp"

namespace mprior {

double PriorConfig::prior_std() const { return std::sqrt(1.0 - alpha * alpha); }

void PriorConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("prior: alpha must be in (0, 1)");
  if (!(beta >= 0.0)) throw ConfigError("prior: beta must be >= 0");
  if (latent_dim <= 0 || embedding_dim <= 0 || prop_width <= 0) throw ConfigError("prior: dimensions must be positive");
  if (resample_every < 1) throw ConfigError("prior: resample_every must be >= 1");
  if (!(init_action_std > 0.0) || !(action_scale > 0.0)) throw ConfigError("prior: action std/scale must be positive");
}

Eigen::VectorXd segment_features(const MotionSegment& seg, const RefPose& current) {
  Eigen::VectorXd f(kSegmentFeatures);
  int i = 0;
  for (const RefPose& p : seg.frames) {
    f[i++] = p.root_x - current.root_x;
    f[i++] = p.root_z;
    f[i++] = std::sin(p.pitch);
    f[i++] = std::cos(p.pitch);
    f[i++] = (p.pitch - current.pitch) / std::numbers::pi;
    for (double q : p.joints) f[i++] = q;
  }
  return f;
}

Eigen::VectorXd segment_features(const MotionClip& clip, int t) {
  const MotionSegment seg = extract_segment(clip, t);
  return segment_features(seg, clip.frames[static_cast<std::size_t>(t)]);
}

Eigen::VectorXd proprio_features(const RobotState& s) {
  Eigen::VectorXd f(kPropFeatures);
  int i = 0;
  f[i++] = s.root_z;
  f[i++] = std::sin(s.pitch);
  f[i++] = std::cos(s.pitch);
  f[i++] = s.vx;
  f[i++] = s.vz;
  f[i++] = 0.1 * s.pitch_rate;
  for (double q : s.joints) f[i++] = q;
  for (double qd : s.joint_vels) f[i++] = 0.1 * qd;
  for (bool c : s.foot_contact) f[i++] = c ? 1.0 : 0.0;
  for (double a : s.last_action) f[i++] = a;
  return f;
}

double ar_kl_loss(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                  const PriorConfig& cfg) {
  if (mu.size() != sigma.size() || mu.size() != z_prev.size()) throw ShapeError("ar_kl_loss: dimension mismatch");
  const double var_p = 1.0 - cfg.alpha * cfg.alpha;
  const double sigma_p = std::sqrt(var_p);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double diff = mu[i] - cfg.alpha * z_prev[i];
    kl += std::log(sigma_p / sigma[i]) + (sigma[i] * sigma[i] + diff * diff) / (2.0 * var_p) - 0.5;
  }
  return cfg.beta * kl;
}

void ar_kl_grad(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                const PriorConfig& cfg, Eigen::VectorXd& d_mu, Eigen::VectorXd& d_log_sigma) {
  if (mu.size() != sigma.size() || mu.size() != z_prev.size()) throw ShapeError("ar_kl_grad: dimension mismatch");
  const double var_p = 1.0 - cfg.alpha * cfg.alpha;
  d_mu = cfg.beta * (mu - cfg.alpha * z_prev) / var_p;
  d_log_sigma = cfg.beta * (sigma.array().square() / var_p - 1.0).matrix();
}

LatentCommand next_latent(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                          int step_index, const PriorConfig& cfg, std::mt19937_64& rng) {
  if (mu.size() != sigma.size()) throw ShapeError("next_latent: dimension mismatch");
  LatentCommand cmd;
  cmd.mu = mu;
  cmd.sigma = sigma.cwiseMax(std::exp(kLogStdMin));
  cmd.z_prev = z_prev.size() == 0 ? Eigen::VectorXd::Zero(mu.size()) : z_prev;
  if (cmd.z_prev.size() != mu.size()) throw ShapeError("next_latent: z_prev dimension mismatch");
  if (step_index % cfg.resample_every == 0 || z_prev.size() == 0) {
    cmd.eps = standard_normal(mu.size(), rng);
    cmd.z = cmd.mu + cmd.sigma.cwiseProduct(cmd.eps);
  } else {
    cmd.eps = Eigen::VectorXd::Zero(mu.size());
    cmd.z = cmd.z_prev;
  }
  return cmd;
}

LatentCommand next_latent(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma, const Eigen::VectorXd& z_prev,
                          int step_index, const PriorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return next_latent(mu, sigma, z_prev, step_index, cfg, rng);
}

namespace {

std::vector<int> layer_widths(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

MotionPrior::MotionPrior(PriorConfig cfg, int num_clips, RobotGeometry geometry)
    : cfg_(std::move(cfg)), geometry_(geometry) {
  cfg_.validate();
  if (num_clips <= 0) throw ConfigError("MotionPrior needs at least one clip");
  const int dz = cfg_.latent_dim;
  ref_encoder = Mlp(layer_widths(kSegmentFeatures, cfg_.encoder_hidden, 2 * dz), cfg_.activation);
  prop_encoder = Mlp({kPropFeatures, cfg_.prop_width}, cfg_.activation, cfg_.activation);
  policy = Mlp(layer_widths(cfg_.prop_width + dz, cfg_.policy_hidden, kNumJoints), cfg_.activation);
  critic = Mlp(layer_widths(cfg_.prop_width + dz + cfg_.embedding_dim, cfg_.critic_hidden, 1), cfg_.activation);
  action_log_std = Eigen::VectorXd::Constant(kNumJoints, std::log(cfg_.init_action_std));
  embeddings = Eigen::MatrixXd::Zero(cfg_.embedding_dim, num_clips);
}

void MotionPrior::init(std::mt19937_64& rng) {
  ref_encoder.init(rng, 1.0);
  {
    // Start the latent std at the AR prior's conditional std.
    Eigen::VectorXd& p = ref_encoder.mutable_params();
    const Eigen::Index bias0 = p.size() - 2 * cfg_.latent_dim;
    p.segment(bias0 + cfg_.latent_dim, cfg_.latent_dim).setConstant(std::log(cfg_.prior_std()));
  }
  prop_encoder.init(rng, 1.0);
  policy.init(rng, 0.01);
  critic.init(rng, 1.0);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (Eigen::Index i = 0; i < embeddings.size(); ++i) embeddings.data()[i] = normal(rng);
  action_log_std.setConstant(std::log(cfg_.init_action_std));
}

DiagGaussian MotionPrior::encode_reference(const Eigen::VectorXd& seg_features) const {
  if (seg_features.size() != kSegmentFeatures)
    throw ShapeError(fmt::format("encode_reference: expected {} features, got {}", kSegmentFeatures, seg_features.size()));
  const Eigen::VectorXd out = ref_encoder.forward(seg_features);
  const int dz = cfg_.latent_dim;
  DiagGaussian d;
  d.mean = out.head(dz);
  d.log_std = out.tail(dz).unaryExpr([](double s) { return clamp_log_std(s); });
  return d;
}

DiagGaussian MotionPrior::encode_reference(const MotionSegment& seg, const RefPose& current) const {
  return encode_reference(segment_features(seg, current));
}

EncoderBatch MotionPrior::encode_batch(const Eigen::MatrixXd& seg_features) const {
  EncoderBatch out;
  const Eigen::MatrixXd raw = ref_encoder.forward(seg_features, out.tape);
  const int dz = cfg_.latent_dim;
  out.mu = raw.topRows(dz);
  out.raw_log_sigma = raw.bottomRows(dz);
  out.log_sigma = out.raw_log_sigma.unaryExpr([](double s) { return clamp_log_std(s); });
  return out;
}

Eigen::MatrixXd MotionPrior::bounded_action(const Eigen::MatrixXd& raw) const {
  const JointVector center = standing_joints();
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index b = 0; b < raw.cols(); ++b) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double v = center[j] + cfg_.action_scale * std::tanh(raw(j, b));
      out(j, b) = std::clamp(v, geometry_.joint_limits[j].lo, geometry_.joint_limits[j].hi);
    }
  }
  return out;
}

Eigen::MatrixXd MotionPrior::bounded_action_grad(const Eigen::MatrixXd& raw) const {
  const JointVector center = standing_joints();
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index b = 0; b < raw.cols(); ++b) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double t = std::tanh(raw(j, b));
      const double v = center[j] + cfg_.action_scale * t;
      const bool inside = v > geometry_.joint_limits[j].lo && v < geometry_.joint_limits[j].hi;
      out(j, b) = inside ? cfg_.action_scale * (1.0 - t * t) : 0.0;
    }
  }
  return out;
}

Eigen::MatrixXd MotionPrior::encode_proprio(const Eigen::MatrixXd& prop_features) const {
  return prop_encoder.forward(prop_features);
}

Eigen::MatrixXd MotionPrior::policy_mean(const Eigen::MatrixXd& prop_hidden, const Eigen::MatrixXd& z) const {
  if (z.rows() != cfg_.latent_dim || z.cols() != prop_hidden.cols()) throw ShapeError("policy_mean: latent shape mismatch");
  Eigen::MatrixXd in(prop_hidden.rows() + z.rows(), z.cols());
  in << prop_hidden, z;
  return bounded_action(policy.forward(in));
}

Eigen::VectorXd MotionPrior::critic_values(const Eigen::MatrixXd& prop_hidden, const Eigen::MatrixXd& z,
                                           std::span<const int> clip_ids) const {
  if (static_cast<Eigen::Index>(clip_ids.size()) != z.cols() || z.cols() != prop_hidden.cols())
    throw ShapeError("critic_values: batch size mismatch");
  Eigen::MatrixXd in(prop_hidden.rows() + z.rows() + embeddings.rows(), z.cols());
  in.topRows(prop_hidden.rows()) = prop_hidden;
  in.middleRows(prop_hidden.rows(), z.rows()) = z;
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    const int c = clip_ids[static_cast<std::size_t>(b)];
    if (c < 0 || c >= num_clips()) throw IndexError(fmt::format("critic_values: clip id {} out of range", c));
    in.col(b).tail(embeddings.rows()) = embeddings.col(c);
  }
  return critic.forward(in).row(0).transpose();
}

DiagGaussian MotionPrior::act(const Eigen::VectorXd& z, const RobotState& state) const {
  if (z.size() != cfg_.latent_dim) throw ShapeError("act: latent dimension mismatch");
  const Eigen::VectorXd h = prop_encoder.forward(proprio_features(state));
  Eigen::VectorXd in(h.size() + z.size());
  in << h, z;
  DiagGaussian d;
  d.mean = bounded_action(policy.forward(in));
  d.log_std = action_log_std.unaryExpr([](double s) { return clamp_log_std(s); });
  return d;
}

DiagGaussian MotionPrior::act(const LatentCommand& z, const RobotState& state) const { return act(z.z, state); }

double MotionPrior::critic_value(const RobotState& state, const Eigen::VectorXd& z, int clip_id) const {
  if (clip_id < 0 || clip_id >= num_clips())
    throw IndexError(fmt::format("critic_value: clip id {} outside [0, {})", clip_id, num_clips()));
  if (z.size() != cfg_.latent_dim) throw ShapeError("critic_value: latent dimension mismatch");
  const Eigen::VectorXd h = prop_encoder.forward(proprio_features(state));
  Eigen::VectorXd in(h.size() + z.size() + embeddings.rows());
  in << h, z, embeddings.col(clip_id);
  return critic.forward(in)(0, 0);
}

std::string prior_config_to_string(const PriorConfig& cfg, int num_clips) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  return fmt::format(
      "alpha = {:.17g}\nbeta = {:.17g}\nlatent_dim = {}\nresample_every = {}\nembedding_dim = {}\n"
      "encoder_hidden = {}\nprop_width = {}\npolicy_hidden = {}\ncritic_hidden = {}\nactivation = {}\n"
      "init_action_std = {:.17g}\naction_scale = {:.17g}\nnum_clips = {}\n",
      cfg.alpha, cfg.beta, cfg.latent_dim, cfg.resample_every, cfg.embedding_dim, join(cfg.encoder_hidden),
      cfg.prop_width, join(cfg.policy_hidden), join(cfg.critic_hidden), to_string(cfg.activation),
      cfg.init_action_std, cfg.action_scale, num_clips);
}

void MotionPrior::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put_string(prefix + ".config", prior_config_to_string(cfg_, num_clips()));
  ck.put(prefix + ".ref_encoder", ref_encoder.params());
  ck.put(prefix + ".prop_encoder", prop_encoder.params());
  ck.put(prefix + ".policy", policy.params());
  ck.put(prefix + ".critic", critic.params());
  ck.put(prefix + ".action_log_std", action_log_std);
  ck.put(prefix + ".embeddings", Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(embeddings.data(), embeddings.size())));
}

void MotionPrior::load(const Checkpoint& ck, const std::string& prefix) {
  const KeyValueConfig stored = KeyValueConfig::parse(ck.get_string(prefix + ".config"), "checkpoint");
  if (stored.get_int("latent_dim", -1) != cfg_.latent_dim)
    throw CompatibilityError(fmt::format("checkpoint latent_dim {} does not match configured {}",
                                         stored.get_int("latent_dim", -1), cfg_.latent_dim));
  if (stored.get_int("num_clips", -1) != num_clips())
    throw CompatibilityError(fmt::format("checkpoint was trained on {} clips, dataset has {}",
                                         stored.get_int("num_clips", -1), num_clips()));
  ref_encoder.set_params(ck.get(prefix + ".ref_encoder", ref_encoder.num_params()));
  prop_encoder.set_params(ck.get(prefix + ".prop_encoder", prop_encoder.num_params()));
  policy.set_params(ck.get(prefix + ".policy", policy.num_params()));
  critic.set_params(ck.get(prefix + ".critic", critic.num_params()));
  action_log_std = ck.get(prefix + ".action_log_std", kNumJoints);
  const Eigen::VectorXd emb = ck.get(prefix + ".embeddings", embeddings.size());
  embeddings = Eigen::Map<const Eigen::MatrixXd>(emb.data(), embeddings.rows(), embeddings.cols());
}

Eigen::VectorXd MotionPrior::flat_parameters() const {
  const Eigen::Index n = ref_encoder.num_params() + prop_encoder.num_params() + policy.num_params() +
                         critic.num_params() + action_log_std.size() + embeddings.size();
  Eigen::VectorXd flat(n);
  flat << ref_encoder.params(), prop_encoder.params(), policy.params(), critic.params(), action_log_std,
      Eigen::Map<const Eigen::VectorXd>(embeddings.data(), embeddings.size());
  return flat;
}

}  // namespace mprior
