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

#include "mprior/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {

KinematicFrame kinematic_frame(const RobotState& s) {
  KinematicFrame f;
  f.joints = s.joints;
  f.joint_vels = s.joint_vels;
  f.root_z = s.root_z;
  f.pitch = s.pitch;
  f.vx = s.vx;
  f.vz = s.vz;
  return f;
}

KinematicFrame kinematic_frame(const MotionClip& clip, int i) {
  if (i < 0 || i > clip.last()) throw IndexError(fmt::format("frame {} outside clip '{}'", i, clip.name));
  const RefPose& p = clip.frames[static_cast<std::size_t>(i)];
  const RefVelocity v = reference_velocity(clip, i);
  KinematicFrame f;
  f.joints = p.joints;
  f.joint_vels = v.joint_vels;
  f.root_z = p.root_z;
  f.pitch = p.pitch;
  f.vx = v.vx;
  f.vz = v.vz;
  return f;
}

namespace {

void write_frame(const KinematicFrame& s, double* out) {
  int i = 0;
  for (double q : s.joints) out[i++] = q;
  for (double qd : s.joint_vels) out[i++] = qd;
  out[i++] = s.root_z;
  out[i++] = std::sin(s.pitch);
  out[i++] = std::cos(s.pitch);
  out[i++] = s.vx;
  out[i++] = s.vz;
}

}  // namespace

Eigen::VectorXd make_feature(const KinematicFrame& s, const KinematicFrame& s_next) {
  Eigen::VectorXd f(kTransitionFeatures);
  write_frame(s, f.data());
  write_frame(s_next, f.data() + kFrameFeatures);
  return f;
}

Eigen::VectorXd make_feature(const RobotState& s, const RobotState& s_next) {
  return make_feature(kinematic_frame(s), kinematic_frame(s_next));
}

Eigen::MatrixXd expert_features(const MotionClip& clip) {
  Eigen::MatrixXd out(kTransitionFeatures, clip.last());
  KinematicFrame prev = kinematic_frame(clip, 0);
  for (int i = 0; i < clip.last(); ++i) {
    KinematicFrame next = kinematic_frame(clip, i + 1);
    out.col(i) = make_feature(prev, next);
    prev = next;
  }
  return out;
}

FeatureNormalizer FeatureNormalizer::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

FeatureNormalizer FeatureNormalizer::fit(const Eigen::MatrixXd& samples, double min_std) {
  if (samples.cols() == 0) throw UsageError("FeatureNormalizer::fit: no samples");
  FeatureNormalizer n;
  n.mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - n.mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  n.inv_std = var.unaryExpr([min_std](double v) { return 1.0 / std::max(std::sqrt(v), min_std); });
  return n;
}

Eigen::MatrixXd FeatureNormalizer::apply(const Eigen::MatrixXd& x) const {
  if (x.rows() != mean.size()) throw ShapeError("FeatureNormalizer: feature dimension mismatch");
  return (x.colwise() - mean).array().colwise() * inv_std.array();
}

DiscLossStats disc_loss(const Mlp& net, const Eigen::MatrixXd& expert, const Eigen::MatrixXd& policy, double gp_weight,
                        Eigen::VectorXd* grad) {
  if (expert.cols() == 0 || policy.cols() == 0) throw UsageError("disc_loss: empty expert or policy batch");
  DiscLossStats st;
  Tape te, tp;
  const Eigen::MatrixXd de = net.forward(expert, te);
  const Eigen::MatrixXd dp = net.forward(policy, tp);
  const double ne = static_cast<double>(expert.cols());
  const double np = static_cast<double>(policy.cols());
  st.mean_expert = de.mean();
  st.mean_policy = dp.mean();
  st.lsgan = (de.array() - 1.0).square().sum() / ne + (dp.array() + 1.0).square().sum() / np;
  if (grad) {
    net.backward(te, 2.0 * (de.array() - 1.0).matrix() / ne, *grad);
    net.backward(tp, 2.0 * (dp.array() + 1.0).matrix() / np, *grad);
  }
  if (gp_weight > 0.0) st.penalty = net.input_gradient_penalty(expert, grad, gp_weight);
  st.total = st.lsgan + gp_weight * st.penalty;
  return st;
}

void DiscConfig::validate() const {
  if (hidden.empty()) throw ConfigError("discriminator needs at least one hidden layer");
  if (!(lr > 0.0)) throw ConfigError("discriminator lr must be positive");
  if (!(gp_weight >= 0.0)) throw ConfigError("discriminator gradient penalty must be >= 0");
  if (batch_size < 1 || steps_per_update < 0 || replay_capacity < 1)
    throw ConfigError("discriminator batch/steps/replay sizes must be positive");
}

DiscriminatorBank::DiscriminatorBank(int num_clips, DiscConfig cfg, int feature_dim)
    : cfg_(std::move(cfg)), feature_dim_(feature_dim), normalizer_(FeatureNormalizer::identity(feature_dim)) {
  cfg_.validate();
  if (num_clips < 1) throw ConfigError("discriminator bank needs at least one clip");
  std::vector<int> widths{feature_dim};
  widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  widths.push_back(1);
  clips_.resize(static_cast<std::size_t>(num_clips));
  for (int c = 0; c < num_clips; ++c) {
    PerClip& pc = clips_[static_cast<std::size_t>(c)];
    // Each clip owns its stream so results do not depend on update order.
    std::seed_seq seq{static_cast<std::uint64_t>(cfg_.seed), static_cast<std::uint64_t>(c), std::uint64_t{0xD15C}};
    pc.rng.seed(seq);
    pc.net = Mlp(widths, cfg_.activation);
    pc.net.init(pc.rng, 1.0);
    pc.opt = AdamOptimizer(AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
    pc.opt.add_block("net", pc.net.num_params());
    pc.replay = Eigen::MatrixXd::Zero(feature_dim, cfg_.replay_capacity);
  }
}

DiscriminatorBank::PerClip& DiscriminatorBank::at(int clip_id) {
  if (clip_id < 0 || clip_id >= size()) throw IndexError(fmt::format("discriminator index {} out of range", clip_id));
  return clips_[static_cast<std::size_t>(clip_id)];
}

const DiscriminatorBank::PerClip& DiscriminatorBank::at(int clip_id) const {
  if (clip_id < 0 || clip_id >= size()) throw IndexError(fmt::format("discriminator index {} out of range", clip_id));
  return clips_[static_cast<std::size_t>(clip_id)];
}

void DiscriminatorBank::set_expert(int clip_id, Eigen::MatrixXd features) {
  if (features.rows() != feature_dim_) throw ShapeError("set_expert: feature dimension mismatch");
  at(clip_id).expert = std::move(features);
}

bool DiscriminatorBank::has_expert(int clip_id) const { return at(clip_id).expert.cols() > 0; }

void DiscriminatorBank::add_policy(int clip_id, const Eigen::MatrixXd& features) {
  if (features.cols() > 0 && features.rows() != feature_dim_) throw ShapeError("add_policy: feature dimension mismatch");
  PerClip& pc = at(clip_id);
  for (Eigen::Index i = 0; i < features.cols(); ++i) {
    pc.replay.col(pc.replay_head) = features.col(i);
    pc.replay_head = (pc.replay_head + 1) % cfg_.replay_capacity;
    pc.replay_count = std::min(pc.replay_count + 1, cfg_.replay_capacity);
  }
}

int DiscriminatorBank::replay_size(int clip_id) const { return at(clip_id).replay_count; }

Eigen::VectorXd DiscriminatorBank::score(int clip_id, const Eigen::MatrixXd& features) const {
  return at(clip_id).net.forward(normalizer_.apply(features)).row(0).transpose();
}

DiscUpdateStats DiscriminatorBank::update_clip(int clip_id, int steps) {
  PerClip& pc = at(clip_id);
  DiscUpdateStats st;
  st.clip_id = clip_id;
  if (pc.replay_count == 0 || steps <= 0) return st;
  if (pc.expert.cols() == 0)
    throw ConfigError(fmt::format("clip {} has policy transitions but no expert transitions", clip_id));
  const int b = cfg_.batch_size;
  Eigen::MatrixXd eb(feature_dim_, b), pb(feature_dim_, b);
  std::uniform_int_distribution<Eigen::Index> pick_e(0, pc.expert.cols() - 1);
  std::uniform_int_distribution<int> pick_p(0, pc.replay_count - 1);
  Eigen::VectorXd grad(pc.net.num_params());
  for (int s = 0; s < steps; ++s) {
    for (int i = 0; i < b; ++i) eb.col(i) = pc.expert.col(pick_e(pc.rng));
    for (int i = 0; i < b; ++i) pb.col(i) = pc.replay.col(pick_p(pc.rng));
    grad.setZero();
    st.last = disc_loss(pc.net, normalizer_.apply(eb), normalizer_.apply(pb), cfg_.gp_weight, &grad);
    if (!std::isfinite(st.last.total)) throw SimulationDiverged("discriminator loss", st.last.total);
    Eigen::VectorXd& p = pc.net.mutable_params();
    const AdamOptimizer::Block block{{p.data(), static_cast<std::size_t>(p.size())},
                                     {grad.data(), static_cast<std::size_t>(grad.size())}};
    pc.opt.step({&block, 1});
  }
  st.updated = true;
  return st;
}

void DiscriminatorBank::save(Checkpoint& ck, const std::string& prefix) const {
  ck.put(prefix + ".norm_mean", normalizer_.mean);
  ck.put(prefix + ".norm_inv_std", normalizer_.inv_std);
  for (int c = 0; c < size(); ++c) {
    const PerClip& pc = at(c);
    const std::string p = fmt::format("{}.{}", prefix, c);
    ck.put(p + ".params", pc.net.params());
    ck.put(p + ".adam_m", pc.opt.moments(0).m);
    ck.put(p + ".adam_v", pc.opt.moments(0).v);
    ck.put(p + ".adam_t", std::vector<double>{static_cast<double>(pc.opt.t())});
  }
}

void DiscriminatorBank::load(const Checkpoint& ck, const std::string& prefix) {
  normalizer_.mean = ck.get(prefix + ".norm_mean", feature_dim_);
  normalizer_.inv_std = ck.get(prefix + ".norm_inv_std", feature_dim_);
  for (int c = 0; c < size(); ++c) {
    PerClip& pc = at(c);
    const std::string p = fmt::format("{}.{}", prefix, c);
    if (!ck.has(p + ".params")) throw CompatibilityError(fmt::format("checkpoint lacks discriminator {}", c));
    pc.net.set_params(ck.get(p + ".params", pc.net.num_params()));
    pc.opt.moments(0).m = ck.get(p + ".adam_m", pc.net.num_params());
    pc.opt.moments(0).v = ck.get(p + ".adam_v", pc.net.num_params());
    pc.opt.set_t(static_cast<long>(ck.get(p + ".adam_t", 1)[0]));
  }
}

std::vector<DiscUpdateStats> update_bank(DiscriminatorBank& bank, const std::vector<Eigen::MatrixXd>& features,
                                         int steps_per_update, bool parallel) {
  if (static_cast<int>(features.size()) != bank.size())
    throw ShapeError(fmt::format("update_bank: {} feature groups for {} discriminators", features.size(), bank.size()));
  std::vector<int> active;
  for (int c = 0; c < bank.size(); ++c) {
    if (features[static_cast<std::size_t>(c)].cols() == 0) continue;
    if (!bank.has_expert(c)) throw ConfigError(fmt::format("clip {} has rollout data but no expert buffer", c));
    active.push_back(c);
  }
  std::vector<DiscUpdateStats> stats(static_cast<std::size_t>(bank.size()));
  for (int c = 0; c < bank.size(); ++c) stats[static_cast<std::size_t>(c)].clip_id = c;
  for (int c : active) bank.add_policy(c, features[static_cast<std::size_t>(c)]);
  if (parallel && active.size() > 1) {
    std::vector<std::exception_ptr> errors(active.size());
    std::vector<std::thread> workers;
    for (std::size_t k = 0; k < active.size(); ++k) {
      workers.emplace_back([&, k] {
        try {
          stats[static_cast<std::size_t>(active[k])] = bank.update_clip(active[k], steps_per_update);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (int c : active) stats[static_cast<std::size_t>(c)] = bank.update_clip(c, steps_per_update);
  }
  return stats;
}

}  // namespace mprior
