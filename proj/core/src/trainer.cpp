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

#include "mprior/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mprior/checkpoint.hpp"
#include "mprior/csv.hpp"
#include "mprior/error.hpp"
#include "mprior/synthetic_clips.hpp"

namespace mprior {

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (n_envs < 1 || horizon < 1) throw ConfigError("n_envs and horizon must be positive");
  if (total_env_steps < 1) throw ConfigError("total_env_steps must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0, 1]");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip_eps must be in (0, 1)");
  if (epochs < 1 || minibatches < 1) throw ConfigError("epochs and minibatches must be positive");
  if (minibatches > n_envs * horizon) throw ConfigError("more minibatches than transitions per update");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) throw ConfigError("loss coefficients must be >= 0");
  if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0 (0 disables clipping)");
  if (!(value_scale >= 0.0)) throw ConfigError("value_scale must be >= 0");
  if (eval_every < 0 || eval_episodes_per_clip < 1 || checkpoint_every < 0)
    throw ConfigError("eval/checkpoint intervals must be non-negative");
  if (!(reset_noise >= 0.0)) throw ConfigError("reset_noise must be >= 0");
  if (start_margin < 0) throw ConfigError("start_margin must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
  weights.validate();
  prior.validate();
  disc.validate();
  sim.validate();
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.n_envs = static_cast<int>(kv.get_int("n_envs", c.n_envs));
  c.horizon = static_cast<int>(kv.get_int("horizon", c.horizon));
  c.total_env_steps = kv.get_int("total_env_steps", c.total_env_steps);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.gae_lambda = kv.get_double("gae_lambda", c.gae_lambda);
  c.clip_eps = kv.get_double("clip_eps", c.clip_eps);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.minibatches = static_cast<int>(kv.get_int("minibatches", c.minibatches));
  c.lr = kv.get_double("lr", c.lr);
  c.entropy_coef = kv.get_double("entropy_coef", c.entropy_coef);
  c.value_coef = kv.get_double("value_coef", c.value_coef);
  c.max_grad_norm = kv.get_double("max_grad_norm", c.max_grad_norm);
  c.value_scale = kv.get_double("value_scale", c.value_scale);
  c.mode = reward_mode_from_string(kv.get_string("mode", std::string(to_string(c.mode))));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.eval_every = static_cast<int>(kv.get_int("eval_every", c.eval_every));
  c.eval_episodes_per_clip = static_cast<int>(kv.get_int("eval_episodes_per_clip", c.eval_episodes_per_clip));
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.keep_checkpoints = kv.get_bool("keep_checkpoints", c.keep_checkpoints);
  c.reset_noise = kv.get_double("reset_noise", c.reset_noise);
  c.start_margin = static_cast<int>(kv.get_int("start_margin", c.start_margin));
  c.ema_decay = kv.get_double("ema_decay", c.ema_decay);
  c.single_thread = kv.get_bool("single_thread", c.single_thread);

  RewardWeights& w = c.weights;
  w.func_ori = kv.get_double("reward.w_func_ori", w.func_ori);
  w.func_pos_xy = kv.get_double("reward.w_func_pos_xy", w.func_pos_xy);
  w.func_pos_z = kv.get_double("reward.w_func_pos_z", w.func_pos_z);
  w.style_adv = kv.get_double("reward.w_style_adv", w.style_adv);
  w.style_joint = kv.get_double("reward.w_style_joint", w.style_joint);

  PriorConfig& p = c.prior;
  p.alpha = kv.get_double("prior.alpha", p.alpha);
  p.beta = kv.get_double("prior.beta", p.beta);
  p.latent_dim = static_cast<int>(kv.get_int("prior.latent_dim", p.latent_dim));
  p.resample_every = static_cast<int>(kv.get_int("prior.resample_every", p.resample_every));
  p.embedding_dim = static_cast<int>(kv.get_int("prior.embedding_dim", p.embedding_dim));
  p.encoder_hidden = kv.get_int_list("prior.encoder_hidden", p.encoder_hidden);
  p.prop_width = static_cast<int>(kv.get_int("prior.prop_width", p.prop_width));
  p.policy_hidden = kv.get_int_list("prior.policy_hidden", p.policy_hidden);
  p.critic_hidden = kv.get_int_list("prior.critic_hidden", p.critic_hidden);
  p.activation = activation_from_string(kv.get_string("prior.activation", std::string(to_string(p.activation))));
  p.init_action_std = kv.get_double("prior.init_action_std", p.init_action_std);
  p.action_scale = kv.get_double("prior.action_scale", p.action_scale);

  DiscConfig& d = c.disc;
  d.hidden = kv.get_int_list("disc.hidden", d.hidden);
  d.activation = activation_from_string(kv.get_string("disc.activation", std::string(to_string(d.activation))));
  d.lr = kv.get_double("disc.lr", d.lr);
  d.gp_weight = kv.get_double("disc.gp_weight", d.gp_weight);
  d.batch_size = static_cast<int>(kv.get_int("disc.batch_size", d.batch_size));
  d.steps_per_update = static_cast<int>(kv.get_int("disc.steps_per_update", d.steps_per_update));
  d.replay_capacity = static_cast<int>(kv.get_int("disc.replay_capacity", d.replay_capacity));
  d.seed = c.seed;

  SimConfig& s = c.sim;
  s.control_dt = kv.get_double("sim.control_dt", s.control_dt);
  s.substeps = static_cast<int>(kv.get_int("sim.substeps", s.substeps));
  s.gravity = kv.get_double("sim.gravity", s.gravity);
  s.contact_stiffness = kv.get_double("sim.contact_stiffness", s.contact_stiffness);
  s.contact_damping = kv.get_double("sim.contact_damping", s.contact_damping);
  s.tangential_damping = kv.get_double("sim.tangential_damping", s.tangential_damping);
  s.friction = kv.get_double("sim.friction", s.friction);
  s.kp = kv.get_double("sim.kp", s.kp);
  s.kd = kv.get_double("sim.kd", s.kd);
  s.torque_limit = kv.get_double("sim.torque_limit", s.torque_limit);
  s.leg_inertia = kv.get_double("sim.leg_inertia", s.leg_inertia);
  s.joint_damping = kv.get_double("sim.joint_damping", s.joint_damping);
  s.pos_err_max = kv.get_double("sim.pos_err_max", s.pos_err_max);
  s.ori_err_max = kv.get_double("sim.ori_err_max", s.ori_err_max);

  c.dataset_dir = kv.get_string("dataset_dir", c.dataset_dir.string());
  c.clips = kv.get_string_list("clips", c.clips);
  c.robot = kv.get_string("robot", c.robot.string());
  c.out_dir = kv.get_string("out_dir", c.out_dir.string());

  for (const auto& key : kv.unused_keys())
    if (!key.starts_with("downstream.")) throw ConfigError(fmt::format("unknown configuration key '{}'", key));
  c.validate();
  return c;
}

std::string train_config_to_string(const TrainConfig& c) {
  std::string s;
  auto add = [&s](std::string_view k, const std::string& v) { s += fmt::format("{} = {}\n", k, v); };
  auto num = [](double v) { return fmt::format("{:.17g}", v); };
  add("n_envs", std::to_string(c.n_envs));
  add("horizon", std::to_string(c.horizon));
  add("total_env_steps", std::to_string(c.total_env_steps));
  add("gamma", num(c.gamma));
  add("gae_lambda", num(c.gae_lambda));
  add("clip_eps", num(c.clip_eps));
  add("epochs", std::to_string(c.epochs));
  add("minibatches", std::to_string(c.minibatches));
  add("lr", num(c.lr));
  add("entropy_coef", num(c.entropy_coef));
  add("value_coef", num(c.value_coef));
  add("max_grad_norm", num(c.max_grad_norm));
  add("value_scale", num(c.value_scale));
  add("mode", std::string(to_string(c.mode)));
  add("seed", std::to_string(c.seed));
  add("eval_every", std::to_string(c.eval_every));
  add("eval_episodes_per_clip", std::to_string(c.eval_episodes_per_clip));
  add("checkpoint_every", std::to_string(c.checkpoint_every));
  add("keep_checkpoints", c.keep_checkpoints ? "true" : "false");
  add("reset_noise", num(c.reset_noise));
  add("start_margin", std::to_string(c.start_margin));
  add("ema_decay", num(c.ema_decay));
  add("single_thread", c.single_thread ? "true" : "false");
  add("reward.w_func_ori", num(c.weights.func_ori));
  add("reward.w_func_pos_xy", num(c.weights.func_pos_xy));
  add("reward.w_func_pos_z", num(c.weights.func_pos_z));
  add("reward.w_style_adv", num(c.weights.style_adv));
  add("reward.w_style_joint", num(c.weights.style_joint));
  add("prior.alpha", num(c.prior.alpha));
  add("prior.beta", num(c.prior.beta));
  add("prior.latent_dim", std::to_string(c.prior.latent_dim));
  add("prior.resample_every", std::to_string(c.prior.resample_every));
  add("prior.embedding_dim", std::to_string(c.prior.embedding_dim));
  add("prior.encoder_hidden", join_ints(c.prior.encoder_hidden));
  add("prior.prop_width", std::to_string(c.prior.prop_width));
  add("prior.policy_hidden", join_ints(c.prior.policy_hidden));
  add("prior.critic_hidden", join_ints(c.prior.critic_hidden));
  add("prior.activation", std::string(to_string(c.prior.activation)));
  add("prior.init_action_std", num(c.prior.init_action_std));
  add("prior.action_scale", num(c.prior.action_scale));
  add("disc.hidden", join_ints(c.disc.hidden));
  add("disc.activation", std::string(to_string(c.disc.activation)));
  add("disc.lr", num(c.disc.lr));
  add("disc.gp_weight", num(c.disc.gp_weight));
  add("disc.batch_size", std::to_string(c.disc.batch_size));
  add("disc.steps_per_update", std::to_string(c.disc.steps_per_update));
  add("disc.replay_capacity", std::to_string(c.disc.replay_capacity));
  add("sim.control_dt", num(c.sim.control_dt));
  add("sim.substeps", std::to_string(c.sim.substeps));
  add("sim.gravity", num(c.sim.gravity));
  add("sim.contact_stiffness", num(c.sim.contact_stiffness));
  add("sim.contact_damping", num(c.sim.contact_damping));
  add("sim.tangential_damping", num(c.sim.tangential_damping));
  add("sim.friction", num(c.sim.friction));
  add("sim.kp", num(c.sim.kp));
  add("sim.kd", num(c.sim.kd));
  add("sim.torque_limit", num(c.sim.torque_limit));
  add("sim.leg_inertia", num(c.sim.leg_inertia));
  add("sim.joint_damping", num(c.sim.joint_damping));
  add("sim.pos_err_max", num(c.sim.pos_err_max));
  add("sim.ori_err_max", num(c.sim.ori_err_max));
  add("dataset_dir", c.dataset_dir.string());
  add("clips", join_strings(c.clips));
  add("robot", c.robot.string());
  add("out_dir", c.out_dir.string());
  return s;
}

RobotGeometry load_geometry(const TrainConfig& cfg) {
  if (cfg.robot.empty()) return RobotGeometry{};
  return load_robot(cfg.robot);
}

std::vector<MotionClip> load_dataset(const TrainConfig& cfg, const RobotGeometry& g) {
  std::vector<MotionClip> out;
  if (cfg.dataset_dir.empty()) {
    const auto menu = default_dataset_menu();
    auto make = [&](const NamedClipSpec& spec) {
      MotionClip c = generate_synthetic_clip(spec.kind, spec.params, g);
      c.name = spec.name;
      return c;
    };
    if (cfg.clips.empty()) {
      for (const auto& spec : menu) out.push_back(make(spec));
    } else {
      for (const auto& name : cfg.clips) {
        auto it = std::find_if(menu.begin(), menu.end(), [&](const NamedClipSpec& s) { return s.name == name; });
        if (it == menu.end()) throw ConfigError(fmt::format("no built-in clip named '{}'", name));
        out.push_back(make(*it));
      }
    }
  } else {
    std::vector<std::filesystem::path> files;
    if (cfg.clips.empty()) {
      for (const auto& e : std::filesystem::directory_iterator(cfg.dataset_dir))
        if (e.path().extension() == ".json" && e.path().filename() != "robot.json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
    } else {
      for (const auto& name : cfg.clips) files.push_back(cfg.dataset_dir / (name + ".json"));
    }
    for (const auto& f : files) out.push_back(load_clip(f, g));
  }
  if (out.empty()) throw ConfigError("dataset is empty");
  for (auto& c : out) {
    if (std::abs(c.dt - cfg.sim.control_dt) > 1e-12) c = resample_clip(c, cfg.sim.control_dt, g);
  }
  return out;
}

int sample_start(std::mt19937_64& rng, int last_frame, int margin) {
  const int hi = std::max(0, last_frame - margin);
  return std::uniform_int_distribution<int>(0, hi)(rng);
}

// ---------------------------------------------------------------- PPO pieces

GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> next_values,
              std::span<const std::uint8_t> terminal, std::span<const std::uint8_t> done, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminal.size() != n || done.size() != n)
    throw ShapeError("gae: input lengths differ");
  GaeResult r;
  r.advantages.resize(static_cast<Eigen::Index>(n));
  r.returns.resize(static_cast<Eigen::Index>(n));
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double boot = terminal[k] ? 0.0 : gamma * next_values[k];
    const double delta = rewards[k] + boot - values[k];
    const double carry = done[k] ? 0.0 : gamma * lambda * next_adv;
    const double a = delta + carry;
    r.advantages[static_cast<Eigen::Index>(k)] = a;
    r.returns[static_cast<Eigen::Index>(k)] = a + values[k];
    next_adv = a;
  }
  return r;
}

void normalize_advantages(Eigen::VectorXd& adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  adv.array() -= mean;
  const double sd = std::sqrt(adv.squaredNorm() / static_cast<double>(adv.size()));
  if (sd > 0.0) adv /= sd;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

void RolloutBuffer::resize(int envs, int steps, int latent_dim) {
  n_envs = envs;
  horizon = steps;
  const int n = envs * steps;
  seg.resize(kSegmentFeatures, n);
  prop.resize(kPropFeatures, n);
  eps.resize(latent_dim, n);
  z.resize(latent_dim, n);
  z_prev.resize(latent_dim, n);
  action.resize(kNumJoints, n);
  disc_feat.resize(kTransitionFeatures, n);
  logp.resize(n);
  value.resize(n);
  next_value.resize(n);
  reward.resize(n);
  advantages.resize(n);
  returns.resize(n);
  fresh.assign(static_cast<std::size_t>(n), 0);
  terminal.assign(static_cast<std::size_t>(n), 0);
  done.assign(static_cast<std::size_t>(n), 0);
  clip_id.assign(static_cast<std::size_t>(n), 0);
  t.assign(static_cast<std::size_t>(n), 0);
  breakdown.assign(static_cast<std::size_t>(n), RewardBreakdown{});
  finished_returns.clear();
  finished_lengths.clear();
  diverged = 0;
}

EvalSummary summarize(std::vector<EpisodeMetrics> episodes) {
  EvalSummary s;
  s.episodes = std::move(episodes);
  if (s.episodes.empty()) return s;
  for (const auto& e : s.episodes) {
    s.err_x += e.err.root_x;
    s.err_z += e.err.root_z;
    s.err_ori += e.err.root_ori;
    s.err_joint += e.err.joint;
    s.err_foot += e.err.foot;
    s.mean_return += e.ret;
    s.mean_length += e.length;
    s.reached_end_frac += e.reached_end ? 1.0 : 0.0;
  }
  const double inv = 1.0 / static_cast<double>(s.episodes.size());
  s.err_x *= inv;
  s.err_z *= inv;
  s.err_ori *= inv;
  s.err_joint *= inv;
  s.err_foot *= inv;
  s.mean_return *= inv;
  s.mean_length *= inv;
  s.reached_end_frac *= inv;
  return s;
}

// ---------------------------------------------------------------- trainer

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x5EED}};
  std::uint64_t out[1];
  seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
  return out[0];
}

template <class T>
Eigen::MatrixXd gather_cols(const T& m, std::span<const int> idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(idx[i]);
  return out;
}

Eigen::MatrixXd clamp_log_std_matrix(const Eigen::MatrixXd& raw) {
  return raw.unaryExpr([](double s) { return clamp_log_std(s); });
}

Eigen::MatrixXd clamp_mask(const Eigen::MatrixXd& raw) {
  return raw.unaryExpr([](double s) { return (s > kLogStdMin && s < kLogStdMax) ? 1.0 : 0.0; });
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<MotionClip> clips, RobotGeometry geometry)
    : cfg_(std::move(cfg)),
      clips_(std::move(clips)),
      geometry_(geometry),
      sim_(geometry, cfg_.sim),
      rng_(mix_seed(cfg_.seed, 0)) {
  cfg_.validate();
  if (clips_.empty()) throw ConfigError("trainer needs at least one clip");
  const int nclips = static_cast<int>(clips_.size());
  prior_ = MotionPrior(cfg_.prior, nclips, geometry_);
  prior_.init(rng_);
  ema_ = AdversarialEma(nclips, cfg_.ema_decay);

  opt_ = AdamOptimizer(AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
  opt_.add_block("ref_encoder", prior_.ref_encoder.num_params());
  opt_.add_block("prop_encoder", prior_.prop_encoder.num_params());
  opt_.add_block("policy", prior_.policy.num_params());
  opt_.add_block("critic", prior_.critic.num_params());
  opt_.add_block("action_log_std", prior_.action_log_std.size());
  opt_.add_block("embeddings", prior_.embeddings.size());

  seg_cache_.reserve(clips_.size());
  for (const auto& c : clips_) {
    Eigen::MatrixXd m(kSegmentFeatures, c.last() + 1);
    for (int t = 0; t <= c.last(); ++t) m.col(t) = segment_features(c, t);
    seg_cache_.push_back(std::move(m));
  }

  if (uses_discriminators()) {
    DiscConfig dc = cfg_.disc;
    dc.seed = cfg_.seed;
    bank_ = DiscriminatorBank(nclips, dc);
    std::vector<Eigen::MatrixXd> experts;
    Eigen::Index total = 0;
    for (const auto& c : clips_) {
      experts.push_back(expert_features(c));
      total += experts.back().cols();
    }
    Eigen::MatrixXd all(kTransitionFeatures, total);
    Eigen::Index off = 0;
    for (const auto& e : experts) {
      all.middleCols(off, e.cols()) = e;
      off += e.cols();
    }
    bank_.set_normalizer(FeatureNormalizer::fit(all));
    for (int c = 0; c < nclips; ++c) bank_.set_expert(c, experts[static_cast<std::size_t>(c)]);
  }
  pending_disc_.assign(clips_.size(), Eigen::MatrixXd(kTransitionFeatures, 0));

  envs_.resize(static_cast<std::size_t>(cfg_.n_envs));
  for (int e = 0; e < cfg_.n_envs; ++e) {
    envs_[static_cast<std::size_t>(e)].rng.seed(mix_seed(cfg_.seed, 1000 + static_cast<std::uint64_t>(e)));
    reset_env(envs_[static_cast<std::size_t>(e)]);
  }
  buffer_.resize(cfg_.n_envs, cfg_.horizon, cfg_.prior.latent_dim);
}

void Trainer::reset_env(Env& env) {
  env.clip = std::uniform_int_distribution<int>(0, static_cast<int>(clips_.size()) - 1)(env.rng);
  const MotionClip& clip = clips_[static_cast<std::size_t>(env.clip)];
  env.t = sample_start(env.rng, clip.last(), cfg_.start_margin);
  const RefPose& ref = clip.frames[static_cast<std::size_t>(env.t)];
  env.state = reset_from_reference(ref, reference_velocity(clip, env.t), cfg_.reset_noise, geometry_, env.rng);
  env.step = 0;
  env.z_prev = Eigen::VectorXd::Zero(cfg_.prior.latent_dim);
  env.ep_return = 0.0;
  env.ep_length = 0;
}

const RolloutBuffer& Trainer::collect_rollouts() {
  const int E = cfg_.n_envs;
  const int dz = cfg_.prior.latent_dim;
  RolloutBuffer& b = buffer_;
  b.resize(E, cfg_.horizon, dz);
  Eigen::MatrixXd next_seg(kSegmentFeatures, b.size());
  Eigen::MatrixXd next_prop(kPropFeatures, b.size());
  std::vector<int> next_clip(static_cast<std::size_t>(b.size()));

  Eigen::MatrixXd S(kSegmentFeatures, E), P(kPropFeatures, E), Z(dz, E);
  std::vector<int> ids(static_cast<std::size_t>(E));
  const Eigen::VectorXd log_std = prior_.action_log_std.unaryExpr([](double s) { return clamp_log_std(s); });
  const Eigen::VectorXd act_std = log_std.array().exp();
  const double logp_const = -log_std.sum() - kNumJoints * kHalfLog2Pi;
  std::normal_distribution<double> normal(0.0, 1.0);

  for (int k = 0; k < cfg_.horizon; ++k) {
    for (int e = 0; e < E; ++e) {
      const Env& env = envs_[static_cast<std::size_t>(e)];
      S.col(e) = seg_cache_[static_cast<std::size_t>(env.clip)].col(env.t);
      P.col(e) = proprio_features(env.state);
      ids[static_cast<std::size_t>(e)] = env.clip;
    }
    const Eigen::MatrixXd enc = prior_.ref_encoder.forward(S);
    const Eigen::MatrixXd sigma = clamp_log_std_matrix(enc.bottomRows(dz)).array().exp();
    for (int e = 0; e < E; ++e) {
      Env& env = envs_[static_cast<std::size_t>(e)];
      const int idx = k * E + e;
      const bool fresh = env.step % cfg_.prior.resample_every == 0;
      b.fresh[static_cast<std::size_t>(idx)] = fresh ? 1 : 0;
      b.z_prev.col(idx) = env.z_prev;
      if (fresh) {
        for (int i = 0; i < dz; ++i) b.eps(i, idx) = normal(env.rng);
        Z.col(e) = enc.col(e).head(dz) + sigma.col(e).cwiseProduct(b.eps.col(idx));
      } else {
        b.eps.col(idx).setZero();
        Z.col(e) = env.z_prev;
      }
      b.z.col(idx) = Z.col(e);
    }
    const Eigen::MatrixXd H = prior_.encode_proprio(P);
    const Eigen::MatrixXd mean = prior_.policy_mean(H, Z);
    const Eigen::VectorXd values = prior_.critic_values(H, Z, ids) * cfg_.effective_value_scale();

    for (int e = 0; e < E; ++e) {
      Env& env = envs_[static_cast<std::size_t>(e)];
      const int idx = k * E + e;
      const std::size_t u = static_cast<std::size_t>(idx);
      const MotionClip& clip = clips_[static_cast<std::size_t>(env.clip)];
      JointVector action{};
      double sq = 0.0;
      for (int j = 0; j < kNumJoints; ++j) {
        const double n = normal(env.rng);
        action[j] = mean(j, e) + act_std[j] * n;
        b.action(j, idx) = action[j];
        sq += n * n;
      }
      b.logp[idx] = logp_const - 0.5 * sq;
      b.seg.col(idx) = S.col(e);
      b.prop.col(idx) = P.col(e);
      b.value[idx] = values[e];
      b.clip_id[u] = env.clip;
      b.t[u] = env.t;

      const RobotState prev = env.state;
      bool terminal = false;
      try {
        env.state = sim_.step(env.state, action);
      } catch (const SimulationDiverged&) {
        ++b.diverged;
        terminal = true;
        env.state = prev;
      }
      env.t += 1;
      env.step += 1;
      env.z_prev = Z.col(e);
      const RefPose& ref = clip.frames[static_cast<std::size_t>(env.t)];
      if (!terminal) terminal = check_termination(env.state, ref, cfg_.sim).terminated();
      const bool at_end = env.t >= clip.last();

      RewardBreakdown& br = b.breakdown[u];
      const FunctionalityReward f = functionality_reward(env.state, ref, cfg_.weights);
      br.r_ori = f.r_ori;
      br.r_pos_xy = f.r_pos_xy;
      br.r_pos_z = f.r_pos_z;
      br.r_joint = joint_style_reward(env.state, ref, geometry_);
      br.terminated = terminal;
      b.disc_feat.col(idx) = make_feature(prev, env.state);
      b.terminal[u] = terminal ? 1 : 0;
      b.done[u] = (terminal || at_end) ? 1 : 0;
      next_seg.col(idx) = seg_cache_[static_cast<std::size_t>(env.clip)].col(std::min(env.t, clip.last()));
      next_prop.col(idx) = proprio_features(env.state);
      next_clip[u] = env.clip;
      env.ep_length += 1;
      if (b.done[u]) {
        // The return is completed once rewards are known; store the length now.
        b.finished_lengths.push_back(env.ep_length);
        reset_env(env);
      }
    }
  }

  // Bootstrap values with the latent mean of the next segment.
  {
    const Eigen::MatrixXd mu = prior_.ref_encoder.forward(next_seg).topRows(dz);
    const Eigen::MatrixXd H = prior_.encode_proprio(next_prop);
    b.next_value = prior_.critic_values(H, mu, next_clip) * cfg_.effective_value_scale();
  }
  env_steps_ += b.size();
  compute_rewards_and_advantages();
  return b;
}

void Trainer::compute_rewards_and_advantages() {
  RolloutBuffer& b = buffer_;
  const int n = b.size();
  const int nclips = static_cast<int>(clips_.size());
  std::vector<double> d_out(static_cast<std::size_t>(n), -1.0);
  if (uses_discriminators()) {
    for (int c = 0; c < nclips; ++c) {
      std::vector<int> idx;
      for (int i = 0; i < n; ++i)
        if (b.clip_id[static_cast<std::size_t>(i)] == c) idx.push_back(i);
      if (idx.empty()) continue;
      const Eigen::MatrixXd feats = gather_cols(b.disc_feat, idx);
      const Eigen::VectorXd d = bank_.score(c, feats);
      for (std::size_t i = 0; i < idx.size(); ++i) d_out[static_cast<std::size_t>(idx[i])] = d[static_cast<Eigen::Index>(i)];
      Eigen::MatrixXd& pend = pending_disc_[static_cast<std::size_t>(c)];
      const Eigen::Index old = pend.cols();
      pend.conservativeResize(kTransitionFeatures, old + feats.cols());
      pend.rightCols(feats.cols()) = feats;
    }
  }
  const std::vector<double> frozen_ema = ema_.values();
  for (int i = 0; i < n; ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    RewardBreakdown& br = b.breakdown[u];
    const int c = b.clip_id[u];
    br.r_adv = uses_discriminators() ? adversarial_style_reward(d_out[u]) : 0.0;
    br.mean_adv = frozen_ema[static_cast<std::size_t>(c)];
    br.scheduled_style = schedule_style_reward(br.r_adv, br.r_joint, br.mean_adv, cfg_.weights);
    br.total = combine_reward(br, cfg_.weights, cfg_.mode);
    b.reward[i] = br.total;
  }
  if (uses_discriminators())
    for (int i = 0; i < n; ++i) ema_.update(b.clip_id[static_cast<std::size_t>(i)], b.breakdown[static_cast<std::size_t>(i)].r_adv);

  // Episode returns: walk each env's stream and close episodes at done flags.
  const int E = b.n_envs;
  b.finished_returns.clear();
  std::vector<std::pair<int, double>> finished;  // (index of done step, return)
  for (int e = 0; e < E; ++e) {
    Env& env = envs_[static_cast<std::size_t>(e)];
    double ret = env.ep_return;
    for (int k = 0; k < b.horizon; ++k) {
      const int i = k * E + e;
      ret += b.reward[i];
      if (b.done[static_cast<std::size_t>(i)]) {
        finished.emplace_back(i, ret);
        ret = 0.0;
      }
    }
    env.ep_return = ret;
  }
  std::sort(finished.begin(), finished.end());
  for (const auto& f : finished) b.finished_returns.push_back(f.second);

  // GAE per env stream; the last step of the horizon bootstraps from next_value.
  std::vector<double> r(static_cast<std::size_t>(b.horizon)), v(r.size()), nv(r.size());
  std::vector<std::uint8_t> term(r.size()), dn(r.size());
  for (int e = 0; e < E; ++e) {
    for (int k = 0; k < b.horizon; ++k) {
      const int i = k * E + e;
      const std::size_t kk = static_cast<std::size_t>(k);
      r[kk] = b.reward[i];
      v[kk] = b.value[i];
      term[kk] = b.terminal[static_cast<std::size_t>(i)];
      dn[kk] = b.done[static_cast<std::size_t>(i)];
      const bool use_stored_next = !dn[kk] && k + 1 < b.horizon;
      nv[kk] = use_stored_next ? b.value[i + E] : b.next_value[i];
    }
    const GaeResult g = gae(r, v, nv, term, dn, cfg_.gamma, cfg_.gae_lambda);
    for (int k = 0; k < b.horizon; ++k) {
      b.advantages[k * E + e] = g.advantages[k];
      b.returns[k * E + e] = g.returns[k];
    }
  }
}

UpdateStats Trainer::ppo_update() {
  RolloutBuffer& b = buffer_;
  const int n = b.size();
  const int dz = cfg_.prior.latent_dim;
  const double alpha = cfg_.prior.alpha;
  const double beta = cfg_.prior.beta;
  const double var_p = 1.0 - alpha * alpha;
  const double vscale = cfg_.effective_value_scale();
  const int hdim = prior_.prop_encoder.output_dim();
  const int edim = static_cast<int>(prior_.embeddings.rows());

  Eigen::VectorXd adv = b.advantages;
  normalize_advantages(adv);

  Eigen::VectorXd g_enc(prior_.ref_encoder.num_params()), g_prop(prior_.prop_encoder.num_params()),
      g_pol(prior_.policy.num_params()), g_crit(prior_.critic.num_params()), g_logstd(kNumJoints),
      g_emb(prior_.embeddings.size());

  UpdateStats st;
  int count = 0;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_);
    for (int mb = 0; mb < cfg_.minibatches; ++mb) {
      const int lo = static_cast<int>(static_cast<long long>(n) * mb / cfg_.minibatches);
      const int hi = static_cast<int>(static_cast<long long>(n) * (mb + 1) / cfg_.minibatches);
      const std::span<const int> idx(order.data() + lo, static_cast<std::size_t>(hi - lo));
      const int B = hi - lo;
      const double invB = 1.0 / B;

      const Eigen::MatrixXd S = gather_cols(b.seg, idx);
      const Eigen::MatrixXd P = gather_cols(b.prop, idx);
      const Eigen::MatrixXd EPS = gather_cols(b.eps, idx);
      const Eigen::MatrixXd ZS = gather_cols(b.z, idx);
      const Eigen::MatrixXd ZP = gather_cols(b.z_prev, idx);
      const Eigen::MatrixXd A = gather_cols(b.action, idx);
      std::vector<int> cid(static_cast<std::size_t>(B));
      for (int i = 0; i < B; ++i) cid[static_cast<std::size_t>(i)] = b.clip_id[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];

      g_enc.setZero();
      g_prop.setZero();
      g_pol.setZero();
      g_crit.setZero();
      g_logstd.setZero();
      g_emb.setZero();

      // Encoder and reparameterized latent.
      Tape te;
      const Eigen::MatrixXd enc = prior_.ref_encoder.forward(S, te);
      const Eigen::MatrixXd mu = enc.topRows(dz);
      const Eigen::MatrixXd raw_ls = enc.bottomRows(dz);
      const Eigen::MatrixXd sigma = clamp_log_std_matrix(raw_ls).array().exp();
      Eigen::MatrixXd Z = ZS;
      for (int i = 0; i < B; ++i)
        if (b.fresh[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])])
          Z.col(i) = mu.col(i) + sigma.col(i).cwiseProduct(EPS.col(i));

      Tape tp;
      const Eigen::MatrixXd H = prior_.prop_encoder.forward(P, tp);
      Eigen::MatrixXd X(hdim + dz, B);
      X << H, Z;
      Tape tpol;
      const Eigen::MatrixXd raw_a = prior_.policy.forward(X, tpol);
      const Eigen::MatrixXd mean = prior_.bounded_action(raw_a);
      const Eigen::VectorXd log_std = prior_.action_log_std.unaryExpr([](double s) { return clamp_log_std(s); });
      const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
      const Eigen::MatrixXd diff = ((A - mean).array().colwise() * inv_std).matrix();
      const double logp_const = -log_std.sum() - kNumJoints * kHalfLog2Pi;

      Eigen::MatrixXd d_mean(kNumJoints, B);
      double pol_loss = 0.0, approx_kl = 0.0, clip_frac = 0.0;
      for (int i = 0; i < B; ++i) {
        const int u = idx[static_cast<std::size_t>(i)];
        const double logp = logp_const - 0.5 * diff.col(i).squaredNorm();
        const double ratio = std::exp(logp - b.logp[u]);
        const double a = adv[u];
        const double s1 = ratio * a;
        const double s2 = std::clamp(ratio, 1.0 - cfg_.clip_eps, 1.0 + cfg_.clip_eps) * a;
        pol_loss -= std::min(s1, s2) * invB;
        approx_kl += (b.logp[u] - logp) * invB;
        if (std::abs(ratio - 1.0) > cfg_.clip_eps) clip_frac += invB;
        const double d_logp = s1 <= s2 ? -a * ratio * invB : 0.0;
        d_mean.col(i) = d_logp * (diff.col(i).array() * inv_std).matrix();
        for (int j = 0; j < kNumJoints; ++j) g_logstd[j] += d_logp * (diff(j, i) * diff(j, i) - 1.0);
      }
      for (int j = 0; j < kNumJoints; ++j) {
        g_logstd[j] -= cfg_.entropy_coef;
        const double s = prior_.action_log_std[j];
        if (!(s > kLogStdMin && s < kLogStdMax)) g_logstd[j] = 0.0;
      }
      const double entropy = log_std.sum() + kNumJoints * (kHalfLog2Pi + 0.5);

      const Eigen::MatrixXd d_raw_a = d_mean.cwiseProduct(prior_.bounded_action_grad(raw_a));
      const Eigen::MatrixXd dX = prior_.policy.backward(tpol, d_raw_a, g_pol);
      Eigen::MatrixXd dH = dX.topRows(hdim);
      const Eigen::MatrixXd dZ = dX.bottomRows(dz);

      // Critic: the latent enters as a constant.
      Eigen::MatrixXd XC(hdim + dz + edim, B);
      XC.topRows(hdim) = H;
      XC.middleRows(hdim, dz) = Z;
      for (int i = 0; i < B; ++i) XC.col(i).tail(edim) = prior_.embeddings.col(cid[static_cast<std::size_t>(i)]);
      Tape tc;
      const Eigen::MatrixXd vhat = prior_.critic.forward(XC, tc);
      Eigen::MatrixXd d_v(1, B);
      double v_loss = 0.0;
      for (int i = 0; i < B; ++i) {
        const double err = vhat(0, i) - b.returns[idx[static_cast<std::size_t>(i)]] / vscale;
        v_loss += err * err * invB;
        d_v(0, i) = cfg_.value_coef * 2.0 * err * invB;
      }
      const Eigen::MatrixXd dXC = prior_.critic.backward(tc, d_v, g_crit);
      dH += dXC.topRows(hdim);
      for (int i = 0; i < B; ++i) {
        const int c = cid[static_cast<std::size_t>(i)];
        g_emb.segment(static_cast<Eigen::Index>(c) * edim, edim) += dXC.col(i).tail(edim);
      }

      // AR-KL bottleneck, averaged over the minibatch.
      double kl = 0.0;
      const double sigma_p = std::sqrt(var_p);
      Eigen::MatrixXd d_mu = Eigen::MatrixXd::Zero(dz, B), d_ls = Eigen::MatrixXd::Zero(dz, B);
      for (int i = 0; i < B; ++i) {
        for (int r = 0; r < dz; ++r) {
          const double m = mu(r, i) - alpha * ZP(r, i);
          const double s = sigma(r, i);
          kl += beta * (std::log(sigma_p / s) + (s * s + m * m) / (2.0 * var_p) - 0.5) * invB;
          d_mu(r, i) = beta * m / var_p * invB;
          d_ls(r, i) = beta * (s * s / var_p - 1.0) * invB;
        }
        if (b.fresh[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]) {
          d_mu.col(i) += dZ.col(i);
          d_ls.col(i) += dZ.col(i).cwiseProduct(sigma.col(i)).cwiseProduct(EPS.col(i));
        }
      }
      Eigen::MatrixXd d_enc(2 * dz, B);
      d_enc << d_mu, d_ls.cwiseProduct(clamp_mask(raw_ls));
      prior_.ref_encoder.backward(te, d_enc, g_enc);
      prior_.prop_encoder.backward(tp, dH, g_prop);

      const double loss = pol_loss + cfg_.value_coef * v_loss - cfg_.entropy_coef * entropy + kl;
      if (!std::isfinite(loss)) {
        throw SimulationDiverged(fmt::format("PPO loss (policy {}, value {}, kl {}, update {}, epoch {}, minibatch {})",
                                             pol_loss, v_loss, kl, updates_, epoch, mb),
                                 loss);
      }
      std::array<Eigen::VectorXd*, 6> grads{&g_enc, &g_prop, &g_pol, &g_crit, &g_logstd, &g_emb};
      const double gnorm = clip_global_norm(grads, cfg_.max_grad_norm);

      auto block = [](Eigen::VectorXd& p, const Eigen::VectorXd& g) {
        return AdamOptimizer::Block{{p.data(), static_cast<std::size_t>(p.size())},
                                    {g.data(), static_cast<std::size_t>(g.size())}};
      };
      std::array<AdamOptimizer::Block, 6> blocks{
          block(prior_.ref_encoder.mutable_params(), g_enc), block(prior_.prop_encoder.mutable_params(), g_prop),
          block(prior_.policy.mutable_params(), g_pol), block(prior_.critic.mutable_params(), g_crit),
          block(prior_.action_log_std, g_logstd),
          AdamOptimizer::Block{{prior_.embeddings.data(), static_cast<std::size_t>(prior_.embeddings.size())},
                               {g_emb.data(), static_cast<std::size_t>(g_emb.size())}}};
      opt_.step(blocks);

      st.policy_loss += pol_loss;
      st.value_loss += v_loss;
      st.entropy += entropy;
      st.ar_kl += kl;
      st.approx_kl += approx_kl;
      st.clip_frac += clip_frac;
      st.grad_norm += gnorm;
      ++count;
    }
  }
  const double inv = 1.0 / count;
  st.policy_loss *= inv;
  st.value_loss *= inv;
  st.entropy *= inv;
  st.ar_kl *= inv;
  st.approx_kl *= inv;
  st.clip_frac *= inv;
  st.grad_norm *= inv;

  if (uses_discriminators()) {
    const auto ds = update_bank(bank_, pending_disc_, cfg_.disc.steps_per_update, !cfg_.single_thread);
    int k = 0;
    for (const auto& d : ds) {
      if (!d.updated) continue;
      st.disc_loss += d.last.total;
      st.disc_expert += d.last.mean_expert;
      st.disc_policy += d.last.mean_policy;
      ++k;
    }
    if (k > 0) {
      st.disc_loss /= k;
      st.disc_expert /= k;
      st.disc_policy /= k;
    }
    for (auto& p : pending_disc_) p.resize(kTransitionFeatures, 0);
  }
  ++updates_;
  return st;
}

EvalSummary Trainer::evaluate() const {
  struct Episode {
    EpisodeTrajectory traj;
    const MotionClip* clip = nullptr;
    bool active = true;
  };
  std::vector<Episode> eps;
  for (int c = 0; c < static_cast<int>(clips_.size()); ++c) {
    const MotionClip& clip = clips_[static_cast<std::size_t>(c)];
    const int hi = std::max(0, clip.last() - cfg_.start_margin);
    for (int i = 0; i < cfg_.eval_episodes_per_clip; ++i) {
      Episode ep;
      ep.clip = &clip;
      ep.traj.clip_id = c;
      ep.traj.start = static_cast<int>(std::lround(static_cast<double>(hi) * i / cfg_.eval_episodes_per_clip));
      std::mt19937_64 unused;
      ep.traj.states.push_back(reset_from_reference(clip.frames[static_cast<std::size_t>(ep.traj.start)],
                                                    reference_velocity(clip, ep.traj.start), 0.0, geometry_, unused));
      eps.push_back(std::move(ep));
    }
  }
  const int dz = cfg_.prior.latent_dim;
  std::vector<int> active;
  for (;;) {
    active.clear();
    for (int i = 0; i < static_cast<int>(eps.size()); ++i)
      if (eps[static_cast<std::size_t>(i)].active) active.push_back(i);
    if (active.empty()) break;
    const int B = static_cast<int>(active.size());
    Eigen::MatrixXd S(kSegmentFeatures, B), P(kPropFeatures, B);
    for (int k = 0; k < B; ++k) {
      const Episode& ep = eps[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
      const int t = ep.traj.start + static_cast<int>(ep.traj.states.size()) - 1;
      S.col(k) = seg_cache_[static_cast<std::size_t>(ep.traj.clip_id)].col(t);
      P.col(k) = proprio_features(ep.traj.states.back());
    }
    const Eigen::MatrixXd mu = prior_.ref_encoder.forward(S).topRows(dz);
    const Eigen::MatrixXd mean = prior_.policy_mean(prior_.encode_proprio(P), mu);
    for (int k = 0; k < B; ++k) {
      Episode& ep = eps[static_cast<std::size_t>(active[static_cast<std::size_t>(k)])];
      JointVector a{};
      for (int j = 0; j < kNumJoints; ++j) a[j] = mean(j, k);
      RobotState next;
      try {
        next = sim_.step(ep.traj.states.back(), a);
      } catch (const SimulationDiverged&) {
        ep.traj.terminated = true;
        ep.active = false;
        if (ep.traj.states.size() == 1) ep.traj.states.push_back(ep.traj.states.back());
        continue;
      }
      ep.traj.states.push_back(next);
      const int t = ep.traj.start + static_cast<int>(ep.traj.states.size()) - 1;
      if (check_termination(next, ep.clip->frames[static_cast<std::size_t>(t)], cfg_.sim).terminated()) {
        ep.traj.terminated = true;
        ep.active = false;
      } else if (t >= ep.clip->last()) {
        ep.active = false;
      }
    }
  }

  // Rewards, scored with the current discriminators and EMA.
  for (auto& ep : eps) {
    const auto& st = ep.traj.states;
    const int steps = static_cast<int>(st.size()) - 1;
    Eigen::VectorXd d = Eigen::VectorXd::Constant(steps, -1.0);
    if (uses_discriminators()) {
      Eigen::MatrixXd f(kTransitionFeatures, steps);
      for (int k = 0; k < steps; ++k) f.col(k) = make_feature(st[static_cast<std::size_t>(k)], st[static_cast<std::size_t>(k + 1)]);
      d = bank_.score(ep.traj.clip_id, f);
    }
    const double mean_adv = ema_.value(ep.traj.clip_id);
    for (int k = 0; k < steps; ++k) {
      const RefPose& ref = ep.clip->frames[static_cast<std::size_t>(ep.traj.start + k + 1)];
      ep.traj.rewards.push_back(total_reward(st[static_cast<std::size_t>(k)], st[static_cast<std::size_t>(k + 1)], ref,
                                             d[k], mean_adv, cfg_.weights, cfg_.mode, geometry_)
                                    .total);
    }
  }
  std::vector<EpisodeMetrics> metrics;
  for (const auto& ep : eps) metrics.push_back(tracking_metrics(ep.traj, *ep.clip, geometry_));
  return summarize(std::move(metrics));
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.put_string("train.config", train_config_to_string(cfg_));
  std::string names;
  for (std::size_t i = 0; i < clips_.size(); ++i) names += (i ? "," : "") + clips_[i].name;
  ck.put_string("dataset.clips", names);
  ck.put("robot.geometry", std::vector<double>{geometry_.l1, geometry_.l2, geometry_.d, geometry_.trunk_mass,
                                               geometry_.trunk_inertia, geometry_.torque_limit});
  std::vector<double> limits;
  for (const auto& l : geometry_.joint_limits) {
    limits.push_back(l.lo);
    limits.push_back(l.hi);
  }
  ck.put("robot.joint_limits", limits);
  prior_.save(ck, "prior");
  for (std::size_t i = 0; i < opt_.num_blocks(); ++i) {
    ck.put("opt." + opt_.block_name(i) + ".m", opt_.moments(i).m);
    ck.put("opt." + opt_.block_name(i) + ".v", opt_.moments(i).v);
  }
  ck.put("opt.t", std::vector<double>{static_cast<double>(opt_.t())});
  if (uses_discriminators()) bank_.save(ck, "disc");
  ck.put("ema", ema_.values());
  ck.put("progress", std::vector<double>{static_cast<double>(updates_), static_cast<double>(env_steps_)});
  ck.put_string("rng.trainer", rng_to_string(rng_));
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    const Env& env = envs_[e];
    ck.put_string(fmt::format("rng.env{}", e), rng_to_string(env.rng));
    std::vector<double> v{static_cast<double>(env.clip), static_cast<double>(env.t), static_cast<double>(env.step),
                          env.ep_return, static_cast<double>(env.ep_length)};
    const RobotState& s = env.state;
    v.insert(v.end(), {s.root_x, s.root_z, s.pitch, s.vx, s.vz, s.pitch_rate, s.time});
    v.insert(v.end(), s.joints.begin(), s.joints.end());
    v.insert(v.end(), s.joint_vels.begin(), s.joint_vels.end());
    v.insert(v.end(), s.last_action.begin(), s.last_action.end());
    for (bool c : s.foot_contact) v.push_back(c ? 1.0 : 0.0);
    v.insert(v.end(), env.z_prev.data(), env.z_prev.data() + env.z_prev.size());
    ck.put(fmt::format("env{}", e), v);
  }
  ck.save(path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (!ck.has_string("dataset.clips")) throw CompatibilityError(fmt::format("{} is not a training checkpoint", path.string()));
  std::string names;
  for (std::size_t i = 0; i < clips_.size(); ++i) names += (i ? "," : "") + clips_[i].name;
  if (ck.get_string("dataset.clips") != names)
    throw CompatibilityError(fmt::format("checkpoint clips [{}] differ from dataset [{}]", ck.get_string("dataset.clips"),
                                         names));
  prior_.load(ck, "prior");
  for (std::size_t i = 0; i < opt_.num_blocks(); ++i) {
    const Eigen::Index sz = opt_.moments(i).m.size();
    opt_.moments(i).m = ck.get("opt." + opt_.block_name(i) + ".m", sz);
    opt_.moments(i).v = ck.get("opt." + opt_.block_name(i) + ".v", sz);
  }
  opt_.set_t(static_cast<long>(ck.get("opt.t", 1)[0]));
  if (uses_discriminators()) bank_.load(ck, "disc");
  const Eigen::VectorXd ema = ck.get("ema", ema_.num_clips());
  ema_.set_values(std::vector<double>(ema.data(), ema.data() + ema.size()));
  const Eigen::VectorXd prog = ck.get("progress", 2);
  updates_ = static_cast<int>(prog[0]);
  env_steps_ = static_cast<long long>(prog[1]);
  std::istringstream(ck.get_string("rng.trainer")) >> rng_;
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    const std::string key = fmt::format("rng.env{}", e);
    if (ck.has_string(key)) std::istringstream(ck.get_string(key)) >> envs_[e].rng;
    const std::string state_key = fmt::format("env{}", e);
    if (!ck.has(state_key)) continue;
    Env& env = envs_[e];
    const Eigen::Index n = 12 + 3 * kNumJoints + kNumFeet + cfg_.prior.latent_dim;
    const Eigen::VectorXd v = ck.get(state_key, n);
    Eigen::Index i = 0;
    env.clip = static_cast<int>(v[i++]);
    env.t = static_cast<int>(v[i++]);
    env.step = static_cast<int>(v[i++]);
    env.ep_return = v[i++];
    env.ep_length = static_cast<int>(v[i++]);
    RobotState& s = env.state;
    for (double* f : {&s.root_x, &s.root_z, &s.pitch, &s.vx, &s.vz, &s.pitch_rate, &s.time}) *f = v[i++];
    for (auto& q : s.joints) q = v[i++];
    for (auto& q : s.joint_vels) q = v[i++];
    for (auto& q : s.last_action) q = v[i++];
    for (auto& c : s.foot_contact) c = v[i++] != 0.0;
    env.z_prev = v.segment(i, cfg_.prior.latent_dim);
  }
}

std::vector<TrajectoryRow> Trainer::rollout_trajectory(int clip_id, int start, int max_steps) const {
  if (clip_id < 0 || clip_id >= static_cast<int>(clips_.size()))
    throw IndexError(fmt::format("clip id {} out of range", clip_id));
  const MotionClip& clip = clips_[static_cast<std::size_t>(clip_id)];
  if (start < 0 || start >= clip.last())
    throw IndexError(fmt::format("start {} outside [0, {}) for clip '{}'", start, clip.last(), clip.name));
  const int dz = cfg_.prior.latent_dim;
  std::mt19937_64 unused;
  RobotState s = reset_from_reference(clip.frames[static_cast<std::size_t>(start)], reference_velocity(clip, start),
                                      0.0, geometry_, unused);
  std::vector<TrajectoryRow> rows;
  rows.push_back({s, ContactSample{}, clip.frames[static_cast<std::size_t>(start)], RewardBreakdown{}});
  const double mean_adv = ema_.value(clip_id);
  for (int t = start; t < clip.last() && (max_steps <= 0 || t - start < max_steps); ++t) {
    const Eigen::VectorXd mu = prior_.ref_encoder.forward(seg_cache_[static_cast<std::size_t>(clip_id)].col(t)).topRows(dz);
    const Eigen::MatrixXd mean = prior_.policy_mean(prior_.encode_proprio(proprio_features(s)), mu);
    JointVector a{};
    for (int j = 0; j < kNumJoints; ++j) a[j] = mean(j, 0);
    ContactLog log;
    const RobotState next = sim_.step(s, a, &log);
    const RefPose& ref = clip.frames[static_cast<std::size_t>(t + 1)];
    double d = -1.0;
    if (uses_discriminators()) d = bank_.score(clip_id, make_feature(s, next))[0];
    RewardBreakdown br = total_reward(s, next, ref, d, mean_adv, cfg_.weights, cfg_.mode, geometry_);
    br.terminated = check_termination(next, ref, cfg_.sim).terminated();
    rows.push_back({next, log.samples.empty() ? ContactSample{} : log.samples.back(), ref, br});
    s = next;
    if (br.terminated) break;
  }
  return rows;
}

void Trainer::train(const std::function<void(int, long long)>& progress) {
  const auto& out = cfg_.out_dir;
  std::filesystem::create_directories(out);
  {
    std::ofstream f(out / "config.cfg", std::ios::binary | std::ios::trunc);
    f << train_config_to_string(cfg_);
    if (!f) throw IoError(fmt::format("cannot write {}", (out / "config.cfg").string()));
  }
  CsvWriter metrics(out / "metrics.csv", "metrics",
                    {"update", "env_steps", "mean_reward", "episodes", "mean_episode_return", "mean_episode_length",
                     "r_ori", "r_pos_xy", "r_pos_z", "r_joint", "r_adv", "mean_adv", "policy_loss", "value_loss",
                     "entropy", "ar_kl", "approx_kl", "clip_frac", "grad_norm", "disc_loss", "disc_expert",
                     "disc_policy", "diverged", "eval_err_x", "eval_err_z", "eval_err_ori", "eval_err_joint",
                     "eval_err_foot", "eval_return", "eval_length", "eval_reached_end"});
  CsvWriter episodes(out / "eval_episodes.csv", "eval_episodes",
                     {"update", "env_steps", "mode", "seed", "clip", "start", "length", "reached_end", "return",
                      "err_x", "err_z", "err_ori", "err_joint", "err_foot"});
  std::filesystem::path ckdir = out / "checkpoints";
  std::filesystem::create_directories(ckdir);
  auto checkpoint = [&] {
    save_checkpoint(out / "checkpoint.bin");
    if (cfg_.keep_checkpoints)
      std::filesystem::copy_file(out / "checkpoint.bin", ckdir / fmt::format("step_{:010d}.bin", env_steps_),
                                 std::filesystem::copy_options::overwrite_existing);
  };

  const long long per_update = static_cast<long long>(cfg_.n_envs) * cfg_.horizon;
  const int total_updates = static_cast<int>((cfg_.total_env_steps + per_update - 1) / per_update);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int u = 0; u < total_updates; ++u) {
    const RolloutBuffer& b = collect_rollouts();
    RewardBreakdown avg;
    for (const auto& br : b.breakdown) {
      avg.r_ori += br.r_ori;
      avg.r_pos_xy += br.r_pos_xy;
      avg.r_pos_z += br.r_pos_z;
      avg.r_joint += br.r_joint;
      avg.r_adv += br.r_adv;
    }
    const double invn = 1.0 / b.size();
    const double mean_reward = b.reward.mean();
    double mean_ret = nan, mean_len = nan;
    if (!b.finished_lengths.empty()) {
      mean_ret = std::accumulate(b.finished_returns.begin(), b.finished_returns.end(), 0.0) / b.finished_returns.size();
      mean_len = std::accumulate(b.finished_lengths.begin(), b.finished_lengths.end(), 0.0) / b.finished_lengths.size();
    }
    const int nfinished = static_cast<int>(b.finished_lengths.size());
    const int diverged = b.diverged;
    const UpdateStats us = ppo_update();
    const double mean_adv =
        std::accumulate(ema_.values().begin(), ema_.values().end(), 0.0) / static_cast<double>(ema_.num_clips());

    const bool last = u + 1 == total_updates;
    EvalSummary ev;
    const bool do_eval = last || (cfg_.eval_every > 0 && updates_ % cfg_.eval_every == 0);
    if (do_eval) {
      ev = evaluate();
      for (const auto& e : ev.episodes) {
        auto row = episodes.row();
        row << updates_ << env_steps_ << to_string(cfg_.mode) << static_cast<long long>(cfg_.seed)
            << clips_[static_cast<std::size_t>(e.clip_id)].name << e.start << e.length << (e.reached_end ? 1 : 0)
            << e.ret << e.err.root_x << e.err.root_z << e.err.root_ori << e.err.joint << e.err.foot;
        episodes.write(row);
      }
      episodes.flush();
    }
    auto row = metrics.row();
    row << updates_ << env_steps_ << mean_reward << nfinished << mean_ret << mean_len << avg.r_ori * invn
        << avg.r_pos_xy * invn << avg.r_pos_z * invn << avg.r_joint * invn << avg.r_adv * invn << mean_adv
        << us.policy_loss << us.value_loss << us.entropy << us.ar_kl << us.approx_kl << us.clip_frac << us.grad_norm
        << us.disc_loss << us.disc_expert << us.disc_policy << diverged;
    if (do_eval) {
      row << ev.err_x << ev.err_z << ev.err_ori << ev.err_joint << ev.err_foot << ev.mean_return << ev.mean_length
          << ev.reached_end_frac;
    } else {
      for (int i = 0; i < 8; ++i) row << nan;
    }
    metrics.write(row);
    metrics.flush();
    if (last || (cfg_.checkpoint_every > 0 && updates_ % cfg_.checkpoint_every == 0)) checkpoint();
    if (progress) progress(updates_, env_steps_);
  }
}

// ---------------------------------------------------------------- loading

LoadedPrior load_prior_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (!ck.has_string("train.config") || !ck.has_string("dataset.clips"))
    throw CompatibilityError(fmt::format("{} is not a motion prior checkpoint", path.string()));
  LoadedPrior out;
  out.config = train_config_from(KeyValueConfig::parse(ck.get_string("train.config"), path.string()));
  const KeyValueConfig names = KeyValueConfig::parse("clips = " + ck.get_string("dataset.clips"));
  out.clip_names = names.get_string_list("clips", {});
  const Eigen::VectorXd geo = ck.get("robot.geometry", 6);
  out.geometry.l1 = geo[0];
  out.geometry.l2 = geo[1];
  out.geometry.d = geo[2];
  out.geometry.trunk_mass = geo[3];
  out.geometry.trunk_inertia = geo[4];
  out.geometry.torque_limit = geo[5];
  const Eigen::VectorXd lim = ck.get("robot.joint_limits", 2 * kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) out.geometry.joint_limits[j] = {lim[2 * j], lim[2 * j + 1]};
  out.geometry.validate();
  out.prior = MotionPrior(out.config.prior, static_cast<int>(out.clip_names.size()), out.geometry);
  out.prior.load(ck, "prior");
  return out;
}

}  // namespace mprior
