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

#include "mprior/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "mprior/checkpoint.hpp"
#include "mprior/csv.hpp"
#include "mprior/error.hpp"
#include "mprior/trainer.hpp"

namespace mprior {

std::string_view to_string(DownstreamTask task) {
  switch (task) {
    case DownstreamTask::kFollowCommand: return "follow-command";
    case DownstreamTask::kJumpForward: return "jump-forward";
    case DownstreamTask::kCombined: return "combined";
  }
  return "?";
}

DownstreamTask downstream_task_from_string(std::string_view s) {
  std::string norm(s);
  std::replace(norm.begin(), norm.end(), '_', '-');
  for (auto t : {DownstreamTask::kFollowCommand, DownstreamTask::kJumpForward, DownstreamTask::kCombined})
    if (to_string(t) == norm) return t;
  throw ConfigError(fmt::format("unknown downstream task '{}' (expected follow-command, jump-forward, combined)", s));
}

double task_reward(DownstreamTask task, const RobotState& state, const TaskCommand& cmd) {
  if (task != DownstreamTask::kFollowCommand && cmd.in_window)
    return std::clamp(2.0 * std::max(0.0, state.root_z - kJumpHeight) / kJumpHeightScale, 0.0, 2.0);
  const double e = cmd.v_cmd - state.vx;
  return std::exp(-4.0 * e * e);
}

void DownstreamConfig::validate() const {
  if (n_envs < 1 || horizon < 1 || total_env_steps < 1) throw ConfigError("downstream sizes must be positive");
  if (!(gamma > 0.0 && gamma < 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw ConfigError("downstream gamma/lambda out of range");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("downstream clip_eps must be in (0, 1)");
  if (epochs < 1 || minibatches < 1 || minibatches > n_envs * horizon)
    throw ConfigError("downstream epochs/minibatches invalid");
  if (!(lr > 0.0) || !(init_latent_std > 0.0)) throw ConfigError("downstream lr and init_latent_std must be positive");
  if (!(cmd_min >= 0.0 && cmd_max >= cmd_min && cmd_max <= 2.0))
    throw ConfigError("downstream commands must satisfy 0 <= cmd_min <= cmd_max <= 2");
  if (!(episode_seconds > 0.0 && command_period > 0.0 && jump_period > jump_window && jump_window > 0.0))
    throw ConfigError("downstream episode/command/jump timings invalid");
  if (!(eval_seconds > eval_warmup) || eval_warmup < 0.0) throw ConfigError("eval_seconds must exceed eval_warmup");
  if (eval_commands.empty()) throw ConfigError("downstream needs at least one eval command");
  if (prior_checkpoint.empty() && !random_prior)
    throw ConfigError("downstream needs a prior checkpoint (or random_prior = true)");
}

DownstreamConfig downstream_config_from(const KeyValueConfig& kv) {
  DownstreamConfig c;
  const std::string p = "downstream.";
  c.task = downstream_task_from_string(kv.get_string(p + "task", std::string(to_string(c.task))));
  c.prior_checkpoint = kv.get_string(p + "prior_checkpoint", c.prior_checkpoint.string());
  c.random_prior = kv.get_bool(p + "random_prior", c.random_prior);
  c.n_envs = static_cast<int>(kv.get_int(p + "n_envs", c.n_envs));
  c.horizon = static_cast<int>(kv.get_int(p + "horizon", c.horizon));
  c.total_env_steps = kv.get_int(p + "total_env_steps", c.total_env_steps);
  c.gamma = kv.get_double(p + "gamma", c.gamma);
  c.gae_lambda = kv.get_double(p + "gae_lambda", c.gae_lambda);
  c.clip_eps = kv.get_double(p + "clip_eps", c.clip_eps);
  c.epochs = static_cast<int>(kv.get_int(p + "epochs", c.epochs));
  c.minibatches = static_cast<int>(kv.get_int(p + "minibatches", c.minibatches));
  c.lr = kv.get_double(p + "lr", c.lr);
  c.entropy_coef = kv.get_double(p + "entropy_coef", c.entropy_coef);
  c.value_coef = kv.get_double(p + "value_coef", c.value_coef);
  c.max_grad_norm = kv.get_double(p + "max_grad_norm", c.max_grad_norm);
  c.hidden = kv.get_int_list(p + "hidden", c.hidden);
  c.init_latent_std = kv.get_double(p + "init_latent_std", c.init_latent_std);
  c.cmd_min = kv.get_double(p + "cmd_min", c.cmd_min);
  c.cmd_max = kv.get_double(p + "cmd_max", c.cmd_max);
  c.episode_seconds = kv.get_double(p + "episode_seconds", c.episode_seconds);
  c.command_period = kv.get_double(p + "command_period", c.command_period);
  c.jump_period = kv.get_double(p + "jump_period", c.jump_period);
  c.jump_first = kv.get_double(p + "jump_first", c.jump_first);
  c.jump_window = kv.get_double(p + "jump_window", c.jump_window);
  c.fall_height = kv.get_double(p + "fall_height", c.fall_height);
  c.fall_pitch = kv.get_double(p + "fall_pitch", c.fall_pitch);
  c.reset_noise = kv.get_double(p + "reset_noise", c.reset_noise);
  c.eval_commands = kv.get_double_list(p + "eval_commands", c.eval_commands);
  c.eval_warmup = kv.get_double(p + "eval_warmup", c.eval_warmup);
  c.eval_seconds = kv.get_double(p + "eval_seconds", c.eval_seconds);
  c.eval_every = static_cast<int>(kv.get_int(p + "eval_every", c.eval_every));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.out_dir = kv.get_string("out_dir", c.out_dir.string());
  for (const auto& key : kv.unused_keys())
    if (key.starts_with(p)) throw ConfigError(fmt::format("unknown configuration key '{}'", key));
  c.validate();
  return c;
}

CommandSchedule::CommandSchedule(const DownstreamConfig& cfg, std::mt19937_64& rng)
    : task_(cfg.task),
      period_(cfg.command_period),
      jump_period_(cfg.jump_period),
      jump_first_(cfg.jump_first),
      jump_window_(cfg.jump_window) {
  std::uniform_real_distribution<double> speed(cfg.cmd_min, cfg.cmd_max);
  const int n = task_ == DownstreamTask::kCombined ? static_cast<int>(std::ceil(cfg.episode_seconds / period_)) + 1 : 1;
  for (int i = 0; i < n; ++i) speeds_.push_back(speed(rng));
}

CommandSchedule::CommandSchedule(const DownstreamConfig& cfg, double v_cmd)
    : task_(cfg.task),
      period_(cfg.command_period),
      jump_period_(cfg.jump_period),
      jump_first_(cfg.jump_first),
      jump_window_(cfg.jump_window),
      speeds_{v_cmd} {}

TaskCommand CommandSchedule::at(double time) const {
  TaskCommand c;
  if (speeds_.empty()) return c;
  const std::size_t k = std::min(speeds_.size() - 1, static_cast<std::size_t>(std::max(0.0, time) / period_));
  c.v_cmd = speeds_[k];
  if (task_ == DownstreamTask::kFollowCommand) return c;
  if (time < jump_first_) {
    c.jump_countdown = jump_first_ - time;
    return c;
  }
  const double phase = std::fmod(time - jump_first_, jump_period_);
  if (phase < jump_window_) {
    c.in_window = true;
  } else {
    c.jump_countdown = jump_period_ - phase;
  }
  return c;
}

Eigen::VectorXd task_features(const TaskCommand& cmd) {
  Eigen::VectorXd f(kTaskFeatures);
  f << cmd.v_cmd, std::min(cmd.jump_countdown, 3.0) / 3.0, cmd.in_window ? 1.0 : 0.0;
  return f;
}

HighLevelPolicy::HighLevelPolicy(int prop_width, int latent_dim, const std::vector<int>& hidden, double init_std)
    : latent_dim_(latent_dim) {
  std::vector<int> w{kTaskFeatures + prop_width};
  w.insert(w.end(), hidden.begin(), hidden.end());
  std::vector<int> wv = w;
  w.push_back(latent_dim);
  wv.push_back(1);
  policy = Mlp(w);
  value = Mlp(wv);
  log_std = Eigen::VectorXd::Constant(latent_dim, std::log(init_std));
}

void HighLevelPolicy::init(std::mt19937_64& rng) {
  policy.init(rng, 0.01);
  value.init(rng, 1.0);
}

void HighLevelPolicy::check_compatible(const MotionPrior& prior) const {
  if (prior.config().latent_dim != latent_dim_)
    throw CompatibilityError(fmt::format("high-level policy emits {}-dim latents but the prior expects {}", latent_dim_,
                                         prior.config().latent_dim));
  if (prior.prop_encoder.output_dim() + kTaskFeatures != policy.input_dim())
    throw CompatibilityError("high-level policy input width does not match the prior's proprioception encoder");
}

Eigen::MatrixXd HighLevelPolicy::mean(const Eigen::MatrixXd& input) const { return policy.forward(input); }

DiagGaussian HighLevelPolicy::distribution(const Eigen::VectorXd& input) const {
  DiagGaussian d;
  d.mean = policy.forward(input);
  d.log_std = log_std.unaryExpr([](double s) { return clamp_log_std(s); });
  return d;
}

Eigen::VectorXd HighLevelPolicy::act(const Eigen::VectorXd& input, std::uint64_t seed) const {
  return gaussian_sample(distribution(input), seed);
}

void HighLevelPolicy::save(Checkpoint& ck) const {
  ck.put("highlevel.latent_dim", std::vector<double>{static_cast<double>(latent_dim_)});
  ck.put("highlevel.policy", policy.params());
  ck.put("highlevel.value", value.params());
  ck.put("highlevel.log_std", log_std);
}

void HighLevelPolicy::load(const Checkpoint& ck) {
  const int stored = static_cast<int>(ck.get("highlevel.latent_dim", 1)[0]);
  if (stored != latent_dim_)
    throw CompatibilityError(fmt::format("checkpoint latent dim {} does not match {}", stored, latent_dim_));
  policy.set_params(ck.get("highlevel.policy", policy.num_params()));
  value.set_params(ck.get("highlevel.value", value.num_params()));
  log_std = ck.get("highlevel.log_std", latent_dim_);
}

Eigen::MatrixXd high_level_input(const MotionPrior& prior, const std::vector<TaskCommand>& cmds,
                                 const std::vector<RobotState>& states) {
  if (cmds.size() != states.size()) throw ShapeError("high_level_input: batch size mismatch");
  const Eigen::Index B = static_cast<Eigen::Index>(states.size());
  Eigen::MatrixXd P(kPropFeatures, B);
  for (Eigen::Index i = 0; i < B; ++i) P.col(i) = proprio_features(states[static_cast<std::size_t>(i)]);
  const Eigen::MatrixXd H = prior.encode_proprio(P);
  Eigen::MatrixXd in(kTaskFeatures + H.rows(), B);
  for (Eigen::Index i = 0; i < B; ++i) in.col(i).head(kTaskFeatures) = task_features(cmds[static_cast<std::size_t>(i)]);
  in.bottomRows(H.rows()) = H;
  return in;
}

RobotState standing_state(const RobotGeometry& g) {
  RobotState s;
  s.root_z = standing_height(g);
  s.joints = standing_joints();
  s.last_action = s.joints;
  update_contacts(s, g);
  return s;
}

bool fallen(const RobotState& s, const DownstreamConfig& cfg) {
  return s.root_z < cfg.fall_height || std::abs(wrap_angle(s.pitch)) > cfg.fall_pitch;
}

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

JointVector column_action(const Eigen::MatrixXd& m, Eigen::Index c) {
  JointVector a{};
  for (int j = 0; j < kNumJoints; ++j) a[j] = m(j, c);
  return a;
}

}  // namespace

DownstreamEval evaluate_downstream(const MotionPrior& prior, const HighLevelPolicy& hl, const PlanarSim& sim,
                                   const DownstreamConfig& cfg) {
  hl.check_compatible(prior);
  DownstreamEval out;
  const double dt = sim.config().control_dt;
  const int steps = static_cast<int>(std::lround(cfg.eval_seconds / dt));
  const int warm = static_cast<int>(std::lround(cfg.eval_warmup / dt));
  int windows = 0, successes = 0;
  for (double v : cfg.eval_commands) {
    const CommandSchedule sched(cfg, v);
    CommandEval ce;
    ce.v_cmd = v;
    RobotState s = standing_state(prior.geometry());
    double vx_sum = 0.0, r_sum = 0.0;
    int vx_n = 0;
    bool window_open = false, window_hit = false;
    for (int k = 0; k < steps; ++k) {
      const TaskCommand cmd = sched.at(s.time);
      if (cmd.in_window && !window_open) {
        window_open = true;
        window_hit = false;
        ++ce.jump_windows;
      }
      if (!cmd.in_window && window_open) {
        window_open = false;
        if (window_hit) ++ce.jump_successes;
      }
      const Eigen::MatrixXd in = high_level_input(prior, {cmd}, {s});
      const Eigen::MatrixXd z = hl.mean(in);
      ce.max_abs_latent = std::max(ce.max_abs_latent, z.cwiseAbs().maxCoeff());
      const Eigen::MatrixXd a = prior.policy_mean(in.bottomRows(in.rows() - kTaskFeatures), z);
      try {
        s = sim.step(s, column_action(a, 0));
      } catch (const SimulationDiverged&) {
        ce.fell = true;
        break;
      }
      if (cmd.in_window && !s.foot_contact[0] && !s.foot_contact[1] && s.root_z > kJumpHeight) window_hit = true;
      if (k >= warm) {
        vx_sum += s.vx;
        r_sum += std::exp(-4.0 * (v - s.vx) * (v - s.vx));
        ++vx_n;
      }
      if (fallen(s, cfg)) {
        ce.fell = true;
        break;
      }
    }
    if (window_open && window_hit) ++ce.jump_successes;
    ce.mean_vx = vx_n > 0 ? vx_sum / vx_n : 0.0;
    ce.speed_error = std::abs(v - ce.mean_vx);
    ce.mean_speed_reward = vx_n > 0 ? r_sum / vx_n : 0.0;
    windows += ce.jump_windows;
    successes += ce.jump_successes;
    out.max_abs_latent = std::max(out.max_abs_latent, ce.max_abs_latent);
    out.mean_speed_error += ce.speed_error / static_cast<double>(cfg.eval_commands.size());
    out.commands.push_back(ce);
  }
  out.jump_success_rate = windows > 0 ? static_cast<double>(successes) / windows : 0.0;
  return out;
}

DownstreamResult train_downstream(const DownstreamConfig& cfg, const std::function<void(int, long long)>& progress) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);

  MotionPrior prior;
  SimConfig sim_cfg;
  if (!cfg.prior_checkpoint.empty()) {
    LoadedPrior lp = load_prior_checkpoint(cfg.prior_checkpoint);
    sim_cfg = lp.config.sim;
    prior = std::move(lp.prior);
    if (cfg.random_prior) prior.init(rng);
  } else {
    prior = MotionPrior(PriorConfig{}, 1, RobotGeometry{});
    prior.init(rng);
  }
  const MotionPrior& frozen = prior;
  const Eigen::VectorXd before = frozen.flat_parameters();
  const PlanarSim sim(frozen.geometry(), sim_cfg);
  const double dt = sim_cfg.control_dt;

  const int dz = frozen.config().latent_dim;
  HighLevelPolicy hl(frozen.prop_encoder.output_dim(), dz, cfg.hidden, cfg.init_latent_std);
  hl.init(rng);
  hl.check_compatible(frozen);

  AdamOptimizer opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  opt.add_block("policy", hl.policy.num_params());
  opt.add_block("value", hl.value.num_params());
  opt.add_block("log_std", hl.log_std.size());

  struct Env {
    RobotState state;
    CommandSchedule sched;
    int length = 0;
    double ret = 0.0;
    std::mt19937_64 rng;
  };
  const int E = cfg.n_envs;
  const int max_steps = static_cast<int>(std::lround(cfg.episode_seconds / dt));
  std::vector<Env> envs(static_cast<std::size_t>(E));
  auto reset = [&](Env& env) {
    env.state = standing_state(frozen.geometry());
    if (cfg.reset_noise > 0.0) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (double& q : env.state.joints) q += cfg.reset_noise * u(env.rng);
      env.state.joints = frozen.geometry().clamp_joints(env.state.joints);
      env.state.last_action = env.state.joints;
      update_contacts(env.state, frozen.geometry());
    }
    env.sched = CommandSchedule(cfg, env.rng);
    env.length = 0;
    env.ret = 0.0;
  };
  for (int e = 0; e < E; ++e) {
    envs[static_cast<std::size_t>(e)].rng.seed(cfg.seed * 7919 + static_cast<std::uint64_t>(e) + 1);
    reset(envs[static_cast<std::size_t>(e)]);
  }

  std::filesystem::create_directories(cfg.out_dir);
  CsvWriter metrics(cfg.out_dir / "downstream_metrics.csv", "downstream_metrics",
                    {"update", "env_steps", "mean_reward", "episodes", "mean_episode_return", "mean_episode_length",
                     "policy_loss", "value_loss", "latent_std", "eval_speed_error", "eval_jump_success",
                     "eval_max_abs_latent"});
  CsvWriter evals(cfg.out_dir / "downstream_eval.csv", "downstream_eval",
                  {"update", "env_steps", "task", "seed", "v_cmd", "mean_vx", "speed_error", "mean_speed_reward",
                   "fell", "jump_windows", "jump_successes", "max_abs_latent"});

  const int n = E * cfg.horizon;
  const int in_dim = hl.input_dim();
  const double vscale = 1.0 / (1.0 - cfg.gamma);
  Eigen::MatrixXd IN(in_dim, n), Zs(dz, n), NEXT_IN(in_dim, n);
  Eigen::VectorXd logp(n), val(n), rew(n), next_val(n);
  std::vector<std::uint8_t> term(static_cast<std::size_t>(n)), done(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);

  const long long per_update = n;
  const int total_updates = static_cast<int>((cfg.total_env_steps + per_update - 1) / per_update);
  long long env_steps = 0;
  DownstreamResult result;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int u = 0; u < total_updates; ++u) {
    std::vector<double> fin_ret;
    std::vector<int> fin_len;
    const Eigen::VectorXd ls = hl.log_std.unaryExpr([](double s) { return clamp_log_std(s); });
    const Eigen::VectorXd sd = ls.array().exp();
    const double lp_const = -ls.sum() - dz * kHalfLog2Pi;
    std::vector<TaskCommand> cmds(static_cast<std::size_t>(E));
    std::vector<RobotState> states(static_cast<std::size_t>(E));
    for (int k = 0; k < cfg.horizon; ++k) {
      for (int e = 0; e < E; ++e) {
        cmds[static_cast<std::size_t>(e)] = envs[static_cast<std::size_t>(e)].sched.at(envs[static_cast<std::size_t>(e)].state.time);
        states[static_cast<std::size_t>(e)] = envs[static_cast<std::size_t>(e)].state;
      }
      const Eigen::MatrixXd in = high_level_input(frozen, cmds, states);
      const Eigen::MatrixXd mean = hl.mean(in);
      const Eigen::MatrixXd v = hl.value.forward(in) * vscale;
      Eigen::MatrixXd z(dz, E);
      for (int e = 0; e < E; ++e) {
        double sq = 0.0;
        for (int i = 0; i < dz; ++i) {
          const double nz = normal(envs[static_cast<std::size_t>(e)].rng);
          z(i, e) = mean(i, e) + sd[i] * nz;
          sq += nz * nz;
        }
        logp[k * E + e] = lp_const - 0.5 * sq;
      }
      const Eigen::MatrixXd act = frozen.policy_mean(in.bottomRows(in_dim - kTaskFeatures), z);
      for (int e = 0; e < E; ++e) {
        Env& env = envs[static_cast<std::size_t>(e)];
        const int i = k * E + e;
        IN.col(i) = in.col(e);
        Zs.col(i) = z.col(e);
        val[i] = v(0, e);
        bool terminal = false;
        try {
          env.state = sim.step(env.state, column_action(act, e));
        } catch (const SimulationDiverged&) {
          terminal = true;
        }
        if (!terminal) terminal = fallen(env.state, cfg);
        const double r = terminal ? 0.0 : task_reward(cfg.task, env.state, cmds[static_cast<std::size_t>(e)]);
        rew[i] = r;
        env.ret += r;
        env.length += 1;
        const bool trunc = env.length >= max_steps;
        term[static_cast<std::size_t>(i)] = terminal ? 1 : 0;
        done[static_cast<std::size_t>(i)] = (terminal || trunc) ? 1 : 0;
        NEXT_IN.col(i) = high_level_input(frozen, {env.sched.at(env.state.time)}, {env.state});
        if (done[static_cast<std::size_t>(i)]) {
          fin_ret.push_back(env.ret);
          fin_len.push_back(env.length);
          reset(env);
        }
      }
    }
    next_val = (hl.value.forward(NEXT_IN) * vscale).row(0).transpose();
    env_steps += n;

    Eigen::VectorXd adv(n), ret(n);
    {
      std::vector<double> r(static_cast<std::size_t>(cfg.horizon)), vv(r.size()), nv(r.size());
      std::vector<std::uint8_t> tt(r.size()), dd(r.size());
      for (int e = 0; e < E; ++e) {
        for (int k = 0; k < cfg.horizon; ++k) {
          const int i = k * E + e;
          const std::size_t kk = static_cast<std::size_t>(k);
          r[kk] = rew[i];
          vv[kk] = val[i];
          tt[kk] = term[static_cast<std::size_t>(i)];
          dd[kk] = done[static_cast<std::size_t>(i)];
          nv[kk] = (!dd[kk] && k + 1 < cfg.horizon) ? val[i + E] : next_val[i];
        }
        const GaeResult g = gae(r, vv, nv, tt, dd, cfg.gamma, cfg.gae_lambda);
        for (int k = 0; k < cfg.horizon; ++k) {
          adv[k * E + e] = g.advantages[k];
          ret[k * E + e] = g.returns[k];
        }
      }
    }
    const double mean_reward = rew.mean();
    normalize_advantages(adv);

    Eigen::VectorXd gp(hl.policy.num_params()), gv(hl.value.num_params()), gl(dz);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    double pol_loss_sum = 0.0, v_loss_sum = 0.0;
    int count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int mb = 0; mb < cfg.minibatches; ++mb) {
        const int lo = static_cast<int>(static_cast<long long>(n) * mb / cfg.minibatches);
        const int hi = static_cast<int>(static_cast<long long>(n) * (mb + 1) / cfg.minibatches);
        const int B = hi - lo;
        const double invB = 1.0 / B;
        Eigen::MatrixXd X(in_dim, B), Z(dz, B);
        for (int i = 0; i < B; ++i) {
          X.col(i) = IN.col(order[static_cast<std::size_t>(lo + i)]);
          Z.col(i) = Zs.col(order[static_cast<std::size_t>(lo + i)]);
        }
        gp.setZero();
        gv.setZero();
        gl.setZero();
        Tape tp, tv;
        const Eigen::MatrixXd m = hl.policy.forward(X, tp);
        const Eigen::MatrixXd vh = hl.value.forward(X, tv);
        const Eigen::VectorXd cls = hl.log_std.unaryExpr([](double s) { return clamp_log_std(s); });
        const Eigen::ArrayXd inv_sd = (-cls.array()).exp();
        const double c0 = -cls.sum() - dz * kHalfLog2Pi;
        Eigen::MatrixXd dm(dz, B), dv(1, B);
        double pl = 0.0, vl = 0.0;
        for (int i = 0; i < B; ++i) {
          const int idx = order[static_cast<std::size_t>(lo + i)];
          const Eigen::ArrayXd diff = (Z.col(i) - m.col(i)).array() * inv_sd;
          const double lp = c0 - 0.5 * diff.square().sum();
          const double ratio = std::exp(lp - logp[idx]);
          const double a = adv[idx];
          const double s1 = ratio * a;
          const double s2 = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
          pl -= std::min(s1, s2) * invB;
          const double dlp = s1 <= s2 ? -a * ratio * invB : 0.0;
          dm.col(i) = (dlp * diff * inv_sd).matrix();
          gl += (dlp * (diff.square() - 1.0)).matrix();
          const double err = vh(0, i) - ret[idx] / vscale;
          vl += err * err * invB;
          dv(0, i) = cfg.value_coef * 2.0 * err * invB;
        }
        for (int j = 0; j < dz; ++j) {
          gl[j] -= cfg.entropy_coef;
          if (!(hl.log_std[j] > kLogStdMin && hl.log_std[j] < kLogStdMax)) gl[j] = 0.0;
        }
        hl.policy.backward(tp, dm, gp);
        hl.value.backward(tv, dv, gv);
        if (!std::isfinite(pl) || !std::isfinite(vl))
          throw SimulationDiverged(fmt::format("downstream loss (update {}, epoch {}, minibatch {})", u, epoch, mb),
                                   pl + vl);
        std::array<Eigen::VectorXd*, 3> grads{&gp, &gv, &gl};
        clip_global_norm(grads, cfg.max_grad_norm);
        Eigen::VectorXd& pp = hl.policy.mutable_params();
        Eigen::VectorXd& pv = hl.value.mutable_params();
        std::array<AdamOptimizer::Block, 3> blocks{
            AdamOptimizer::Block{{pp.data(), static_cast<std::size_t>(pp.size())}, {gp.data(), static_cast<std::size_t>(gp.size())}},
            AdamOptimizer::Block{{pv.data(), static_cast<std::size_t>(pv.size())}, {gv.data(), static_cast<std::size_t>(gv.size())}},
            AdamOptimizer::Block{{hl.log_std.data(), static_cast<std::size_t>(dz)}, {gl.data(), static_cast<std::size_t>(dz)}}};
        opt.step(blocks);
        pol_loss_sum += pl;
        v_loss_sum += vl;
        ++count;
      }
    }

    const bool last = u + 1 == total_updates;
    const bool do_eval = last || (cfg.eval_every > 0 && (u + 1) % cfg.eval_every == 0);
    DownstreamEval ev;
    if (do_eval) {
      ev = evaluate_downstream(frozen, hl, sim, cfg);
      for (const auto& c : ev.commands) {
        auto row = evals.row();
        row << u + 1 << env_steps << to_string(cfg.task) << static_cast<long long>(cfg.seed) << c.v_cmd << c.mean_vx
            << c.speed_error << c.mean_speed_reward << (c.fell ? 1 : 0) << c.jump_windows << c.jump_successes
            << c.max_abs_latent;
        evals.write(row);
      }
      evals.flush();
    }
    auto row = metrics.row();
    const double mret = fin_ret.empty() ? nan : std::accumulate(fin_ret.begin(), fin_ret.end(), 0.0) / fin_ret.size();
    const double mlen = fin_len.empty() ? nan : std::accumulate(fin_len.begin(), fin_len.end(), 0.0) / fin_len.size();
    row << u + 1 << env_steps << mean_reward << static_cast<int>(fin_len.size()) << mret << mlen
        << pol_loss_sum / count << v_loss_sum / count << hl.log_std.array().exp().mean();
    if (do_eval) {
      row << ev.mean_speed_error << ev.jump_success_rate << ev.max_abs_latent;
    } else {
      row << nan << nan << nan;
    }
    metrics.write(row);
    metrics.flush();
    if (last) result.final_eval = ev;
    if (progress) progress(u + 1, env_steps);
  }

  Checkpoint ck;
  hl.save(ck);
  ck.put_string("highlevel.task", std::string(to_string(cfg.task)));
  ck.put_string("highlevel.prior_checkpoint", cfg.prior_checkpoint.string());
  ck.save(cfg.out_dir / "highlevel.bin");

  const Eigen::VectorXd after = frozen.flat_parameters();
  result.prior_unchanged = after.size() == before.size() &&
                           std::memcmp(after.data(), before.data(), sizeof(double) * static_cast<std::size_t>(after.size())) == 0;
  result.env_steps = env_steps;
  return result;
}

}  // namespace mprior
