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

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "mprior/csv.hpp"
#include "mprior/downstream.hpp"
#include "mprior/error.hpp"
#include "mprior/trainer.hpp"
#include "test_support.hpp"

using namespace mprior;
using mprior::testing::TempDir;

namespace {

TrainConfig tiny_prior_config() {
  TrainConfig c;
  c.n_envs = 2;
  c.horizon = 16;
  c.epochs = 1;
  c.minibatches = 2;
  c.single_thread = true;
  c.seed = 11;
  c.prior.latent_dim = 4;
  c.prior.encoder_hidden = {16};
  c.prior.prop_width = 16;
  c.prior.policy_hidden = {16};
  c.prior.critic_hidden = {16};
  c.disc.hidden = {16};
  c.disc.batch_size = 16;
  c.clips = {"hop", "walk_1.0"};
  return c;
}

std::filesystem::path write_tiny_prior(const std::filesystem::path& dir) {
  const TrainConfig c = tiny_prior_config();
  const RobotGeometry g = load_geometry(c);
  Trainer t(c, load_dataset(c, g), g);
  t.collect_rollouts();
  t.ppo_update();
  const auto path = dir / "prior.bin";
  t.save_checkpoint(path);
  return path;
}

DownstreamConfig tiny_downstream(const std::filesystem::path& prior, const std::filesystem::path& out) {
  DownstreamConfig d;
  d.prior_checkpoint = prior;
  d.n_envs = 2;
  d.horizon = 16;
  d.total_env_steps = 64;
  d.epochs = 1;
  d.minibatches = 2;
  d.hidden = {16};
  d.eval_commands = {0.5};
  d.eval_warmup = 0.2;
  d.eval_seconds = 0.6;
  d.eval_every = 1;
  d.seed = 2;
  d.out_dir = out;
  return d;
}

}  // namespace

TEST_CASE("task reward values") {
  RobotState s;
  s.root_z = 0.3;
  TaskCommand cmd;
  cmd.v_cmd = 1.0;
  s.vx = 0.5;
  CHECK(task_reward(DownstreamTask::kFollowCommand, s, cmd) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  s.vx = 1.0;
  CHECK(task_reward(DownstreamTask::kFollowCommand, s, cmd) == 1.0);

  cmd.in_window = true;
  s.root_z = 0.60;
  CHECK(task_reward(DownstreamTask::kJumpForward, s, cmd) == doctest::Approx(2.0));
  s.root_z = 0.525;
  CHECK(task_reward(DownstreamTask::kJumpForward, s, cmd) == doctest::Approx(1.0));
  s.root_z = 0.40;
  CHECK(task_reward(DownstreamTask::kJumpForward, s, cmd) == 0.0);
  s.root_z = 2.0;
  CHECK(task_reward(DownstreamTask::kCombined, s, cmd) == 2.0);
  // Follow-command ignores windows.
  CHECK(task_reward(DownstreamTask::kFollowCommand, s, cmd) == 1.0);
}

TEST_CASE("speed reward is unimodal around the command") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    TaskCommand cmd;
    cmd.v_cmd = mprior::testing::uniform(rng, 0.0, 1.2);
    RobotState s;
    double prev = -1.0;
    for (double vx = cmd.v_cmd - 2.0; vx <= cmd.v_cmd + 1e-12; vx += 0.05) {
      s.vx = vx;
      const double r = task_reward(DownstreamTask::kFollowCommand, s, cmd);
      CHECK(r >= prev);
      prev = r;
    }
    for (double vx = cmd.v_cmd; vx <= cmd.v_cmd + 2.0; vx += 0.05) {
      s.vx = vx;
      const double r = task_reward(DownstreamTask::kFollowCommand, s, cmd);
      CHECK(r <= prev + 1e-15);
      prev = r;
    }
  }
}

TEST_CASE("command schedule") {
  DownstreamConfig cfg;
  cfg.task = DownstreamTask::kCombined;
  std::mt19937_64 a(5), b(5);
  const CommandSchedule sa(cfg, a), sb(cfg, b);
  CHECK(sa.speeds() == sb.speeds());
  for (double v : sa.speeds()) {
    CHECK(v >= cfg.cmd_min);
    CHECK(v <= cfg.cmd_max);
  }
  CHECK(sa.at(0.0).v_cmd == sa.speeds()[0]);
  if (sa.speeds().size() > 1) CHECK(sa.at(cfg.command_period + 0.01).v_cmd == sa.speeds()[1]);

  const CommandSchedule fixed(cfg, 0.7);
  CHECK(fixed.at(5.0).v_cmd == 0.7);
  CHECK(!fixed.at(1.0).in_window);
  CHECK(fixed.at(1.0).jump_countdown == doctest::Approx(1.0));
  CHECK(fixed.at(2.1).in_window);
  CHECK(fixed.at(2.1).jump_countdown == 0.0);
  CHECK(!fixed.at(2.6).in_window);
  CHECK(fixed.at(5.2).in_window);

  cfg.task = DownstreamTask::kFollowCommand;
  const CommandSchedule follow(cfg, 0.7);
  CHECK(!follow.at(2.1).in_window);
}

TEST_CASE("config keys and validation") {
  const KeyValueConfig kv =
      KeyValueConfig::parse("seed = 4\ndownstream.random_prior = true\ndownstream.task = jump-forward\ndownstream.n_envs = 3\ndownstream.cmd_max = 1.0\n");
  const DownstreamConfig d = downstream_config_from(kv);
  CHECK(d.task == DownstreamTask::kJumpForward);
  CHECK(d.n_envs == 3);
  CHECK(d.cmd_max == 1.0);
  CHECK(d.seed == 4);
  CHECK_THROWS_AS(downstream_task_from_string("dance"), ConfigError);
  DownstreamConfig bad;
  bad.cmd_min = 1.0;
  bad.cmd_max = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (auto t : {DownstreamTask::kFollowCommand, DownstreamTask::kJumpForward, DownstreamTask::kCombined})
    CHECK(downstream_task_from_string(to_string(t)) == t);
}

TEST_CASE("high-level policy shapes and determinism") {
  PriorConfig pc;
  pc.latent_dim = 4;
  pc.encoder_hidden = {8};
  pc.prop_width = 8;
  pc.policy_hidden = {8};
  pc.critic_hidden = {8};
  MotionPrior prior(pc, 2, RobotGeometry{});
  std::mt19937_64 rng(3);
  prior.init(rng);

  HighLevelPolicy hl(8, 4, {16}, 0.3);
  hl.init(rng);
  CHECK(hl.input_dim() == kTaskFeatures + 8);
  CHECK(hl.latent_dim() == 4);
  CHECK_NOTHROW(hl.check_compatible(prior));
  HighLevelPolicy wrong(8, 5, {16}, 0.3);
  CHECK_THROWS_AS(wrong.check_compatible(prior), CompatibilityError);

  const RobotState s = standing_state(RobotGeometry{});
  TaskCommand cmd;
  cmd.v_cmd = 0.5;
  const Eigen::MatrixXd in = high_level_input(prior, {cmd}, {s});
  REQUIRE(in.rows() == hl.input_dim());
  REQUIRE(in.cols() == 1);
  const Eigen::VectorXd a = hl.act(in.col(0), 9), b = hl.act(in.col(0), 9);
  CHECK(a.size() == 4);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 4) == 0);
  CHECK(hl.distribution(in.col(0)).std().array().maxCoeff() == doctest::Approx(0.3));
}

TEST_CASE("fallen detection") {
  DownstreamConfig cfg;
  RobotState s = standing_state(RobotGeometry{});
  CHECK(!fallen(s, cfg));
  s.root_z = 0.1;
  CHECK(fallen(s, cfg));
  s = standing_state(RobotGeometry{});
  s.pitch = -1.2;
  CHECK(fallen(s, cfg));
}

TEST_CASE("downstream training leaves the prior untouched") {
  TempDir dir("downstream");
  const auto prior_path = write_tiny_prior(dir.path());
  const DownstreamConfig cfg = tiny_downstream(prior_path, dir / "out");
  const DownstreamResult r = train_downstream(cfg);
  CHECK(r.prior_unchanged);
  CHECK(r.env_steps == 64);
  REQUIRE(r.final_eval.commands.size() == 1);
  CHECK(r.final_eval.mean_speed_error >= 0.0);
  CHECK(r.final_eval.jump_success_rate == 0.0);
  CHECK(std::filesystem::exists(dir / "out" / "downstream_metrics.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "downstream_eval.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "highlevel.bin"));

  // Same seed, same curves.
  DownstreamConfig again = cfg;
  again.out_dir = dir / "out2";
  train_downstream(again);
  const CsvTable m1 = read_csv(dir / "out" / "downstream_metrics.csv");
  const CsvTable m2 = read_csv(dir / "out2" / "downstream_metrics.csv");
  CHECK(m1.rows == m2.rows);
}

TEST_CASE("jump-forward evaluation reports a rate in [0, 1]") {
  TempDir dir("jump");
  const auto prior_path = write_tiny_prior(dir.path());
  DownstreamConfig cfg = tiny_downstream(prior_path, dir / "out");
  cfg.task = DownstreamTask::kJumpForward;
  cfg.eval_seconds = 3.0;
  const DownstreamResult r = train_downstream(cfg);
  CHECK(r.final_eval.jump_success_rate >= 0.0);
  CHECK(r.final_eval.jump_success_rate <= 1.0);
  CHECK(r.final_eval.commands[0].jump_windows >= 1);
}

TEST_CASE("missing prior checkpoint is an I/O error") {
  TempDir dir("noprior");
  const DownstreamConfig cfg = tiny_downstream(dir / "absent.bin", dir / "out");
  CHECK_THROWS_AS(train_downstream(cfg), IoError);
}
