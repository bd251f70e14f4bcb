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

#include "mprior/checkpoint.hpp"
#include "mprior/discriminator.hpp"
#include "mprior/error.hpp"
#include "mprior/rewards.hpp"
#include "mprior/synthetic_clips.hpp"
#include "test_support.hpp"

using namespace mprior;
using mprior::testing::uniform;

namespace {

Eigen::MatrixXd toy_cloud(double center, int n, std::mt19937_64& rng, int dim = kTransitionFeatures) {
  std::normal_distribution<double> noise(0.0, 0.1);
  Eigen::MatrixXd m(dim, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim; ++i) m(i, j) = center + noise(rng);
  return m;
}

DiscConfig small_disc(std::uint64_t seed) {
  DiscConfig c;
  c.hidden = {16, 16};
  c.batch_size = 32;
  c.seed = seed;
  return c;
}

RobotState random_state(std::mt19937_64& rng) {
  RobotState s;
  s.root_x = uniform(rng, -2, 2);
  s.root_z = uniform(rng, 0.2, 0.4);
  s.pitch = uniform(rng, -1, 1);
  s.vx = uniform(rng, -1, 1);
  s.vz = uniform(rng, -1, 1);
  for (auto& q : s.joints) q = uniform(rng, -1.5, 0.0);
  for (auto& q : s.joint_vels) q = uniform(rng, -3, 3);
  return s;
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("identical standing frames have zero velocity features") {
  const RobotGeometry g;
  const MotionClip stand = generate_synthetic_clip(ClipKind::kStand, ClipParams{}, g);
  const Eigen::VectorXd f = make_feature(kinematic_frame(stand, 5), kinematic_frame(stand, 6));
  CHECK(f.size() == kTransitionFeatures);
  for (int half = 0; half < 2; ++half) {
    const int o = half * kFrameFeatures;
    for (int j = 0; j < 4; ++j) CHECK(f[o + 4 + j] == 0.0);
    CHECK(f[o + 11] == 0.0);
    CHECK(f[o + 12] == 0.0);
  }
}

TEST_CASE("features ignore horizontal position") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    RobotState a = random_state(rng), b = random_state(rng);
    const Eigen::VectorXd f = make_feature(a, b);
    a.root_x += 5.0;
    b.root_x += 5.0;
    CHECK(make_feature(a, b) == f);
  }
}

TEST_CASE("reference walk features carry the walking speed") {
  const RobotGeometry g;
  ClipParams p;
  p.speed = 1.0;
  const MotionClip walk = generate_synthetic_clip(ClipKind::kWalk, p, g);
  const Eigen::MatrixXd ex = expert_features(walk);
  CHECK(ex.cols() == walk.last());
  CHECK(ex.row(11).mean() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(ex.row(12).mean()) < 1e-3);
  CHECK(ex(11, 10) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("expert and policy features share one code path") {
  const RobotGeometry g;
  const MotionClip hop = generate_synthetic_clip(ClipKind::kHop, ClipParams{}, g);
  for (int i : {0, 10, 40}) {
    const KinematicFrame a = kinematic_frame(hop, i), b = kinematic_frame(hop, i + 1);
    RobotState sa, sb;
    sa.root_z = a.root_z;
    sa.pitch = a.pitch;
    sa.vx = a.vx;
    sa.vz = a.vz;
    sa.joints = a.joints;
    sa.joint_vels = a.joint_vels;
    sb.root_z = b.root_z;
    sb.pitch = b.pitch;
    sb.vx = b.vx;
    sb.vz = b.vz;
    sb.joints = b.joints;
    sb.joint_vels = b.joint_vels;
    CHECK(same_bits(make_feature(sa, sb), make_feature(a, b)));
    CHECK(same_bits(make_feature(sa, sb), expert_features(hop).col(i)));
  }
}

TEST_CASE("feature normalizer") {
  Eigen::MatrixXd x(2, 4);
  x << 1, 2, 3, 4, 5, 5, 5, 5;
  const FeatureNormalizer n = FeatureNormalizer::fit(x, 0.1);
  const Eigen::MatrixXd y = n.apply(x);
  CHECK(std::abs(y.row(0).mean()) < 1e-12);
  CHECK(y.row(0).array().square().mean() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(n.inv_std[1] == doctest::Approx(10.0));
  CHECK(FeatureNormalizer::identity(2).apply(x) == x);
}

TEST_CASE("LSGAN loss values") {
  Mlp net({kTransitionFeatures, 4, 1});
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd e = toy_cloud(1.0, 8, rng), p = toy_cloud(-1.0, 8, rng);

  // D == 0: 1 + 1.
  net.set_params(Eigen::VectorXd::Zero(net.num_params()));
  CHECK(disc_loss(net, e, p, 0.0).lsgan == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(disc_loss(net, e, p, 5.0).penalty == 0.0);

  // A linear unit that outputs exactly +1 on e and -1 on p.
  Mlp lin({1, 1}, Activation::kTanh, Activation::kIdentity);
  lin.set_params(Eigen::Vector2d(1.0, 0.0));
  const DiscLossStats perfect = disc_loss(lin, Eigen::MatrixXd::Ones(1, 3), -Eigen::MatrixXd::Ones(1, 5), 0.0);
  CHECK(perfect.lsgan == 0.0);
  CHECK(perfect.mean_expert == 1.0);
  CHECK(perfect.mean_policy == -1.0);
  // Gradient penalty of a unit-slope linear D is exactly 1 per sample.
  const DiscLossStats gp = disc_loss(lin, Eigen::MatrixXd::Ones(1, 3), -Eigen::MatrixXd::Ones(1, 5), 5.0);
  CHECK(gp.penalty == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(gp.total == doctest::Approx(5.0).epsilon(1e-15));

  CHECK_THROWS_AS(disc_loss(net, Eigen::MatrixXd(kTransitionFeatures, 0), p, 0.0), UsageError);
  CHECK_THROWS_AS(disc_loss(net, e, Eigen::MatrixXd(kTransitionFeatures, 0), 0.0), UsageError);
}

TEST_CASE("LSGAN loss is invariant to batch order") {
  std::mt19937_64 rng(3);
  Mlp net({kTransitionFeatures, 8, 1});
  net.init(rng);
  const Eigen::MatrixXd e = toy_cloud(0.5, 6, rng), p = toy_cloud(-0.5, 6, rng);
  const Eigen::MatrixXd er = e(Eigen::all, std::vector<int>{5, 3, 1, 0, 2, 4});
  const Eigen::MatrixXd pr = p(Eigen::all, std::vector<int>{1, 0, 5, 4, 3, 2});
  CHECK(disc_loss(net, e, p, 5.0).total == doctest::Approx(disc_loss(net, er, pr, 5.0).total).epsilon(1e-13));
}

TEST_CASE("discriminator loss gradient matches central differences") {
  std::mt19937_64 rng(4);
  Mlp net({kTransitionFeatures, 12, 10, 1});
  net.init(rng);
  const Eigen::MatrixXd e = toy_cloud(0.3, 5, rng), p = toy_cloud(-0.3, 7, rng);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
  disc_loss(net, e, p, 5.0, &grad);
  Mlp probe = net;
  const auto r = mprior::testing::check_gradient(net.params(), grad, mprior::testing::mlp_check_indices(net, -1, 0),
                                                 [&](const Eigen::VectorXd& prm) {
                                                   probe.set_params(prm);
                                                   return disc_loss(probe, e, p, 5.0).total;
                                                 });
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("separable toy clouds are learned") {
  std::mt19937_64 rng(5);
  DiscConfig cfg;
  cfg.seed = 5;
  DiscriminatorBank bank(1, cfg);
  bank.set_expert(0, toy_cloud(1.0, 2000, rng));
  bank.add_policy(0, toy_cloud(-1.0, 2000, rng));
  bank.update_clip(0, 500);
  const Eigen::VectorXd de = bank.score(0, toy_cloud(1.0, 500, rng));
  const Eigen::VectorXd dp = bank.score(0, toy_cloud(-1.0, 500, rng));
  CHECK(de.mean() > 0.8);
  CHECK(dp.mean() < -0.8);
  CHECK(adversarial_style_reward(de.mean()) > 0.99);
}

TEST_CASE("replay keeps the most recent transitions") {
  DiscConfig cfg = small_disc(1);
  cfg.replay_capacity = 10;
  DiscriminatorBank bank(1, cfg);
  std::mt19937_64 rng(6);
  bank.add_policy(0, toy_cloud(0.0, 7, rng));
  CHECK(bank.replay_size(0) == 7);
  bank.add_policy(0, toy_cloud(0.0, 7, rng));
  CHECK(bank.replay_size(0) == 10);
}

TEST_CASE("update_bank leaves clips without data untouched and requires expert data") {
  std::mt19937_64 rng(7);
  DiscriminatorBank bank(2, small_disc(2));
  bank.set_expert(0, toy_cloud(1.0, 50, rng));
  bank.set_expert(1, toy_cloud(1.0, 50, rng));
  const Eigen::VectorXd before1 = bank.net(1).params();
  const auto stats = update_bank(bank, {toy_cloud(-1.0, 40, rng), Eigen::MatrixXd(kTransitionFeatures, 0)}, 3);
  CHECK(stats[0].updated);
  CHECK(!stats[1].updated);
  CHECK(same_bits(bank.net(1).params(), before1));

  DiscriminatorBank missing(2, small_disc(2));
  missing.set_expert(0, toy_cloud(1.0, 50, rng));
  CHECK_THROWS_AS(update_bank(missing, {Eigen::MatrixXd(kTransitionFeatures, 0), toy_cloud(-1.0, 5, rng)}, 1),
                  ConfigError);
}

TEST_CASE("per-clip updates are independent of order and threading") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd e0 = toy_cloud(1.0, 60, rng), e1 = toy_cloud(0.5, 60, rng);
  const Eigen::MatrixXd p0 = toy_cloud(-1.0, 60, rng), p1 = toy_cloud(-0.5, 60, rng);
  auto make = [&] {
    DiscriminatorBank b(2, small_disc(3));
    b.set_expert(0, e0);
    b.set_expert(1, e1);
    b.add_policy(0, p0);
    b.add_policy(1, p1);
    return b;
  };
  DiscriminatorBank forward = make(), backward = make();
  forward.update_clip(0, 5);
  forward.update_clip(1, 5);
  backward.update_clip(1, 5);
  backward.update_clip(0, 5);
  CHECK(same_bits(forward.net(0).params(), backward.net(0).params()));
  CHECK(same_bits(forward.net(1).params(), backward.net(1).params()));

  DiscriminatorBank serial = make(), threaded = make();
  const std::vector<Eigen::MatrixXd> more{toy_cloud(-1.0, 10, rng), toy_cloud(-0.5, 10, rng)};
  update_bank(serial, more, 4, false);
  update_bank(threaded, more, 4, true);
  CHECK(same_bits(serial.net(0).params(), threaded.net(0).params()));
  CHECK(same_bits(serial.net(1).params(), threaded.net(1).params()));
}

TEST_CASE("bank checkpoint round-trip") {
  std::mt19937_64 rng(9);
  DiscriminatorBank bank(2, small_disc(4));
  bank.set_expert(0, toy_cloud(1.0, 20, rng));
  bank.add_policy(0, toy_cloud(-1.0, 20, rng));
  bank.update_clip(0, 2);
  Checkpoint ck;
  bank.save(ck);
  DiscriminatorBank other(2, small_disc(99));
  other.load(ck);
  CHECK(same_bits(other.net(0).params(), bank.net(0).params()));
  CHECK(same_bits(other.net(1).params(), bank.net(1).params()));
}
