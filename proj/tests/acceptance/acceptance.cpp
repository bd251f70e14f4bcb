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

// Acceptance suite: one [PASS]/[FAIL] line per criterion.
//   mprior_acceptance --criterion N --work-dir DIR
// Without --criterion every criterion runs in order. Exit status is 0 only if
// every selected criterion passed.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mprior/discriminator.hpp"
#include "mprior/downstream.hpp"
#include "mprior/nn.hpp"
#include "mprior/prior.hpp"
#include "mprior/rewards.hpp"
#include "mprior/sim.hpp"
#include "mprior/trainer.hpp"
#include "mprior_cli/cli.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace mprior;
using mprior::testing::uniform;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome(const fs::path&)> run;
};

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RobotState state_at(const RefPose& p) {
  RobotState s;
  s.root_x = p.root_x;
  s.root_z = p.root_z;
  s.pitch = p.pitch;
  s.joints = p.joints;
  return s;
}

// ---------------------------------------------------------------------------

Outcome reward_oracles(const fs::path&) {
  const RobotGeometry g;
  const RewardWeights w;
  RefPose ref;
  ref.root_z = 0.3;
  ref.joints = {0.6, -1.2, 0.6, -1.2};
  ref.update_feet(g);
  int failed = 0, checked = 0;
  std::string first;
  auto expect = [&](const char* what, double got, double want) {
    ++checked;
    if (!close(got, want, 1e-9)) {
      ++failed;
      if (first.empty()) first = fmt::format("{} = {:.12g}, expected {:.12g}", what, got, want);
    }
  };

  RobotState s = state_at(ref);
  s.pitch = 0.2;
  expect("r_ori(0.2 rad)", functionality_reward(s, ref, w).r_ori, std::exp(-10.0 * 0.04));
  s = state_at(ref);
  s.root_z += 0.05;
  expect("r_pos_z(0.05 m)", functionality_reward(s, ref, w).r_pos_z, std::exp(-80.0 * 0.0025));
  s = state_at(ref);
  s.root_x += 0.1;
  expect("r_pos_xy(0.1 m)", functionality_reward(s, ref, w).r_pos_xy, std::exp(-20.0 * 0.01));

  s = state_at(ref);
  for (auto& q : s.joints) q += 0.1;
  RefPose feet_match = ref;
  feet_match.feet = foot_fk(s.root_x, s.root_z, s.pitch, s.joints, g);
  expect("r_joint(joints +0.1, feet exact)", joint_style_reward(s, feet_match, g), std::exp(-5.0 * 4 * 0.01) + 1.0);
  s = state_at(ref);
  RefPose foot_off = ref;
  foot_off.feet[0].x += 0.1;
  expect("r_joint(one foot +0.1 m)", joint_style_reward(s, foot_off, g), 1.0 + std::exp(-20.0 * 0.01));

  expect("r_adv(-1)", adversarial_style_reward(-1.0), 1.0 - 0.25 * 4.0);
  expect("r_adv(0)", adversarial_style_reward(0.0), 0.75);
  expect("r_adv(3)", adversarial_style_reward(3.0), 0.0);
  expect("r_adv(1)", adversarial_style_reward(1.0), 1.0);

  expect("scheduled style", schedule_style_reward(0.75, 0.8, 0.75, w), 0.5 * 0.75 + 0.5 * 0.8 + 0.5 * 0.25 * 0.8);

  const RobotState perfect = state_at(ref);
  const RewardBreakdown mi = total_reward(perfect, perfect, ref, -1.0, 0.5, w, RewardMode::kMotionImitation, g);
  expect("motion imitation at perfect tracking", mi.total,
         w.func_ori + w.func_pos_xy + w.func_pos_z + w.style_joint * 2.0);

  // Published six-digit values agree with the closed forms above.
  const bool literals = close(std::exp(-0.4), 0.670320, 5e-7) && close(std::exp(-0.2), 0.818731, 5e-7) &&
                        close(std::exp(-0.2) + 1.0, 1.818731, 5e-7);
  if (!literals) ++failed;
  return {failed == 0, failed == 0 ? fmt::format("{} closed-form values within 1e-9", checked) : first};
}

Outcome ar_kl_oracle(const fs::path&) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  const int n = 1000000;
  std::string detail;
  bool pass = true;
  for (int setting = 0; setting < 5; ++setting) {
    PriorConfig cfg;
    cfg.beta = 1.0;
    cfg.alpha = uniform(rng, 0.5, 0.98);
    const int d = 1 + setting;
    Eigen::VectorXd mu(d), sigma(d), zp(d);
    for (int i = 0; i < d; ++i) {
      mu[i] = uniform(rng, -1, 1);
      sigma[i] = uniform(rng, 0.1, 1.2);
      zp[i] = uniform(rng, -1.5, 1.5);
    }
    const double sp = std::sqrt(1.0 - cfg.alpha * cfg.alpha);
    double sum = 0.0, sum_sq = 0.0;
    for (int k = 0; k < n; ++k) {
      double log_ratio = 0.0;
      for (int i = 0; i < d; ++i) {
        const double e = normal(rng);
        const double m = mu[i] + sigma[i] * e - cfg.alpha * zp[i];
        log_ratio += -std::log(sigma[i]) - 0.5 * e * e + std::log(sp) + 0.5 * m * m / (sp * sp);
      }
      sum += log_ratio;
      sum_sq += log_ratio * log_ratio;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum_sq / n - mean * mean) / n);
    const double closed = ar_kl_loss(mu, sigma, zp, cfg);
    const double z_score = std::abs(mean - closed) / se;
    pass = pass && z_score < 3.0;
    detail += fmt::format("{}{:.2f}", setting ? "/" : "z-scores ", z_score);
  }
  PriorConfig cfg;
  cfg.beta = 1.0;
  Eigen::VectorXd zp(3);
  zp << 0.3, -1.0, 2.0;
  const double identity = ar_kl_loss(cfg.alpha * zp, Eigen::VectorXd::Constant(3, cfg.prior_std()), zp, cfg);
  pass = pass && std::abs(identity) <= 1e-12;
  return {pass, fmt::format("{}, identity case {:.3g}", detail, identity)};
}

Outcome gradient_checks(const fs::path&) {
  std::mt19937_64 rng(7);
  MotionPrior prior(PriorConfig{}, 4, RobotGeometry{});
  prior.init(rng);
  struct Net {
    const char* name;
    const Mlp* net;
  };
  const std::vector<Net> nets{{"encoder", &prior.ref_encoder},
                              {"proprioception", &prior.prop_encoder},
                              {"policy", &prior.policy},
                              {"critic", &prior.critic}};
  bool pass = true;
  std::string detail;
  long long checked = 0;
  for (const auto& [name, net] : nets) {
    Eigen::MatrixXd x(net->input_dim(), 3), w(net->output_dim(), 3);
    for (auto& v : x.reshaped()) v = uniform(rng, -1, 1);
    for (auto& v : w.reshaped()) v = uniform(rng, -1, 1);
    const auto r = mprior::testing::check_mlp_backward(*net, x, w, mprior::testing::mlp_check_indices(*net, 3000, 11));
    pass = pass && r.max_rel_err < 1e-4;
    checked += r.checked;
    detail += fmt::format("{} {:.1e}, ", name, r.max_rel_err);
  }

  // Discriminator loss, including the gradient penalty, over every parameter.
  const DiscConfig dc;
  std::vector<int> widths{kTransitionFeatures};
  widths.insert(widths.end(), dc.hidden.begin(), dc.hidden.end());
  widths.push_back(1);
  Mlp disc(widths, dc.activation);
  disc.init(rng);
  Eigen::MatrixXd e(kTransitionFeatures, 2), p(kTransitionFeatures, 2);
  for (auto& v : e.reshaped()) v = uniform(rng, -1, 1);
  for (auto& v : p.reshaped()) v = uniform(rng, -1, 1);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(disc.num_params());
  disc_loss(disc, e, p, dc.gp_weight, &grad);
  Mlp probe = disc;
  const auto r = mprior::testing::check_gradient(disc.params(), grad, mprior::testing::mlp_check_indices(disc, -1, 0),
                                                 [&](const Eigen::VectorXd& prm) {
                                                   probe.set_params(prm);
                                                   return disc_loss(probe, e, p, dc.gp_weight).total;
                                                 });
  pass = pass && r.max_rel_err < 1e-4;
  checked += r.checked;
  detail += fmt::format("discriminator {:.1e}; {} parameters checked", r.max_rel_err, checked);
  return {pass, detail};
}

Outcome simulator_invariants(const fs::path&) {
  const RobotGeometry g;
  const SimConfig cfg;
  const PlanarSim sim(g, cfg);
  std::mt19937_64 reset_rng(0);
  RefPose stand;
  stand.root_z = standing_height(g);
  stand.joints = standing_joints();
  stand.update_feet(g);
  const RobotState standing = reset_from_reference(stand, RefVelocity{}, 0.0, g, reset_rng);

  RobotState s = standing;
  s.root_z = 10.0;
  s.vx = 0.7;
  s.vz = 1.3;
  s.pitch_rate = 0.4;
  update_contacts(s, g);
  double x = s.root_x, z = s.root_z, p = s.pitch, vx = s.vx, vz = s.vz, w = s.pitch_rate;
  const double dt = cfg.substep_dt();
  int mismatches = 0, substeps = 0;
  while (substeps < 500) {
    s = sim.step(s, JointVector{0.5, -1.0, 0.2, -0.5});
    for (int k = 0; k < cfg.substeps; ++k, ++substeps) {
      vz += cfg.gravity * dt;
      x += vx * dt;
      z += vz * dt;
      p += w * dt;
    }
    mismatches += !(s.root_x == x && s.root_z == z && s.pitch == p && s.vx == vx && s.vz == vz && s.pitch_rate == w);
    mismatches += s.foot_contact[0] || s.foot_contact[1];
  }

  std::mt19937_64 rng(11);
  s = standing;
  long long violations = 0, samples = 0;
  for (int i = 0; i < 10000; ++i) {
    if (i % 200 == 0) s = standing;
    JointVector a;
    for (int j = 0; j < kNumJoints; ++j) a[j] = uniform(rng, g.joint_limits[j].lo, g.joint_limits[j].hi);
    ContactLog log;
    s = sim.step(s, a, &log);
    for (const auto& smp : log.samples)
      for (const auto& f : smp.feet) {
        ++samples;
        violations += (f.normal < 0.0) || (std::abs(f.tangential) > cfg.friction * f.normal + 1e-9);
      }
  }
  return {mismatches == 0 && violations == 0,
          fmt::format("{} flight substeps with {} mismatches; {} contact samples with {} violations", substeps,
                      mismatches, samples, violations)};
}

Outcome discriminator_convergence(const fs::path&) {
  auto cloud = [](double center, int n, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.1);
    Eigen::MatrixXd m(kTransitionFeatures, n);
    for (auto& v : m.reshaped()) v = center + noise(rng);
    return m;
  };
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    DiscConfig cfg;
    cfg.seed = seed;
    DiscriminatorBank bank(1, cfg);
    bank.set_expert(0, cloud(1.0, 2000, rng));
    bank.add_policy(0, cloud(-1.0, 2000, rng));
    bank.update_clip(0, 500);
    const double de = bank.score(0, cloud(1.0, 500, rng)).mean();
    const double dp = bank.score(0, cloud(-1.0, 500, rng)).mean();
    pass = pass && de > 0.8 && dp < -0.8;
    detail += fmt::format("{}seed {}: D(expert) {:.3f}, D(policy) {:.3f}", seed == 1 ? "" : "; ", seed, de, dp);
  }
  return {pass, detail};
}

TrainConfig run_config(const fs::path& dir, std::vector<std::string> clips, RewardMode mode, std::uint64_t seed,
                       long long steps) {
  TrainConfig c;
  c.clips = std::move(clips);
  c.mode = mode;
  c.seed = seed;
  c.total_env_steps = steps;
  c.single_thread = true;
  c.out_dir = dir;
  return c;
}

EvalSummary train_and_evaluate(const TrainConfig& c) {
  const RobotGeometry g = load_geometry(c);
  Trainer t(c, load_dataset(c, g), g);
  const auto started = std::chrono::steady_clock::now();
  t.train([&](int update, long long steps) {
    if (update % 200 != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cout << fmt::format("    {} seed {}: {} env steps ({:.0f} s)\n", to_string(c.mode), c.seed, steps, secs)
              << std::flush;
  });
  return t.evaluate();
}

Outcome single_clip_imitation(const fs::path& work) {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const EvalSummary s =
        train_and_evaluate(run_config(work / "c6" / fmt::format("seed{}", seed), {"hop"}, RewardMode::kVim, seed, 2'000'000));
    pass = pass && s.err_x < 0.15 && s.err_z < 0.05 && s.reached_end_frac >= 0.8;
    detail += fmt::format("{}seed {}: x {:.3f} m, z {:.3f} m, reached {:.0f}%", seed == 1 ? "" : "; ", seed, s.err_x,
                          s.err_z, 100.0 * s.reached_end_frac);
  }
  return {pass, detail};
}

Outcome multi_clip_ablation(const fs::path& work) {
  const std::vector<std::string> suite{"walk_1.0", "hop", "jump_forward", "backflip"};
  int shorter = 0, worse_joints = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto run = [&](RewardMode mode) {
      return train_and_evaluate(
          run_config(work / "c7" / fmt::format("{}_seed{}", to_string(mode), seed), suite, mode, seed, 1'000'000));
    };
    const EvalSummary vim = run(RewardMode::kVim);
    const EvalSummary gail = run(RewardMode::kGail);
    const EvalSummary mi = run(RewardMode::kMotionImitation);
    shorter += gail.mean_length < vim.mean_length;
    worse_joints += mi.err_joint > vim.err_joint;
    detail += fmt::format("{}seed {}: length vim {:.1f} gail {:.1f}, joint err vim {:.4f} mi {:.4f}",
                          seed == 1 ? "" : "; ", seed, vim.mean_length, gail.mean_length, vim.err_joint, mi.err_joint);
  }
  return {shorter >= 2 && worse_joints >= 2,
          fmt::format("gail shorter in {}/3, motion imitation worse joints in {}/3 ({})", shorter, worse_joints, detail)};
}

Outcome scheduler_algebra(const fs::path&) {
  std::mt19937_64 rng(8);
  double worst_sum = 0.0, worst_slope = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    RewardWeights w;
    w.style_adv = uniform(rng, 0, 2);
    w.style_joint = uniform(rng, 0, 2);
    const double r_adv = uniform(rng, 0, 1), r_joint = uniform(rng, 0, 2);
    worst_sum = std::max(worst_sum, std::abs(schedule_style_reward(r_adv, r_joint, 1.0, w) -
                                             (w.style_adv * r_adv + w.style_joint * r_joint)));
    const double m0 = uniform(rng, 0, 0.4), m1 = uniform(rng, 0.6, 1.0);
    const double slope =
        (schedule_style_reward(r_adv, r_joint, m1, w) - schedule_style_reward(r_adv, r_joint, m0, w)) / (m1 - m0);
    worst_slope = std::max(worst_slope, std::abs(slope + w.style_adv * r_joint));
  }
  return {worst_sum <= 1e-12 && worst_slope <= 1e-12,
          fmt::format("unscheduled-sum deviation {:.2e}, slope deviation {:.2e}", worst_sum, worst_slope)};
}

Outcome end_to_end_determinism(const fs::path& work) {
  std::vector<std::string> texts;
  for (const char* name : {"a", "b"}) {
    const fs::path out = work / "c9" / name;
    fs::remove_all(out);
    std::ostringstream log, err;
    const int rc = mprior::cli::run_cli(
        {"mprior", "train", "--single-thread", "--seed", "5", "--steps", "100000", "--out", out.string()}, log, err);
    if (rc != mprior::cli::kExitOk) return {false, fmt::format("train exited with {}: {}", rc, err.str())};
    texts.push_back(slurp(out / "metrics.csv"));
  }
  const bool same = !texts[0].empty() && texts[0] == texts[1];
  return {same, fmt::format("metrics.csv {} bytes, runs {}", texts[0].size(), same ? "identical" : "differ")};
}

Outcome downstream_smoke(const fs::path& work) {
  const fs::path prior_dir = work / "c10" / "prior";
  train_and_evaluate(run_config(prior_dir, {"hop", "walk_0.5", "walk_1.0"}, RewardMode::kVim, 1, 1'000'000));
  const fs::path ck = prior_dir / "checkpoint.bin";
  const std::string before = slurp(ck);
  const Eigen::VectorXd params_before = load_prior_checkpoint(ck).prior.flat_parameters();

  DownstreamConfig cfg;
  cfg.task = DownstreamTask::kFollowCommand;
  cfg.prior_checkpoint = ck;
  cfg.total_env_steps = 1'000'000;
  cfg.eval_commands = {0.3, 0.6, 1.0};
  cfg.seed = 1;
  cfg.out_dir = work / "c10" / "downstream";
  const auto started = std::chrono::steady_clock::now();
  const DownstreamResult r = train_downstream(cfg, [&](int update, long long steps) {
    if (update % 100 != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cout << fmt::format("    downstream: {} env steps ({:.0f} s)\n", steps, secs) << std::flush;
  });

  const Eigen::VectorXd params_after = load_prior_checkpoint(ck).prior.flat_parameters();
  const bool bitwise = params_after.size() == params_before.size() &&
                       std::memcmp(params_after.data(), params_before.data(),
                                   sizeof(double) * static_cast<std::size_t>(params_after.size())) == 0 &&
                       slurp(ck) == before;
  std::string per_cmd;
  for (const auto& c : r.final_eval.commands)
    per_cmd += fmt::format(" {:.1f}->{:.3f}", c.v_cmd, c.mean_vx);
  return {r.final_eval.mean_speed_error < 0.2 && r.prior_unchanged && bitwise,
          fmt::format("mean speed error {:.3f} m/s (cmd->vx:{}), prior unchanged {}", r.final_eval.mean_speed_error,
                      per_cmd, r.prior_unchanged && bitwise ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  std::string work_dir = "acceptance_work";
  app.add_option("--criterion", only, "run only this criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work-dir", work_dir, "directory for training runs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "reward formula oracles", reward_oracles},
      {2, "autoregressive KL against Monte-Carlo", ar_kl_oracle},
      {3, "network gradients against finite differences", gradient_checks},
      {4, "simulator flight recurrence and contact invariants", simulator_invariants},
      {5, "discriminator convergence on toy data", discriminator_convergence},
      {6, "single-clip hop imitation", single_clip_imitation},
      {7, "multi-clip reward ablation trend", multi_clip_ablation},
      {8, "style scheduler algebra", scheduler_algebra},
      {9, "end-to-end determinism", end_to_end_determinism},
      {10, "downstream command following over a frozen prior", downstream_smoke},
  };

  bool all = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const fs::path work = fs::absolute(work_dir);
    fs::create_directories(work);
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cout << fmt::format("[{}] criterion {}: {} ({}) [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                             o.detail, secs)
              << std::flush;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
