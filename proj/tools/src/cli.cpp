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

#include "mprior_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "mprior/config.hpp"
#include "mprior/csv.hpp"
#include "mprior/downstream.hpp"
#include "mprior/error.hpp"
#include "mprior/report.hpp"
#include "mprior/synthetic_clips.hpp"
#include "mprior/trainer.hpp"

namespace mprior::cli {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  long long seed = -1;
  std::string mode;
  bool single_thread = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonOptions& o, bool with_mode) {
  app->add_option("--config", o.config, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "random seed (overrides the config)");
  if (with_mode)
    app->add_option("--mode", o.mode, "reward mode")
        ->check(CLI::IsMember({"vim", "vim-no-sched", "motion-imitation", "gail"}));
  app->add_flag("--single-thread", o.single_thread, "fully serial execution");
  app->add_option("--set", o.sets, "override a config key, e.g. --set total_env_steps=1e5");
}

KeyValueConfig build_config(const CommonOptions& o) {
  KeyValueConfig kv = o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
  kv.apply_env_overrides("MPRIOR_");
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", s));
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t") + 1);
      return v;
    };
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (o.seed >= 0) kv.set("seed", std::to_string(o.seed));
  if (!o.mode.empty()) kv.set("mode", o.mode);
  if (o.single_thread) kv.set("single_thread", "true");
  return kv;
}

int cmd_gen_dataset(const std::string& out_dir, const std::string& robot_path, std::ostream& out) {
  const RobotGeometry g = robot_path.empty() ? RobotGeometry{} : load_robot(robot_path);
  fs::create_directories(out_dir);
  save_robot(g, fs::path(out_dir) / "robot.json");
  for (const auto& spec : default_dataset_menu()) {
    MotionClip c = generate_synthetic_clip(spec.kind, spec.params, g);
    c.name = spec.name;
    const fs::path p = fs::path(out_dir) / (spec.name + ".json");
    save_clip(c, p);
    fmt::print(out, "{}: {} frames, {:.2f} s\n", p.string(), c.frames.size(), c.duration());
  }
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::string& out_dir, long long steps, std::ostream& out) {
  KeyValueConfig kv = build_config(o);
  if (!out_dir.empty()) kv.set("out_dir", out_dir);
  if (steps > 0) kv.set("total_env_steps", std::to_string(steps));
  const TrainConfig cfg = train_config_from(kv);
  const RobotGeometry g = load_geometry(cfg);
  Trainer trainer(cfg, load_dataset(cfg, g), g);
  const auto t0 = std::chrono::steady_clock::now();
  trainer.train([&](int update, long long env_steps) {
    if (update % 10 == 0) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      fmt::print(out, "update {} env_steps {} ({:.0f} steps/s)\n", update, env_steps, env_steps / std::max(s, 1e-9));
      out.flush();
    }
  });
  fmt::print(out, "wrote {}\n", cfg.out_dir.string());
  return kExitOk;
}

int cmd_train_downstream(const CommonOptions& o, const std::string& prior, const std::string& task,
                         const std::string& out_dir, long long steps, bool random_prior, std::ostream& out) {
  KeyValueConfig kv = build_config(o);
  if (!prior.empty()) kv.set("downstream.prior_checkpoint", prior);
  if (!task.empty()) kv.set("downstream.task", task);
  if (!out_dir.empty()) kv.set("out_dir", out_dir);
  if (steps > 0) kv.set("downstream.total_env_steps", std::to_string(steps));
  if (random_prior) kv.set("downstream.random_prior", "true");
  const DownstreamConfig cfg = downstream_config_from(kv);
  const DownstreamResult r = train_downstream(cfg, [&](int update, long long env_steps) {
    if (update % 10 == 0) fmt::print(out, "update {} env_steps {}\n", update, env_steps);
  });
  fmt::print(out, "mean speed error {:.4f} m/s, jump success {:.3f}, prior unchanged: {}\n",
             r.final_eval.mean_speed_error, r.final_eval.jump_success_rate, r.prior_unchanged ? "yes" : "no");
  if (!r.prior_unchanged) throw Error("prior parameters changed during downstream training");
  return kExitOk;
}

// A trainer rebuilt from a checkpoint's own configuration.
Trainer restore_trainer(const std::string& checkpoint, const std::string& dataset_dir) {
  const LoadedPrior lp = load_prior_checkpoint(checkpoint);
  TrainConfig cfg = lp.config;
  if (!dataset_dir.empty()) cfg.dataset_dir = dataset_dir;
  cfg.clips = lp.clip_names;
  Trainer t(cfg, load_dataset(cfg, lp.geometry), lp.geometry);
  t.load_checkpoint(checkpoint);
  return t;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset_dir, const std::string& out_path,
             std::ostream& out) {
  const Trainer t = restore_trainer(checkpoint, dataset_dir);
  const EvalSummary s = t.evaluate();
  CsvWriter w(out_path, "eval_episodes",
              {"update", "env_steps", "mode", "seed", "clip", "start", "length", "reached_end", "return", "err_x",
               "err_z", "err_ori", "err_joint", "err_foot"});
  for (const auto& e : s.episodes) {
    auto row = w.row();
    row << t.updates() << t.env_steps() << to_string(t.config().mode) << static_cast<long long>(t.config().seed)
        << t.clips()[static_cast<std::size_t>(e.clip_id)].name << e.start << e.length << (e.reached_end ? 1 : 0)
        << e.ret << e.err.root_x << e.err.root_z << e.err.root_ori << e.err.joint << e.err.foot;
    w.write(row);
  }
  fmt::print(out, "episodes {} err_x {:.4f} err_z {:.4f} err_ori {:.4f} err_joint {:.4f} reached_end {:.3f}\n",
             s.episodes.size(), s.err_x, s.err_z, s.err_ori, s.err_joint, s.reached_end_frac);
  return kExitOk;
}

int cmd_export_latents(const std::string& checkpoint, const std::string& dataset_dir, const std::string& out_path,
                       std::ostream& out) {
  const LoadedPrior lp = load_prior_checkpoint(checkpoint);
  TrainConfig cfg = lp.config;
  if (!dataset_dir.empty()) cfg.dataset_dir = dataset_dir;
  cfg.clips = lp.clip_names;
  const auto clips = load_dataset(cfg, lp.geometry);
  std::vector<std::string> cols{"clip", "t"};
  for (int i = 0; i < cfg.prior.latent_dim; ++i) cols.push_back(fmt::format("mu{}", i));
  CsvWriter w(out_path, "latents", cols);
  std::size_t rows = 0;
  for (const auto& c : clips) {
    for (int t = 0; t <= c.last(); ++t) {
      const DiagGaussian d = lp.prior.encode_reference(segment_features(c, t));
      auto row = w.row();
      row << c.name << t;
      for (Eigen::Index i = 0; i < d.mean.size(); ++i) row << d.mean[i];
      w.write(row);
      ++rows;
    }
  }
  fmt::print(out, "wrote {} latent rows to {}\n", rows, out_path);
  return kExitOk;
}

int cmd_dump_traj(const std::string& checkpoint, const std::string& dataset_dir, const std::string& clip_name,
                  int start, int steps, const std::string& out_path, std::ostream& out) {
  const Trainer t = restore_trainer(checkpoint, dataset_dir);
  const auto& clips = t.clips();
  auto it = std::find_if(clips.begin(), clips.end(), [&](const MotionClip& c) { return c.name == clip_name; });
  if (it == clips.end()) throw ValidationError(fmt::format("checkpoint has no clip named '{}'", clip_name));
  const auto rows = t.rollout_trajectory(static_cast<int>(it - clips.begin()), start, steps);
  write_trajectory_csv(out_path, rows);
  fmt::print(out, "wrote {} rows to {}\n", rows.size(), out_path);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instructable motion prior for a planar legged robot"};
  app.name(args.empty() ? "mprior" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-dataset", "write the built-in synthetic clips and robot.json");
  std::string gen_out, gen_robot;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--robot", gen_robot, "robot geometry JSON (default geometry otherwise)")->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train a motion prior");
  CommonOptions train_opt;
  std::string train_out;
  long long train_steps = 0;
  add_common(train, train_opt, true);
  train->add_option("--out", train_out, "run directory");
  train->add_option("--steps", train_steps, "total environment steps");

  auto* down = app.add_subcommand("train-downstream", "train a high-level policy over a frozen prior");
  CommonOptions down_opt;
  std::string down_prior, down_task, down_out;
  long long down_steps = 0;
  bool down_random = false;
  add_common(down, down_opt, false);
  down->add_option("--prior", down_prior, "prior checkpoint")->check(CLI::ExistingFile);
  down->add_option("--task", down_task, "follow-command | jump-forward | combined");
  down->add_option("--out", down_out, "output directory");
  down->add_option("--steps", down_steps, "total high-level environment steps");
  down->add_flag("--random-prior", down_random, "ablation: untrained prior with the same architecture");

  auto* eval = app.add_subcommand("eval", "deterministic tracking evaluation of a checkpoint");
  std::string eval_ckpt, eval_data, eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset-dir", eval_data, "clip directory (default: as trained)");
  eval->add_option("--out", eval_out, "episode CSV")->required();

  auto* report = app.add_subcommand("report", "aggregate run directories into tables and plots");
  std::vector<std::string> report_runs;
  std::string report_out;
  report->add_option("--runs", report_runs, "run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "output directory")->required();

  auto* latents = app.add_subcommand("export-latents", "latent means for every clip frame");
  std::string lat_ckpt, lat_data, lat_out;
  latents->add_option("--checkpoint", lat_ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  latents->add_option("--dataset-dir", lat_data, "clip directory (default: as trained)");
  latents->add_option("--out", lat_out, "CSV path")->required();

  auto* dump = app.add_subcommand("dump-traj", "per-step trajectory CSV of one deterministic episode");
  std::string dump_ckpt, dump_data, dump_clip, dump_out;
  int dump_start = 0, dump_steps = 0;
  dump->add_option("--checkpoint", dump_ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
  dump->add_option("--dataset-dir", dump_data, "clip directory (default: as trained)");
  dump->add_option("--clip", dump_clip, "clip name")->required();
  dump->add_option("--start", dump_start, "start frame");
  dump->add_option("--steps", dump_steps, "maximum steps (0: until the clip ends)");
  dump->add_option("--out", dump_out, "CSV path")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_dataset(gen_out, gen_robot, out);
    if (train->parsed()) return cmd_train(train_opt, train_out, train_steps, out);
    if (down->parsed())
      return cmd_train_downstream(down_opt, down_prior, down_task, down_out, down_steps, down_random, out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, out);
    if (report->parsed()) {
      std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
      write_report(dirs, report_out);
      fmt::print(out, "wrote report for {} runs to {}\n", dirs.size(), report_out);
      return kExitOk;
    }
    if (latents->parsed()) return cmd_export_latents(lat_ckpt, lat_data, lat_out, out);
    if (dump->parsed()) return cmd_dump_traj(dump_ckpt, dump_data, dump_clip, dump_start, dump_steps, dump_out, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace mprior::cli
