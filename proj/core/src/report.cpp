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

#include "mprior/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "mprior/config.hpp"
#include "mprior/csv.hpp"
#include "mprior/error.hpp"

namespace mprior {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = static_cast<int>(v.size());
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= m.n;
  for (double x : v) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / m.n);
  return m;
}

namespace {

struct RunInfo {
  std::string mode;
  long long seed = 0;
};

RunInfo read_run_info(const std::filesystem::path& dir) {
  const KeyValueConfig kv = KeyValueConfig::load(dir / "config.cfg");
  return {kv.get_string("mode", "?"), kv.get_int("seed", 0)};
}

std::vector<std::filesystem::path> sorted(std::vector<std::filesystem::path> dirs) {
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace

MetricsTable build_metrics_table(const std::vector<std::filesystem::path>& run_dirs) {
  MetricsTable table;
  for (const auto& dir : sorted(run_dirs)) {
    const RunInfo info = read_run_info(dir);
    const CsvTable t = read_csv(dir / "eval_episodes.csv");
    double last_update = -1.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) last_update = std::max(last_update, t.number(r, "update"));
    const int clip_col = t.column("clip");
    std::map<std::string, std::vector<std::size_t>> by_clip;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      if (t.number(r, "update") == last_update) by_clip[t.rows[r][static_cast<std::size_t>(clip_col)]].push_back(r);
    for (const auto& [clip, rows] : by_clip) {
      auto col = [&](std::string_view name) {
        std::vector<double> v;
        for (auto r : rows) v.push_back(t.number(r, name));
        return mean_std(v);
      };
      MetricsRow m;
      m.mode = info.mode;
      m.seed = info.seed;
      m.clip = clip;
      m.err_x = col("err_x");
      m.err_z = col("err_z");
      m.err_ori = col("err_ori");
      m.err_joint = col("err_joint");
      m.err_foot = col("err_foot");
      m.ret = col("return");
      m.length = col("length");
      m.reached_end = col("reached_end");
      table.rows.push_back(m);
    }
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.mode, a.seed, a.clip) < std::tie(b.mode, b.seed, b.clip);
  });
  return table;
}

void write_metrics_table(const MetricsTable& table, const std::filesystem::path& path) {
  std::vector<std::string> cols{"mode", "seed", "clip", "episodes"};
  for (const char* m : {"err_x", "err_z", "err_ori", "err_joint", "err_foot", "return", "length", "reached_end"}) {
    cols.push_back(std::string(m) + "_mean");
    cols.push_back(std::string(m) + "_std");
  }
  CsvWriter w(path, "metrics_table", cols);
  for (const auto& r : table.rows) {
    auto row = w.row();
    row << r.mode << r.seed << r.clip << r.err_x.n;
    for (const MeanStd* m : {&r.err_x, &r.err_z, &r.err_ori, &r.err_joint, &r.err_foot, &r.ret, &r.length, &r.reached_end})
      row << m->mean << m->std;
    w.write(row);
  }
}

void write_mode_summary(const MetricsTable& table, const std::filesystem::path& path) {
  // mode -> seed -> per-metric list over clips
  std::map<std::string, std::map<long long, std::vector<const MetricsRow*>>> groups;
  for (const auto& r : table.rows) groups[r.mode][r.seed].push_back(&r);
  std::vector<std::string> cols{"mode", "seeds"};
  const std::vector<std::pair<std::string, MeanStd MetricsRow::*>> metrics{
      {"err_x", &MetricsRow::err_x},         {"err_z", &MetricsRow::err_z},   {"err_ori", &MetricsRow::err_ori},
      {"err_joint", &MetricsRow::err_joint}, {"err_foot", &MetricsRow::err_foot}, {"return", &MetricsRow::ret},
      {"length", &MetricsRow::length},       {"reached_end", &MetricsRow::reached_end}};
  for (const auto& [name, _] : metrics) {
    cols.push_back(name + "_mean");
    cols.push_back(name + "_std");
  }
  CsvWriter w(path, "mode_summary", cols);
  for (const auto& [mode, seeds] : groups) {
    auto row = w.row();
    row << mode << static_cast<int>(seeds.size());
    for (const auto& [name, member] : metrics) {
      std::vector<double> per_seed;
      for (const auto& [seed, rows] : seeds) {
        double s = 0.0;
        for (const auto* r : rows) s += (r->*member).mean;
        per_seed.push_back(s / static_cast<double>(rows.size()));
      }
      const MeanStd m = mean_std(per_seed);
      row << m.mean << m.std;
    }
    w.write(row);
  }
}

std::vector<Curve> learning_curves(const std::vector<std::filesystem::path>& run_dirs, const std::string& column) {
  // mode -> x -> values across seeds
  std::map<std::string, std::map<double, std::vector<double>>> data;
  for (const auto& dir : sorted(run_dirs)) {
    const RunInfo info = read_run_info(dir);
    const CsvTable t = read_csv(dir / "metrics.csv");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const double y = t.number(r, column);
      if (!std::isfinite(y)) continue;
      data[info.mode][t.number(r, "env_steps")].push_back(y);
    }
  }
  std::vector<Curve> out;
  for (const auto& [mode, pts] : data) {
    Curve c;
    c.label = mode;
    for (const auto& [x, ys] : pts) {
      const MeanStd m = mean_std(ys);
      c.x.push_back(x);
      c.mean.push_back(m.mean);
      c.std.push_back(m.std);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string render_svg(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, Bm = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      if (!any) {
        x0 = x1 = c.x[i];
        y0 = c.mean[i] - c.std[i];
        y1 = c.mean[i] + c.std[i];
        any = true;
      }
      x0 = std::min(x0, c.x[i]);
      x1 = std::max(x1, c.x[i]);
      y0 = std::min(y0, c.mean[i] - c.std[i]);
      y1 = std::max(y1, c.mean[i] + c.std[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - Bm - (y - y0) / (y1 - y0) * (H - T - Bm); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
      W, H, (W - R + L) / 2, title);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, H - Bm, W - R, H - Bm);
  s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", L, T, L, H - Bm);
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv), H - Bm + 16, xv);
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 6, py(yv) + 4, yv);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (W - R + L) / 2, H - 12, x_label);
  s += fmt::format("<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
                   (H - Bm + T) / 2, (H - Bm + T) / 2, y_label);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const Curve& c = curves[k];
    const char* color = kColors[k % std::size(kColors)];
    if (c.x.empty()) continue;
    std::string band, line;
    for (std::size_t i = 0; i < c.x.size(); ++i) band += fmt::format("{:.2f},{:.2f} ", px(c.x[i]), py(c.mean[i] + c.std[i]));
    for (std::size_t i = c.x.size(); i-- > 0;) band += fmt::format("{:.2f},{:.2f} ", px(c.x[i]), py(c.mean[i] - c.std[i]));
    for (std::size_t i = 0; i < c.x.size(); ++i) line += fmt::format("{:.2f},{:.2f} ", px(c.x[i]), py(c.mean[i]));
    s += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", band, color);
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", line, color);
    const double ly = T + 16 * static_cast<double>(k);
    s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"3\"/>\n", W - R + 10, ly,
                     W - R + 30, ly, color);
    s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", W - R + 36, ly + 4, c.label);
  }
  s += "</svg>\n";
  return s;
}

void write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir) {
  if (run_dirs.empty()) throw ValidationError("report needs at least one run directory");
  std::filesystem::create_directories(out_dir);
  const MetricsTable table = build_metrics_table(run_dirs);
  write_metrics_table(table, out_dir / "metrics_table.csv");
  write_mode_summary(table, out_dir / "mode_summary.csv");
  const std::vector<std::pair<std::string, std::string>> plots{
      {"mean_episode_return", "Episode return"},   {"mean_episode_length", "Episode length"},
      {"eval_err_x", "Eval root x error [m]"},      {"eval_err_z", "Eval root height error [m]"},
      {"eval_err_joint", "Eval joint error [rad^2/joint]"}, {"mean_adv", "Mean adversarial reward"}};
  for (const auto& [col, label] : plots) {
    const auto curves = learning_curves(run_dirs, col);
    std::ofstream f(out_dir / ("curve_" + col + ".svg"), std::ios::binary | std::ios::trunc);
    f << render_svg(curves, label, "environment steps", label);
    if (!f) throw IoError(fmt::format("cannot write plot for {}", col));
  }
}

}  // namespace mprior
