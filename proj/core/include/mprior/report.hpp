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

#include <filesystem>
#include <string>
#include <vector>

namespace mprior {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std; 0 for a single sample
  int n = 0;
};

MeanStd mean_std(const std::vector<double>& v);

// One row per (mode, seed, clip), aggregated over the final evaluation's episodes.
struct MetricsRow {
  std::string mode;
  long long seed = 0;
  std::string clip;
  MeanStd err_x, err_z, err_ori, err_joint, err_foot, ret, length, reached_end;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
};

// Reads eval_episodes.csv of each run directory and keeps the last evaluation.
MetricsTable build_metrics_table(const std::vector<std::filesystem::path>& run_dirs);
void write_metrics_table(const MetricsTable& table, const std::filesystem::path& path);

// Per mode: metric mean +- std across seeds of the per-seed means (all clips pooled).
void write_mode_summary(const MetricsTable& table, const std::filesystem::path& path);

struct Curve {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;
};

// Learning curves of one metrics.csv column, grouped by mode: mean and std across
// seeds at each update index (rows with NaN are skipped).
std::vector<Curve> learning_curves(const std::vector<std::filesystem::path>& run_dirs, const std::string& column);

// Line plot with shaded +-std bands.
std::string render_svg(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                       const std::string& y_label);

// MetricsTable CSV, mode summary CSV and SVG curves for a fixed set of columns.
// Output is a pure function of the run directories.
void write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace mprior
