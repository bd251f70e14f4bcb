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

#include "mprior/motion_clip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "mprior/error.hpp"

namespace mprior {

std::string_view to_string(ClipSource source) {
  switch (source) {
    case ClipSource::kMocapLike:
      return "mocap_like";
    case ClipSource::kSynthetic:
      return "synthetic";
    case ClipSource::kOptimized:
      return "optimized";
  }
  return "synthetic";
}

ClipSource clip_source_from_string(std::string_view s) {
  if (s == "mocap_like") return ClipSource::kMocapLike;
  if (s == "synthetic") return ClipSource::kSynthetic;
  if (s == "optimized") return ClipSource::kOptimized;
  throw ValidationError(fmt::format("unknown clip source '{}'", s));
}

void MotionClip::validate(const RobotGeometry& g) const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError(fmt::format("clip '{}': dt must be > 0", name));
  if (frames.size() < static_cast<std::size_t>(kMinClipFrames))
    throw ValidationError(fmt::format("clip '{}': {} frames, need at least {}", name, frames.size(), kMinClipFrames));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const RefPose& p = frames[i];
    bool finite = std::isfinite(p.root_x) && std::isfinite(p.root_z) && std::isfinite(p.pitch);
    for (double q : p.joints) finite = finite && std::isfinite(q);
    if (!finite) throw ValidationError(fmt::format("clip '{}': frame {} has a non-finite value", name, i));
    if (!g.within_limits(p.joints, 1e-9))
      throw ValidationError(fmt::format("clip '{}': frame {} violates joint limits", name, i));
    if (i > 0) {
      const RefPose& prev = frames[i - 1];
      if (std::hypot(p.root_x - prev.root_x, p.root_z - prev.root_z) >= kMaxFrameDisplacement)
        throw ValidationError(fmt::format("clip '{}': frame {} jumps more than {} m", name, i, kMaxFrameDisplacement));
    }
  }
}

namespace {

int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

}  // namespace

MotionClip parse_clip(std::string_view text, const RobotGeometry& g, std::string_view origin) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(fmt::format("{}:{}: {}", origin, line_of_offset(text, e.byte), e.what()));
  }
  MotionClip clip;
  try {
    clip.name = j.at("name").get<std::string>();
    clip.source = clip_source_from_string(j.at("source").get<std::string>());
    clip.dt = j.at("dt").get<double>();
    const auto& frames = j.at("frames");
    if (!frames.is_array()) throw SchemaError(fmt::format("{}: 'frames' must be an array", origin));
    clip.frames.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& row = frames[i];
      // 7 pose columns, optionally followed by 4 stored foot coordinates that are ignored.
      if (!row.is_array() || (row.size() != 7 && row.size() != 11))
        throw SchemaError(fmt::format("{}: frame {} must hold 7 (or 11) numbers", origin, i));
      RefPose p;
      p.root_x = row[0].get<double>();
      p.root_z = row[1].get<double>();
      p.pitch = row[2].get<double>();
      for (int k = 0; k < kNumJoints; ++k) p.joints[k] = row[3 + k].get<double>();
      clip.frames.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(fmt::format("{}: {}", origin, e.what()));
  }
  clip.validate(g);
  for (auto& p : clip.frames) p.update_feet(g);
  return clip;
}

MotionClip load_clip(const std::filesystem::path& path, const RobotGeometry& g) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open clip file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_clip(ss.str(), g, path.string());
}

std::string clip_to_json(const MotionClip& clip) {
  nlohmann::json j;
  j["name"] = clip.name;
  j["source"] = std::string(to_string(clip.source));
  j["dt"] = clip.dt;
  j["frames"] = nlohmann::json::array();
  for (const auto& p : clip.frames) {
    j["frames"].push_back({p.root_x, p.root_z, p.pitch, p.joints[0], p.joints[1], p.joints[2], p.joints[3]});
  }
  return j.dump();
}

void save_clip(const MotionClip& clip, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write clip file " + path.string());
  out << clip_to_json(clip) << '\n';
}

MotionSegment extract_segment(const MotionClip& clip, int t, int clip_id) {
  const int last = clip.last();
  if (t < 0 || t > last) throw IndexError(fmt::format("segment index {} outside [0, {}]", t, last));
  MotionSegment seg;
  seg.clip_id = clip_id;
  seg.t = t;
  for (std::size_t k = 0; k < kSegmentOffsets.size(); ++k) {
    seg.frame_index[k] = std::min(t + kSegmentOffsets[k], last);
    seg.frames[k] = clip.frames[static_cast<std::size_t>(seg.frame_index[k])];
  }
  return seg;
}

MotionClip resample_clip(const MotionClip& clip, double target_dt, const RobotGeometry& g) {
  if (!(target_dt > 0.0)) throw ValidationError("resample_clip: target_dt must be > 0");
  MotionClip out;
  out.name = clip.name;
  out.source = clip.source;
  out.dt = target_dt;
  if (target_dt == clip.dt) {
    out.frames = clip.frames;
    for (auto& p : out.frames) p.update_feet(g);
    return out;
  }
  const double duration = clip.duration();
  const int n = static_cast<int>(std::lround(duration / target_dt));
  out.frames.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) {
    const double time = std::min(k * target_dt, duration);
    const double u = time / clip.dt;
    int i = std::clamp(static_cast<int>(std::floor(u)), 0, clip.last());
    double frac = u - i;
    if (i == clip.last()) frac = 0.0;
    const RefPose& a = clip.frames[static_cast<std::size_t>(i)];
    RefPose p = a;
    if (frac > 0.0) {
      const RefPose& b = clip.frames[static_cast<std::size_t>(i) + 1];
      p.root_x = a.root_x + frac * (b.root_x - a.root_x);
      p.root_z = a.root_z + frac * (b.root_z - a.root_z);
      p.pitch = a.pitch + frac * wrap_angle(b.pitch - a.pitch);
      for (int j = 0; j < kNumJoints; ++j) p.joints[j] = a.joints[j] + frac * (b.joints[j] - a.joints[j]);
    }
    p.update_feet(g);
    out.frames.push_back(p);
  }
  return out;
}

RefVelocity reference_velocity(const MotionClip& clip, int i) {
  const int last = clip.last();
  if (i < 0 || i > last) throw IndexError(fmt::format("reference_velocity: frame {} outside [0, {}]", i, last));
  const int a = i < last ? i : i - 1;
  const RefPose& p0 = clip.frames[static_cast<std::size_t>(a)];
  const RefPose& p1 = clip.frames[static_cast<std::size_t>(a) + 1];
  RefVelocity v;
  v.vx = (p1.root_x - p0.root_x) / clip.dt;
  v.vz = (p1.root_z - p0.root_z) / clip.dt;
  v.pitch_rate = wrap_angle(p1.pitch - p0.pitch) / clip.dt;
  for (int j = 0; j < kNumJoints; ++j) v.joint_vels[j] = (p1.joints[j] - p0.joints[j]) / clip.dt;
  return v;
}

}  // namespace mprior
