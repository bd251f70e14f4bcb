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

#include "mprior/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {
namespace {

constexpr char kMagic[8] = {'M', 'P', 'R', 'I', 'O', 'R', 'C', 'K'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw SchemaError("truncated checkpoint " + path.string());
  return v;
}

std::string read_bytes(std::ifstream& in, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ull << 32)) throw SchemaError("implausible field length in checkpoint " + path.string());
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw SchemaError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Eigen::VectorXd& values) {
  tensors_[name] = std::vector<double>(values.data(), values.data() + values.size());
}

void Checkpoint::put(const std::string& name, std::vector<double> values) { tensors_[name] = std::move(values); }

void Checkpoint::put_string(const std::string& name, std::string value) { strings_[name] = std::move(value); }

Eigen::VectorXd Checkpoint::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError(fmt::format("checkpoint has no tensor '{}'", name));
  return Eigen::Map<const Eigen::VectorXd>(it->second.data(), static_cast<Eigen::Index>(it->second.size()));
}

Eigen::VectorXd Checkpoint::get(const std::string& name, Eigen::Index expected_size) const {
  Eigen::VectorXd v = get(name);
  if (v.size() != expected_size)
    throw CompatibilityError(
        fmt::format("checkpoint tensor '{}' has {} values, expected {}", name, v.size(), expected_size));
  return v;
}

const std::string& Checkpoint::get_string(const std::string& name) const {
  auto it = strings_.find(name);
  if (it == strings_.end()) throw ValidationError(fmt::format("checkpoint has no entry '{}'", name));
  return it->second;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, values] : tensors_) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint64_t>(out, values.size());
      out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(strings_.size()));
    for (const auto& [name, value] : strings_) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint64_t>(out, value.size());
      out.write(value.data(), static_cast<std::streamsize>(value.size()));
    }
    if (!out) throw IoError("failed while writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw SchemaError(path.string() + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw CompatibilityError(fmt::format("{}: checkpoint version {} unsupported (expected {})", path.string(), version,
                                         kVersion));
  Checkpoint ck;
  const auto n_tensors = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = read_bytes(in, read_pod<std::uint32_t>(in, path), path);
    const auto count = read_pod<std::uint64_t>(in, path);
    std::string raw = read_bytes(in, count * sizeof(double), path);
    std::vector<double> values(count);
    std::memcpy(values.data(), raw.data(), raw.size());
    ck.tensors_[std::move(name)] = std::move(values);
  }
  const auto n_strings = read_pod<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_strings; ++i) {
    std::string name = read_bytes(in, read_pod<std::uint32_t>(in, path), path);
    ck.strings_[std::move(name)] = read_bytes(in, read_pod<std::uint64_t>(in, path), path);
  }
  return ck;
}

}  // namespace mprior
