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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mprior {

// Named tensors plus string metadata (configuration, RNG state), stored in a
// little-endian binary file:
//
//   "MPRIORCK" u32 version
//   u32 n_tensors  { u32 name_len, name, u64 count, f64[count] }*
//   u32 n_strings  { u32 name_len, name, u64 len, bytes }*
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Eigen::VectorXd& values);
  void put(const std::string& name, std::vector<double> values);
  void put_string(const std::string& name, std::string value);

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  bool has_string(const std::string& name) const { return strings_.count(name) != 0; }
  // Throws ValidationError if absent and CompatibilityError if the sized overload finds another length.
  Eigen::VectorXd get(const std::string& name) const;
  Eigen::VectorXd get(const std::string& name, Eigen::Index expected_size) const;
  const std::string& get_string(const std::string& name) const;

  const std::map<std::string, std::vector<double>>& tensors() const { return tensors_; }
  const std::map<std::string, std::string>& strings() const { return strings_; }

  // Writes to a temporary file and renames, so an interrupted save leaves the previous file intact.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::vector<double>> tensors_;
  std::map<std::string, std::string> strings_;
};

}  // namespace mprior
