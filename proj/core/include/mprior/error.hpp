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

#include <stdexcept>
#include <string>

namespace mprior {

// Base class for every error raised by the library. The CLI maps
// ValidationError and ConfigError to exit code 1, everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented invariant or range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file could not be parsed against its schema.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a tape whose network has since changed.
class UsageError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// The simulator produced a non-finite quantity.
class SimulationDiverged : public Error {
 public:
  SimulationDiverged(std::string quantity, double value)
      : Error("simulation diverged: " + quantity + " = " + std::to_string(value)),
        quantity_(std::move(quantity)) {}

  const std::string& quantity() const { return quantity_; }

 private:
  std::string quantity_;
};

}  // namespace mprior
