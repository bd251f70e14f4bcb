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
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace mprior {

// Writes a CSV file that starts with a "# schema: <name> v<version>" comment
// line followed by the header row. Doubles are written with 10 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view schema, std::vector<std::string> columns,
            int version = 1);

  class Row {
   public:
    Row& operator<<(double v);
    Row& operator<<(long long v);
    Row& operator<<(int v) { return *this << static_cast<long long>(v); }
    Row& operator<<(std::string_view v);
    Row& operator<<(const char* v) { return *this << std::string_view(v); }

   private:
    friend class CsvWriter;
    std::vector<std::string> cells_;
  };

  Row row() const { return {}; }
  // Throws ShapeError if the cell count differs from the header.
  void write(const Row& row);
  void flush() { out_.flush(); }

  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::ofstream out_;
  std::vector<std::string> columns_;
};

std::string format_double(double v);

struct CsvTable {
  std::string schema;  // text after "# schema: ", empty if absent
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  // Throws SchemaError if the column is missing.
  int column(std::string_view name) const;
  double number(std::size_t row, std::string_view col) const;
};

// Reads a file written by CsvWriter (comment lines start with '#').
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mprior
