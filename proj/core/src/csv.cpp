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

#include "mprior/csv.hpp"

#include <charconv>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "mprior/error.hpp"

namespace mprior {

namespace {

std::string escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

}  // namespace

std::string format_double(double v) { return fmt::format("{:.10g}", v); }

CsvWriter::CsvWriter(const std::filesystem::path& path, std::string_view schema, std::vector<std::string> columns,
                     int version)
    : columns_(std::move(columns)) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out_ << "# schema: " << schema << " v" << version << '\n';
  for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << escape(columns_[i]);
  out_ << '\n';
}

CsvWriter::Row& CsvWriter::Row::operator<<(double v) {
  cells_.push_back(format_double(v));
  return *this;
}

CsvWriter::Row& CsvWriter::Row::operator<<(long long v) {
  cells_.push_back(std::to_string(v));
  return *this;
}

CsvWriter::Row& CsvWriter::Row::operator<<(std::string_view v) {
  cells_.push_back(escape(v));
  return *this;
}

void CsvWriter::write(const Row& row) {
  if (row.cells_.size() != columns_.size())
    throw ShapeError(fmt::format("CSV row has {} cells, header has {}", row.cells_.size(), columns_.size()));
  for (std::size_t i = 0; i < row.cells_.size(); ++i) out_ << (i ? "," : "") << row.cells_[i];
  out_ << '\n';
  if (!out_) throw IoError("CSV write failed");
}

int CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw SchemaError(fmt::format("CSV has no column '{}'", name));
}

double CsvTable::number(std::size_t row, std::string_view col) const {
  const std::string& cell = rows.at(row).at(static_cast<std::size_t>(column(col)));
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (cell == "inf") return std::numeric_limits<double>::infinity();
    if (cell == "-inf") return -std::numeric_limits<double>::infinity();
    throw SchemaError(fmt::format("CSV cell '{}' in column '{}' is not a number", cell, col));
  }
  return v;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  CsvTable t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      constexpr std::string_view kTag = "# schema: ";
      if (line.starts_with(kTag)) t.schema = line.substr(kTag.size());
      continue;
    }
    auto cells = split_line(line);
    if (!header) {
      t.columns = std::move(cells);
      header = true;
    } else {
      if (cells.size() != t.columns.size())
        throw SchemaError(fmt::format("{}: row {} has {} cells, expected {}", path.string(), t.rows.size() + 1,
                                      cells.size(), t.columns.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (!header) throw SchemaError(fmt::format("{}: missing header row", path.string()));
  return t;
}

}  // namespace mprior
