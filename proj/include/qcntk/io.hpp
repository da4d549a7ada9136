/* Copyright 2026 The qcntk Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

/// CSV helpers shared by the modules: full-precision numeric tables with an
/// optional '#'-prefixed metadata line of key=value tokens.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qcntk/errors.hpp"

namespace qcntk::io {

using Metadata = std::map<std::string, std::string>;

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline std::string metadata_line(const Metadata& meta) {
  std::string line = "#";
  for (const auto& [k, v] : meta) line += " " + k + "=" + v;
  return line;
}

inline Metadata parse_metadata_line(const std::string& line) {
  Metadata meta;
  std::istringstream is(line.substr(1));
  std::string token;
  while (is >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) meta[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return meta;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_double(const std::string& cell, long lineno) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::logic_error&) {
    throw ParseError("not a number: '" + cell + "'", lineno);
  }
  while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
  if (used != cell.size()) throw ParseError("not a number: '" + cell + "'", lineno);
  return v;
}

struct Table {
  Metadata meta;
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

inline void write_table(const std::filesystem::path& path, const Table& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  if (!t.meta.empty()) os << metadata_line(t.meta) << "\n";
  for (std::size_t j = 0; j < t.header.size(); ++j) os << (j ? "," : "") << t.header[j];
  if (!t.header.empty()) os << "\n";
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.values.cols(); ++j) os << (j ? "," : "") << format_double(t.values(i, j));
    os << "\n";
  }
}

/// Reads a numeric table; a leading '#' line becomes metadata and, when
/// `has_header`, the next line is the column header.
inline Table read_table(const std::filesystem::path& path, bool has_header) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  Table t;
  std::string line;
  long lineno = 0;
  std::vector<std::vector<double>> rows;
  bool header_pending = has_header;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (lineno == 1) t.meta = parse_metadata_line(line);
      continue;
    }
    if (header_pending) {
      t.header = split_csv_line(line);
      header_pending = false;
      continue;
    }
    const auto cells = split_csv_line(line);
    if (!rows.empty() && cells.size() != rows.front().size())
      throw ParseError("expected " + std::to_string(rows.front().size()) + " columns, found " +
                           std::to_string(cells.size()),
                       lineno);
    if (!t.header.empty() && cells.size() != t.header.size())
      throw ParseError("row width does not match header", lineno);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_double(c, lineno));
    rows.push_back(std::move(row));
  }
  const auto ncols = rows.empty() ? static_cast<Eigen::Index>(t.header.size()) : static_cast<Eigen::Index>(rows.front().size());
  t.values.resize(static_cast<Eigen::Index>(rows.size()), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return t;
}

inline std::vector<std::string> numbered(const std::string& prefix, Eigen::Index count, int first = 1) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < count; ++i) names.push_back(prefix + std::to_string(i + first));
  return names;
}

}  // namespace qcntk::io
