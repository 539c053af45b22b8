/*
 * Copyright 2026 The robcal Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "robcal/io.hpp"

#include <charconv>
#include <fstream>
#include <cmath>
#include <sstream>

namespace robcal {

namespace {

std::string where(const std::filesystem::path& path, int line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> split_record(const std::string& line, const std::filesystem::path& path, int line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw IoError(where(path, line_no) + "unterminated quoted field");
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size();
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw IoError(path.string() + ": write failed");
}

Table read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  Table table;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const std::vector<std::string> fields = split_record(line, path, line_no);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t j = 0; j < fields.size(); ++j) numeric = numeric && parse_double(fields[j], row[j]);
    if (!numeric) {
      if (rows.empty() && table.header.empty()) {
        for (const std::string& f : fields) table.header.push_back(trim(f));
        width = fields.size();
        continue;
      }
      throw IoError(where(path, line_no) + "non-numeric field");
    }
    if (width == 0) width = row.size();
    if (row.size() != width)
      throw IoError(where(path, line_no) + "expected " + std::to_string(width) + " fields, found " +
                    std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path.string() + ": no data rows");
  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j)
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return table;
}

void write_csv(const std::filesystem::path& path, const Matrix& values, const std::vector<std::string>& header) {
  require(header.empty() || static_cast<Eigen::Index>(header.size()) == values.cols(),
          "CSV header width does not match the column count");
  std::string text;
  for (std::size_t j = 0; j < header.size(); ++j) text += (j ? "," : "") + quote(header[j]);
  if (!header.empty()) text += '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) text += (j ? "," : "") + format_double(values(i, j));
    text += '\n';
  }
  write_text(path, text);
}

Observations read_observations(const std::filesystem::path& path, int n) {
  const Table t = read_csv(path);
  const bool long_format = t.header.size() == 2 && t.header[0] == "input_id" && t.header[1] == "value";
  if (!long_format) {
    if (t.values.rows() != n)
      throw IoError(path.string() + ": expected " + std::to_string(n) + " observation rows, found " +
                    std::to_string(t.values.rows()));
    return Observations::from_matrix(t.values);
  }
  std::vector<Vector> reps(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> values(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    const double id = t.values(i, 0);
    if (id != std::floor(id) || id < 1 || id > n)
      throw IoError(path.string() + ": input_id " + format_double(id) + " outside 1.." + std::to_string(n));
    values[static_cast<std::size_t>(id) - 1].push_back(t.values(i, 1));
  }
  for (int i = 0; i < n; ++i) {
    const auto& v = values[static_cast<std::size_t>(i)];
    if (v.empty()) throw IoError(path.string() + ": no observation for input_id " + std::to_string(i + 1));
    reps[static_cast<std::size_t>(i)] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return Observations::from_ragged(std::move(reps));
}

void write_observations_wide(const std::filesystem::path& path, const Observations& observations) {
  const int n = observations.size();
  require(n > 0, "no observations to write");
  const Eigen::Index k = observations.replicates.front().size();
  for (const Vector& r : observations.replicates)
    require(r.size() == k, "wide observation layout needs the same replicate count at every input");
  Matrix m(n, k);
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < k; ++j) header.push_back("y" + std::to_string(j + 1));
  for (int i = 0; i < n; ++i) m.row(i) = observations.replicates[static_cast<std::size_t>(i)].transpose();
  write_csv(path, m, header);
}

void write_observations_long(const std::filesystem::path& path, const Observations& observations) {
  Matrix m(observations.total(), 2);
  Eigen::Index row = 0;
  for (int i = 0; i < observations.size(); ++i)
    for (double v : observations.replicates[static_cast<std::size_t>(i)]) {
      m(row, 0) = i + 1;
      m(row, 1) = v;
      ++row;
    }
  write_csv(path, m, {"input_id", "value"});
}

}  // namespace robcal
