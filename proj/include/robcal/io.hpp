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

#pragma once

#include "robcal/common.hpp"
#include "robcal/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace robcal {

/// A numeric table with optional column names.
struct Table {
  std::vector<std::string> header;
  Matrix values;
};

/// Reads a comma-separated numeric table. The first line is taken as a header when any of its
/// fields is not a number. Quoted fields (RFC 4180) are accepted. Errors carry file and line.
Table read_csv(const std::filesystem::path& path);

/// Writes with 17 significant digits so that read_csv reproduces every value exactly.
void write_csv(const std::filesystem::path& path, const Matrix& values, const std::vector<std::string>& header = {});

/// 17 significant digits, general notation.
std::string format_double(double value);

/// Observations for n inputs. Two layouts are accepted:
///   wide: n rows, one column per replicate;
///   long: header "input_id,value", ids 1..n in any order (ragged replicates).
Observations read_observations(const std::filesystem::path& path, int n);
void write_observations_wide(const std::filesystem::path& path, const Observations& observations);
void write_observations_long(const std::filesystem::path& path, const Observations& observations);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace robcal
