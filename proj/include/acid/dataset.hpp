// Copyright 2026 The ACID Authors
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

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace acid {

using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Generating structure of a synthetic dataset; Unknown for real data.
enum class DataModel : std::uint32_t {
  Unknown = 0,
  M1 = 1,  // shared-mechanism common cause (H0)
  M2 = 2,  // independent-mechanism common cause (H0)
  M3 = 3,  // mutual independence (H0)
  M4 = 4,  // direct X -> Y edge (H1)
  M5 = 5,  // collider in the conditioning set (H1)
  M6 = 6,  // hidden confounder (H1)
};

std::string to_string(DataModel model);
DataModel parse_data_model(const std::string& text);

/// One i.i.d. sample of (X, Y, Z) rows; the unit of inference.
/// label: 0 = conditionally independent (H0), 1 = dependent (H1).
struct Dataset {
  DataMatrix x, y, z;
  std::optional<int> label;
  std::uint64_t seed = 0;
  DataModel model = DataModel::Unknown;

  std::size_t n() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t dx() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t dy() const { return static_cast<std::size_t>(y.cols()); }
  std::size_t dz() const { return static_cast<std::size_t>(z.cols()); }

  /// Throws ContractError naming the broken invariant (row counts, empty
  /// blocks, label range) and NumericError on NaN/Inf entries.
  void validate() const;

  /// Same sample with rows taken in `rows` order (repeats allowed).
  Dataset take_rows(const std::vector<std::size_t>& rows) const;
};

/// Binary container: fixed header then row-major little-endian float64
/// payload for X, Y, Z in that order.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void write_dataset_binary(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_binary(const std::filesystem::path& path);

/// Column roles for CSV ingestion; entries are header names or 0-based indices.
struct ColumnMapping {
  std::vector<std::string> x, y, z;
  bool empty() const { return x.empty() && y.empty() && z.empty(); }
};

/// CSV with header x0..,y0..,z0..; metadata goes to `<path>.meta.json`.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);

/// Reads a CSV. Without a mapping the header must use the x*/y*/z* naming
/// written by write_dataset_csv. A sidecar `<path>.meta.json`, if present,
/// supplies label, seed and model.
Dataset read_dataset_csv(const std::filesystem::path& path,
                         const ColumnMapping& mapping = {});

/// Dispatches on extension: ".csv" reads CSV, anything else the binary format.
Dataset read_dataset(const std::filesystem::path& path, const ColumnMapping& mapping = {});

}  // namespace acid
