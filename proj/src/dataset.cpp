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

#include "acid/dataset.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "acid/binary_io.hpp"
#include "acid/errors.hpp"

namespace acid {

namespace {
constexpr std::array<char, 8> kDatasetMagic = {'A', 'C', 'I', 'D', 'D', 'A', 'T', 'A'};
}

std::string to_string(DataModel model) {
  if (model == DataModel::Unknown) return "unknown";
  return "M" + std::to_string(static_cast<std::uint32_t>(model));
}

DataModel parse_data_model(const std::string& text) {
  if (text == "unknown") return DataModel::Unknown;
  if (text.size() == 2 && (text[0] == 'M' || text[0] == 'm') && text[1] >= '1' && text[1] <= '6') {
    return static_cast<DataModel>(text[1] - '0');
  }
  throw ConfigError("unknown data model '" + text + "' (expected M1..M6)");
}

void Dataset::validate() const {
  if (x.rows() < 1) throw ContractError("dataset needs at least one row");
  if (y.rows() != x.rows() || z.rows() != x.rows()) {
    throw ContractError("dataset blocks disagree on row count: x=" + std::to_string(x.rows()) +
                        " y=" + std::to_string(y.rows()) + " z=" + std::to_string(z.rows()));
  }
  if (x.cols() < 1 || y.cols() < 1 || z.cols() < 1) {
    throw ContractError("dataset blocks need at least one column each");
  }
  if (label && *label != 0 && *label != 1) throw ContractError("label must be 0 or 1");
  if (!x.allFinite() || !y.allFinite() || !z.allFinite()) {
    throw NumericError("dataset (seed " + std::to_string(seed) + ") contains NaN/Inf entries");
  }
}

Dataset Dataset::take_rows(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.label = label;
  out.seed = seed;
  out.model = model;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()), y.cols());
  out.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto o = static_cast<Eigen::Index>(i);
    out.x.row(o) = x.row(r);
    out.y.row(o) = y.row(r);
    out.z.row(o) = z.row(r);
  }
  return out;
}

// ------------------------------------------------------------------ binary

void write_dataset_binary(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kDatasetMagic.data(), kDatasetMagic.size());
  io::write_le<std::uint32_t>(os, kDatasetFormatVersion);
  io::write_le<std::uint32_t>(os, ds.label ? 1u : 0u);
  io::write_le<std::uint64_t>(os, ds.n());
  io::write_le<std::uint64_t>(os, ds.dx());
  io::write_le<std::uint64_t>(os, ds.dy());
  io::write_le<std::uint64_t>(os, ds.dz());
  io::write_le<std::int32_t>(os, ds.label ? *ds.label : -1);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.model));
  io::write_le<std::uint64_t>(os, ds.seed);
  for (const DataMatrix* m : {&ds.x, &ds.y, &ds.z}) {
    io::write_le_array<double>(os, {m->data(), static_cast<std::size_t>(m->size())});
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

Dataset read_dataset_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kDatasetMagic) throw FormatError(path.string() + ": not an ACID dataset file");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kDatasetFormatVersion) {
    throw FormatError(path.string() + ": unsupported dataset format version " +
                      std::to_string(version));
  }
  const auto flags = io::read_le<std::uint32_t>(is);
  const auto n = io::read_le<std::uint64_t>(is);
  const auto dx = io::read_le<std::uint64_t>(is);
  const auto dy = io::read_le<std::uint64_t>(is);
  const auto dz = io::read_le<std::uint64_t>(is);
  const auto label = io::read_le<std::int32_t>(is);
  const auto model = io::read_le<std::uint32_t>(is);
  const auto seed = io::read_le<std::uint64_t>(is);
  if (!is || model > 6 || n > (1ull << 40) || dx > (1ull << 20) || dy > (1ull << 20) ||
      dz > (1ull << 20)) {
    throw FormatError(path.string() + ": corrupt dataset header");
  }
  Dataset ds;
  if (flags & 1u) ds.label = label;
  ds.model = static_cast<DataModel>(model);
  ds.seed = seed;
  const auto rows = static_cast<Eigen::Index>(n);
  ds.x.resize(rows, static_cast<Eigen::Index>(dx));
  ds.y.resize(rows, static_cast<Eigen::Index>(dy));
  ds.z.resize(rows, static_cast<Eigen::Index>(dz));
  for (DataMatrix* m : {&ds.x, &ds.y, &ds.z}) {
    io::read_le_array<double>(is, {m->data(), static_cast<std::size_t>(m->size())});
  }
  if (!is) throw FormatError(path.string() + ": truncated dataset payload");
  ds.validate();
  return ds;
}

// --------------------------------------------------------------------- csv

namespace {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') cell = cell.substr(1, cell.size() - 2);
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::filesystem::path& path, std::size_t line) {
  if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") return std::nan("");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line) + ": not a number: '" + cell + "'");
  }
  return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return path.string() + ".meta.json";
}

std::vector<std::size_t> resolve_columns(const std::vector<std::string>& wanted,
                                         const std::vector<std::string>& header,
                                         const std::filesystem::path& path) {
  std::vector<std::size_t> out;
  for (const auto& w : wanted) {
    auto it = std::find(header.begin(), header.end(), w);
    if (it != header.end()) {
      out.push_back(static_cast<std::size_t>(it - header.begin()));
      continue;
    }
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), idx);
    if (ec == std::errc() && ptr == w.data() + w.size() && idx < header.size()) {
      out.push_back(idx);
      continue;
    }
    throw ConfigError(path.string() + ": no column '" + w + "'");
  }
  return out;
}

}  // namespace

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  std::vector<std::string> header;
  for (std::size_t j = 0; j < ds.dx(); ++j) header.push_back("x" + std::to_string(j));
  for (std::size_t j = 0; j < ds.dy(); ++j) header.push_back("y" + std::to_string(j));
  for (std::size_t j = 0; j < ds.dz(); ++j) header.push_back("z" + std::to_string(j));
  for (std::size_t j = 0; j < header.size(); ++j) os << (j ? "," : "") << header[j];
  os << '\n';
  for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
    bool first = true;
    for (const DataMatrix* m : {&ds.x, &ds.y, &ds.z}) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) {
        os << (first ? "" : ",") << format_double((*m)(i, j));
        first = false;
      }
    }
    os << '\n';
  }
  nlohmann::json meta = {{"format_version", kDatasetFormatVersion},
                         {"n", ds.n()},
                         {"dX", ds.dx()},
                         {"dY", ds.dy()},
                         {"dZ", ds.dz()},
                         {"seed", ds.seed},
                         {"model_id", to_string(ds.model)}};
  meta["label"] = ds.label ? nlohmann::json(*ds.label) : nlohmann::json(nullptr);
  std::ofstream ms(sidecar_path(path), std::ios::trunc);
  ms << meta.dump(2) << '\n';
}

Dataset read_dataset_csv(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty CSV");
  const auto header = split_csv_line(line);

  ColumnMapping roles = mapping;
  if (roles.empty()) {
    for (const auto& h : header) {
      if (h.size() > 1 && h[0] == 'x') roles.x.push_back(h);
      else if (h.size() > 1 && h[0] == 'y') roles.y.push_back(h);
      else if (h.size() > 1 && h[0] == 'z') roles.z.push_back(h);
    }
    if (roles.x.empty() || roles.y.empty() || roles.z.empty()) {
      throw ConfigError(path.string() +
                        ": no column-role mapping given and header lacks x*/y*/z* columns");
    }
  } else if (roles.x.empty() || roles.y.empty() || roles.z.empty()) {
    throw ConfigError("column mapping needs at least one x, y and z column");
  }
  const auto cx = resolve_columns(roles.x, header, path);
  const auto cy = resolve_columns(roles.y, header, path);
  const auto cz = resolve_columns(roles.z, header, path);

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const bool used = std::find(cx.begin(), cx.end(), j) != cx.end() ||
                        std::find(cy.begin(), cy.end(), j) != cy.end() ||
                        std::find(cz.begin(), cz.end(), j) != cz.end();
      row[j] = used ? parse_cell(cells[j], path, line_no) : 0.0;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": CSV has no data rows");

  Dataset ds;
  auto fill = [&](DataMatrix& m, const std::vector<std::size_t>& cols) {
    m.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][cols[j]];
      }
    }
  };
  fill(ds.x, cx);
  fill(ds.y, cy);
  fill(ds.z, cz);

  const auto meta_path = sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream ms(meta_path);
    const auto meta = nlohmann::json::parse(ms, nullptr, false);
    if (meta.is_discarded()) throw FormatError(meta_path.string() + ": invalid JSON");
    if (meta.contains("label") && !meta["label"].is_null()) ds.label = meta["label"].get<int>();
    if (meta.contains("seed")) ds.seed = meta["seed"].get<std::uint64_t>();
    if (meta.contains("model_id")) ds.model = parse_data_model(meta["model_id"].get<std::string>());
  }
  ds.validate();
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path, const ColumnMapping& mapping) {
  if (path.extension() == ".csv") return read_dataset_csv(path, mapping);
  return read_dataset_binary(path);
}

}  // namespace acid
