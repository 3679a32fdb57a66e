// Copyright 2026 The dmfvi Authors
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

#include "dmfvi/io.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <string_view>
#include <vector>

#include "dmfvi/errors.hpp"

namespace dmfvi {

namespace {

using Rows = std::vector<std::vector<std::optional<double>>>;

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

Rows read_fields(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Rows rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    std::vector<std::optional<double>> row;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view field = trim(rest.substr(0, comma));
      if (field.empty()) {
        row.emplace_back();
      } else {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || ptr != field.data() + field.size()) {
          throw IoError(where(path, number) + ": cannot parse '" + std::string(field) + "'");
        }
        row.emplace_back(v);
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError(where(path, number) + ": expected " + std::to_string(rows.front().size()) +
                    " fields, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  if (rows.empty()) throw IoError(path.string() + ": no data rows");
  return rows;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  const Rows rows = read_fields(path);
  Eigen::MatrixXd out(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (!rows[r][c]) {
        throw IoError(where(path, r + 1) + ": empty field in column " + std::to_string(c + 1));
      }
      out(r, c) = *rows[r][c];
    }
  }
  return out;
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values) {
  auto out = open_for_write(path);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << format_double(values(r, c));
    }
    out << '\n';
  }
  finish(out, path);
}

ObservationMask::Grid read_mask_csv(const std::filesystem::path& path) {
  const Eigen::MatrixXd raw = read_matrix_csv(path);
  ObservationMask::Grid grid(raw.rows(), raw.cols());
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
      if (raw(r, c) != 0.0 && raw(r, c) != 1.0) {
        throw IoError(where(path, static_cast<std::size_t>(r) + 1) + ": mask entries must be 0 or 1");
      }
      grid(r, c) = raw(r, c) != 0.0 ? 1 : 0;
    }
  }
  return grid;
}

void write_mask_csv(const std::filesystem::path& path, const ObservationMask::Grid& mask) {
  auto out = open_for_write(path);
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      if (c) out << ',';
      out << (mask(r, c) ? '1' : '0');
    }
    out << '\n';
  }
  finish(out, path);
}

PointTracks read_point_tracks(const std::filesystem::path& path) {
  const Rows rows = read_fields(path);
  const std::size_t cols = rows.front().size();
  if (cols % 2 != 0) {
    throw IoError(path.string() + ": point tracks need an even number of columns (x/y per frame)");
  }
  PointTracks out;
  out.values = Eigen::MatrixXd::Zero(rows.size(), cols);
  out.mask = ObservationMask::Grid::Zero(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!rows[r][c]) continue;
      out.values(r, c) = *rows[r][c];
      out.mask(r, c) = 1;
    }
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const ConvergenceTrace& trace) {
  auto out = open_for_write(path);
  out << "iteration,objective,primal_residual,max_edge_gap,wall_ms\n";
  for (const auto& row : trace.rows) {
    out << row.iteration << ',' << format_double(row.objective) << ','
        << format_double(row.primal_residual) << ',' << format_double(row.max_edge_gap) << ','
        << format_double(row.wall_ms) << '\n';
  }
  finish(out, path);
}

}  // namespace dmfvi
