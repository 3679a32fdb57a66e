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

#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "dmfvi/bpca.hpp"
#include "dmfvi/trace.hpp"

namespace dmfvi {

// Dense comma-separated matrix, one row per line. Every field must parse.
Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values);

// 0/1 fields with the same layout as the data file.
ObservationMask::Grid read_mask_csv(const std::filesystem::path& path);
void write_mask_csv(const std::filesystem::path& path, const ObservationMask::Grid& mask);

struct PointTracks {
  Eigen::MatrixXd values;      // points x 2F, missing entries set to 0
  ObservationMask::Grid mask;  // 1 where a field was present
};

// Rows are points, columns are x/y pairs per frame; empty fields are missing.
PointTracks read_point_tracks(const std::filesystem::path& path);

// Columns: iteration,objective,primal_residual,max_edge_gap,wall_ms
void write_trace_csv(const std::filesystem::path& path, const ConvergenceTrace& trace);

// Shortest text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace dmfvi
