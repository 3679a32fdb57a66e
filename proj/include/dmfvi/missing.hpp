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

#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

#include "dmfvi/benchmarks.hpp"
#include "dmfvi/bpca.hpp"

namespace dmfvi {

enum class MaskKind { kNone, kMar, kMnarThreshold, kMnarOcclusion };

MaskKind parse_mask_kind(std::string_view name);
const char* mask_kind_name(MaskKind kind);

struct MaskSpec {
  MaskKind kind = MaskKind::kNone;
  double missing_ratio = 0.2;  // mar
  double quantile = 0.2;       // mnar_threshold
  std::uint64_t seed = 1;

  void validate() const;
};

// Every entry is dropped independently with probability `ratio`; a column
// that loses all of its entries is drawn again.
ObservationMask generate_mar_mask(int rows, int cols, double ratio, std::uint64_t seed);

// Entries strictly below the empirical `quantile` of the data are missing.
// A column left empty keeps its largest entry.
ObservationMask generate_mnar_threshold_mask(const Eigen::MatrixXd& data, double quantile);

// A point is missing in a frame when every cube face it lies on is
// back-facing for that camera. Rows follow assemble_measurement's layout
// transposed: one row per point, x and y columns per frame.
ObservationMask generate_mnar_occlusion_mask(const CubeScene& scene);

// Builds the mask described by `spec` for data of the given shape. The
// occlusion kind needs the scene; the threshold kind needs the data.
ObservationMask make_mask(const MaskSpec& spec, const Eigen::MatrixXd& data,
                          const CubeScene* scene = nullptr);

double reconstruction_rmse(const Eigen::MatrixXd& data, const ObservationMask::Grid& eval,
                           const Eigen::MatrixXd& prediction);
double reconstruction_rmse(const Eigen::MatrixXd& data, const ObservationMask::Grid& eval,
                           const BpcaPosterior& posterior);

}  // namespace dmfvi
