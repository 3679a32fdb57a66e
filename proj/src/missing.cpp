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

#include "dmfvi/missing.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dmfvi/errors.hpp"

namespace dmfvi {

MaskKind parse_mask_kind(std::string_view name) {
  if (name == "none") return MaskKind::kNone;
  if (name == "mar") return MaskKind::kMar;
  if (name == "mnar_threshold") return MaskKind::kMnarThreshold;
  if (name == "mnar_occlusion") return MaskKind::kMnarOcclusion;
  throw ConfigError("data.mask.kind: unknown mask kind '" + std::string(name) +
                    "' (expected none, mar, mnar_threshold or mnar_occlusion)");
}

const char* mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::kNone: return "none";
    case MaskKind::kMar: return "mar";
    case MaskKind::kMnarThreshold: return "mnar_threshold";
    case MaskKind::kMnarOcclusion: return "mnar_occlusion";
  }
  return "none";
}

void MaskSpec::validate() const {
  if (kind == MaskKind::kMar && !(missing_ratio >= 0.0 && missing_ratio < 1.0)) {
    throw ConfigError("data.mask.missing_ratio: must lie in [0, 1)");
  }
  if (kind == MaskKind::kMnarThreshold && !(quantile > 0.0 && quantile < 1.0)) {
    throw ConfigError("data.mask.quantile: must lie in (0, 1)");
  }
}

ObservationMask generate_mar_mask(int rows, int cols, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mar mask: ratio must lie in [0, 1)");
  if (rows <= 0 || cols <= 0) throw ConfigError("mar mask: empty shape");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution drop(ratio);
  ObservationMask::Grid grid(rows, cols);
  for (int n = 0; n < cols; ++n) {
    bool any = false;
    while (!any) {
      for (int d = 0; d < rows; ++d) {
        grid(d, n) = drop(rng) ? 0 : 1;
        any = any || grid(d, n);
      }
    }
  }
  return ObservationMask(std::move(grid));
}

ObservationMask generate_mnar_threshold_mask(const Eigen::MatrixXd& data, double quantile) {
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw ConfigError("mnar mask: quantile must lie in (0, 1)");
  }
  if (data.size() == 0) throw ConfigError("mnar mask: empty data");
  if (data.maxCoeff() == data.minCoeff()) {
    throw ConfigError("mnar mask: data is constant, a value threshold is meaningless");
  }
  std::vector<double> sorted(data.data(), data.data() + data.size());
  const auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(sorted.size())));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const double threshold = sorted[k];

  ObservationMask::Grid grid(data.rows(), data.cols());
  for (Eigen::Index n = 0; n < data.cols(); ++n) {
    bool any = false;
    for (Eigen::Index d = 0; d < data.rows(); ++d) {
      grid(d, n) = data(d, n) < threshold ? 0 : 1;
      any = any || grid(d, n);
    }
    if (!any) {
      Eigen::Index best = 0;
      data.col(n).maxCoeff(&best);
      grid(best, n) = 1;
    }
  }
  return ObservationMask(std::move(grid));
}

namespace {

const Eigen::Vector3d& face_normal(int face) {
  static const Eigen::Vector3d normals[6] = {
      {-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  return normals[face];
}

}  // namespace

ObservationMask generate_mnar_occlusion_mask(const CubeScene& scene) {
  const int P = scene.point_count();
  const int F = scene.frames_per_camera;
  ObservationMask::Grid grid(P, 2 * F * scene.camera_count());
  for (int c = 0; c < scene.camera_count(); ++c) {
    const Eigen::Vector3d& view = scene.cameras[c].view_direction;
    for (int f = 0; f < F; ++f) {
      const Eigen::Matrix3d R = scene.rotation(f);
      bool front[6];
      for (int face = 0; face < 6; ++face) front[face] = (R * face_normal(face)).dot(view) < 0.0;
      const int col = 2 * (c * F + f);
      for (int p = 0; p < P; ++p) {
        bool visible = false;
        for (int face = 0; face < 6; ++face) {
          if ((scene.faces[p] >> face) & 1u) visible = visible || front[face];
        }
        grid(p, col) = grid(p, col + 1) = visible ? 1 : 0;
      }
    }
  }
  return ObservationMask(std::move(grid));
}

ObservationMask make_mask(const MaskSpec& spec, const Eigen::MatrixXd& data,
                          const CubeScene* scene) {
  spec.validate();
  switch (spec.kind) {
    case MaskKind::kNone:
      return ObservationMask::all_observed(static_cast<int>(data.rows()),
                                           static_cast<int>(data.cols()));
    case MaskKind::kMar:
      return generate_mar_mask(static_cast<int>(data.rows()), static_cast<int>(data.cols()),
                               spec.missing_ratio, spec.seed);
    case MaskKind::kMnarThreshold:
      return generate_mnar_threshold_mask(data, spec.quantile);
    case MaskKind::kMnarOcclusion:
      if (scene == nullptr) {
        throw ConfigError("data.mask.kind: mnar_occlusion is only available for cube scenes");
      }
      return generate_mnar_occlusion_mask(*scene);
  }
  throw ConfigError("data.mask.kind: unsupported");
}

double reconstruction_rmse(const Eigen::MatrixXd& data, const ObservationMask::Grid& eval,
                           const Eigen::MatrixXd& prediction) {
  if (eval.rows() != data.rows() || eval.cols() != data.cols() ||
      prediction.rows() != data.rows() || prediction.cols() != data.cols()) {
    throw ConfigError("rmse: shapes of data, mask and prediction differ");
  }
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index n = 0; n < data.cols(); ++n) {
    for (Eigen::Index d = 0; d < data.rows(); ++d) {
      if (!eval(d, n)) continue;
      const double r = data(d, n) - prediction(d, n);
      sum += r * r;
      ++count;
    }
  }
  if (count == 0) throw ConfigError("rmse: evaluation mask selects no entries");
  return std::sqrt(sum / static_cast<double>(count));
}

double reconstruction_rmse(const Eigen::MatrixXd& data, const ObservationMask::Grid& eval,
                           const BpcaPosterior& posterior) {
  return reconstruction_rmse(data, eval, posterior.reconstruction());
}

}  // namespace dmfvi
