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

#include "dmfvi/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dmfvi/errors.hpp"

namespace dmfvi {

namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

Eigen::Matrix3d rotation_z(double angle) {
  Eigen::Matrix3d r;
  r << std::cos(angle), -std::sin(angle), 0.0,
       std::sin(angle), std::cos(angle), 0.0,
       0.0, 0.0, 1.0;
  return r;
}

std::uint8_t faces_of(const Eigen::Vector3d& p) {
  std::uint8_t bits = 0;
  for (int axis = 0; axis < 3; ++axis) {
    if (p(axis) == -0.5) bits |= static_cast<std::uint8_t>(1u << (2 * axis));
    if (p(axis) == 0.5) bits |= static_cast<std::uint8_t>(1u << (2 * axis + 1));
  }
  return bits;
}

}  // namespace

Eigen::Matrix3d CubeScene::rotation(int frame) const {
  return rotation_z(-radians(rotation_step_deg * frame));
}

CubeScene generate_cube_sequence(const CubeOptions& options, std::uint64_t seed) {
  if (options.points < 8) throw ConfigError("data.points: a cube needs at least 8 points");
  if (options.cameras < 1) throw ConfigError("data.cameras: must be positive");
  if (options.frames_per_camera < 1) throw ConfigError("data.frames_per_camera: must be positive");
  if (!(options.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma: must be >= 0");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_edge(0, 11);

  std::vector<Eigen::Vector3d> raw;
  for (int v = 0; v < 8; ++v) {
    raw.emplace_back((v & 1) ? 0.5 : -0.5, (v & 2) ? 0.5 : -0.5, (v & 4) ? 0.5 : -0.5);
  }
  // Edge e runs along axis e / 4; the other two coordinates come from e % 4.
  for (int k = 8; k < options.points; ++k) {
    const int e = pick_edge(rng);
    const int axis = e / 4;
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    Eigen::Vector3d p;
    p(axis) = unit(rng) - 0.5;
    p(a) = (e & 1) ? 0.5 : -0.5;
    p(b) = (e & 2) ? 0.5 : -0.5;
    raw.push_back(p);
  }

  CubeScene scene;
  scene.frames_per_camera = options.frames_per_camera;
  scene.rotation_step_deg = options.rotation_step_deg;
  scene.noise_sigma = options.noise_sigma;
  scene.points3d.resize(options.points, 3);
  for (int p = 0; p < options.points; ++p) {
    scene.faces.push_back(faces_of(raw[p]));
    scene.points3d.row(p) = raw[p].transpose();
  }
  const Eigen::RowVector3d centroid = scene.points3d.colwise().mean();
  scene.points3d.rowwise() -= centroid;

  const double elev = radians(options.elevation_deg);
  for (int c = 0; c < options.cameras; ++c) {
    const double az = 2.0 * std::numbers::pi * c / options.cameras;
    const Eigen::Vector3d toward(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                                 std::sin(elev));
    const Eigen::Vector3d right(-std::sin(az), std::cos(az), 0.0);
    const Eigen::Vector3d up = toward.cross(right);
    CubeCamera cam;
    cam.projection.row(0) = right.transpose();
    cam.projection.row(1) = up.transpose();
    cam.view_direction = -toward;
    scene.cameras.push_back(cam);
  }

  std::normal_distribution<double> noise(0.0, options.noise_sigma);
  scene.observations.resize(options.cameras);
  for (int c = 0; c < options.cameras; ++c) {
    for (int f = 0; f < options.frames_per_camera; ++f) {
      Eigen::MatrixXd obs =
          scene.points3d * scene.rotation(f).transpose() * scene.cameras[c].projection.transpose();
      if (options.noise_sigma > 0.0) {
        for (Eigen::Index i = 0; i < obs.size(); ++i) obs.data()[i] += noise(rng);
      }
      scene.observations[c].push_back(std::move(obs));
    }
  }
  return scene;
}

MeasurementMatrix assemble_measurement(const CubeScene& scene, int frames) {
  const int F = frames < 0 ? scene.frames_per_camera : std::min(frames, scene.frames_per_camera);
  const int C = scene.camera_count();
  MeasurementMatrix out;
  out.values.resize(scene.point_count(), 2 * F * C);
  out.blocks.assignment.resize(C);
  int col = 0;
  for (int c = 0; c < C; ++c) {
    for (int f = 0; f < F; ++f) {
      for (int axis = 0; axis < 2; ++axis) {
        out.values.col(col) = scene.observations[c][f].col(axis);
        out.sources.push_back({c, f, axis});
        out.blocks.assignment[c].push_back(col);
        ++col;
      }
    }
  }
  return out;
}

Eigen::MatrixXd svd_baseline(const Eigen::MatrixXd& measurement) {
  if (measurement.rows() < 3 || measurement.cols() < 3) {
    throw DomainError("svd baseline: measurement smaller than 3 x 3");
  }
  Eigen::MatrixXd centred = measurement.rowwise() - measurement.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  if (!(s(2) > 1e-12 * std::max(s(0), 1e-300))) {
    throw DomainError("svd baseline: measurement has fewer than 3 non-zero singular values");
  }
  return svd.matrixU().leftCols(3) * s.head(3).asDiagonal();
}

namespace {

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& a, const char* which) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || !(s(s.size() - 1) > 1e-12 * s(0))) {
    throw DomainError(std::string("subspace angle: ") + which + " is rank deficient");
  }
  return svd.matrixU();
}

}  // namespace

double max_subspace_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() == 0) {
    throw DomainError("subspace angle: operands must have the same non-empty shape");
  }
  if (a.cols() > a.rows()) throw DomainError("subspace angle: more columns than rows");
  const Eigen::MatrixXd qa = orthonormal_basis(a, "first operand");
  const Eigen::MatrixXd qb = orthonormal_basis(b, "second operand");
  const Eigen::MatrixXd cross = qa.transpose() * qb;
  const double cos_max = Eigen::JacobiSVD<Eigen::MatrixXd>(cross).singularValues().minCoeff();
  const Eigen::MatrixXd residual = qb - qa * cross;
  const double sin_max = Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues().maxCoeff();
  const double angle = std::atan2(std::min(sin_max, 1.0), std::clamp(cos_max, 0.0, 1.0));
  return std::clamp(angle * 180.0 / std::numbers::pi, 0.0, 90.0);
}

Eigen::MatrixXd consensus_structure(const std::vector<BpcaPosterior>& posteriors) {
  if (posteriors.empty()) throw ConfigError("consensus structure: no posteriors");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(posteriors[0].w_mean.rows(),
                                              posteriors[0].w_mean.cols());
  for (const auto& p : posteriors) sum += p.w_mean;
  return sum / static_cast<double>(posteriors.size());
}

std::vector<OnlineStep> online_schedule(const CubeScene& scene, int initial_frames,
                                        int increment) {
  if (initial_frames < 1 || increment < 1) {
    throw ConfigError("data.initial_frames, data.increment: must be positive");
  }
  if (scene.frames_per_camera < initial_frames) {
    throw ConfigError("data.initial_frames: exceeds frames_per_camera");
  }
  std::vector<OnlineStep> steps;
  int visible = 0;
  int target = initial_frames;
  while (visible < scene.frames_per_camera) {
    target = std::min(target, scene.frames_per_camera);
    OnlineStep step;
    step.frames = target;
    for (int f = visible; f < target; ++f) step.new_frames.push_back(f);
    steps.push_back(std::move(step));
    visible = target;
    target += increment;
  }
  return steps;
}

OnlineRun run_online_dbpca(const CubeScene& scene, const ObservationMask& mask,
                           const std::vector<OnlineStep>& schedule, const NetworkGraph& graph,
                           const BpcaModelConfig& config, const SolverConfig& solver) {
  const int C = scene.camera_count();
  const int F = scene.frames_per_camera;
  if (graph.node_count() != C) throw ConfigError("network.nodes: online SfM needs one node per camera");
  if (schedule.empty()) throw ConfigError("online schedule: empty");
  const MeasurementMatrix full = assemble_measurement(scene);
  if (mask.rows() != full.values.rows() || mask.cols() != full.values.cols()) {
    throw ConfigError("online SfM: mask does not match the measurement matrix");
  }

  auto frame_columns = [&](int camera, const std::vector<int>& frames) {
    std::vector<int> cols;
    for (int f : frames) {
      cols.push_back(2 * (camera * F + f));
      cols.push_back(2 * (camera * F + f) + 1);
    }
    return cols;
  };
  auto gather = [&](const std::vector<int>& cols, Eigen::MatrixXd& data,
                    ObservationMask::Grid& grid) {
    data.resize(full.values.rows(), static_cast<Eigen::Index>(cols.size()));
    grid.resize(full.values.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      data.col(k) = full.values.col(cols[k]);
      grid.col(k) = mask.grid().col(cols[k]);
    }
  };

  std::vector<NodeState> nodes;
  for (int c = 0; c < C; ++c) {
    NodeState node;
    node.node_id = c;
    node.columns = frame_columns(c, schedule[0].new_frames);
    ObservationMask::Grid grid;
    gather(node.columns, node.data, grid);
    node.mask = ObservationMask(std::move(grid));
    node.posterior = init_posterior(config, static_cast<int>(node.columns.size()), solver.seed);
    nodes.push_back(std::move(node));
  }
  DistributedSolver engine(graph, std::move(nodes), config, solver);

  OnlineRun out;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    if (s > 0) {
      for (int c = 0; c < C; ++c) {
        const std::vector<int> cols = frame_columns(c, schedule[s].new_frames);
        Eigen::MatrixXd data;
        ObservationMask::Grid grid;
        gather(cols, data, grid);
        engine.append_columns(c, data, grid, cols);
      }
    }
    DistributedResult r = engine.run();
    OnlineStepResult step;
    step.frames = schedule[s].frames;
    step.iterations = r.iterations;
    step.converged = r.converged;
    step.angle_deg = max_subspace_angle(consensus_structure(r.posteriors), scene.points3d);
    out.steps.push_back(step);
    const double offset = out.trace.empty() ? 0.0 : out.trace.back().wall_ms;
    for (TraceRow row : r.trace.rows) {
      row.wall_ms += offset;
      out.trace.rows.push_back(row);
    }
    if (s + 1 == schedule.size()) out.final_state = std::move(r);
  }
  return out;
}

Eigen::MatrixXd generate_gaussian_samples(int dim, int samples, double mean, double variance,
                                          std::uint64_t seed) {
  if (dim < 1 || samples < 1) throw ConfigError("data.dim, data.samples: must be positive");
  if (!(variance > 0.0) || !std::isfinite(mean)) {
    throw ConfigError("data.mean, data.variance: need a finite mean and a positive variance");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> draw(mean, std::sqrt(variance));
  Eigen::MatrixXd x(dim, samples);
  for (int n = 0; n < samples; ++n)
    for (int d = 0; d < dim; ++d) x(d, n) = draw(rng);
  return x;
}

RatingsData generate_lowrank_ratings(int rows, int cols, int rank, double noise_sigma,
                                     double observed_fraction, std::uint64_t seed,
                                     double probe_fraction) {
  if (rows < 1 || cols < 1) throw ConfigError("data.rows, data.cols: must be positive");
  if (rank < 1 || rank > std::min(rows, cols)) throw ConfigError("data.rank: must lie in [1, min(rows, cols)]");
  if (!(observed_fraction > 0.0 && observed_fraction <= 1.0)) {
    throw ConfigError("data.observed_fraction: must lie in (0, 1]");
  }
  if (!(probe_fraction >= 0.0 && probe_fraction < 1.0)) {
    throw ConfigError("data.probe_fraction: must lie in [0, 1)");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma: must be >= 0");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_row(0, rows - 1);

  Eigen::MatrixXd u(rows, rank), v(cols, rank);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = gauss(rng);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = gauss(rng) / std::sqrt(double(rank));
  Eigen::VectorXd offset(rows);
  for (int d = 0; d < rows; ++d) offset(d) = 3.0 + 0.5 * gauss(rng);

  RatingsData out;
  out.values = u * v.transpose();
  out.values.colwise() += offset;
  if (noise_sigma > 0.0) {
    for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values.data()[i] += noise_sigma * gauss(rng);
  }

  ObservationMask::Grid train = ObservationMask::Grid::Zero(rows, cols);
  out.probe = ObservationMask::Grid::Zero(rows, cols);
  for (int n = 0; n < cols; ++n) {
    bool any_train = false;
    for (int d = 0; d < rows; ++d) {
      if (unit(rng) >= observed_fraction) continue;
      if (unit(rng) < probe_fraction) {
        out.probe(d, n) = 1;
      } else {
        train(d, n) = 1;
        any_train = true;
      }
    }
    if (!any_train) {
      const int d = any_row(rng);
      train(d, n) = 1;
      out.probe(d, n) = 0;
    }
  }
  out.train = ObservationMask(std::move(train));
  return out;
}

Eigen::MatrixXd column_mean_prediction(const Eigen::MatrixXd& data, const ObservationMask& train) {
  Eigen::MatrixXd out(data.rows(), data.cols());
  for (Eigen::Index n = 0; n < data.cols(); ++n) {
    double sum = 0.0;
    const auto& rows = train.observed_rows(static_cast<int>(n));
    for (int d : rows) sum += data(d, n);
    out.col(n).setConstant(sum / static_cast<double>(rows.size()));
  }
  return out;
}

Eigen::MatrixXd distributed_reconstruction(const std::vector<NodeState>& nodes, int total_columns) {
  if (nodes.empty()) throw ConfigError("reconstruction: no nodes");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nodes[0].data.rows(), total_columns);
  for (const auto& node : nodes) {
    const Eigen::MatrixXd local = node.posterior.reconstruction();
    for (std::size_t k = 0; k < node.columns.size(); ++k) {
      const int c = node.columns[k];
      if (c < 0 || c >= total_columns) throw ConfigError("reconstruction: column out of range");
      out.col(c) = local.col(static_cast<Eigen::Index>(k));
    }
  }
  return out;
}

}  // namespace dmfvi
