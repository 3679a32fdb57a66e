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
#include <vector>

#include <Eigen/Dense>

#include "dmfvi/badmm.hpp"
#include "dmfvi/bpca.hpp"

namespace dmfvi {

// Rotating unit cube observed by orthographic cameras.
struct CubeCamera {
  Eigen::Matrix<double, 2, 3> projection;  // rows: image x and y axes
  Eigen::Vector3d view_direction;          // from the camera towards the cube
};

struct CubeScene {
  Eigen::MatrixXd points3d;  // P x 3, centroid at the origin
  // Bit f is set when the point lies on face f; faces are ordered
  // -x, +x, -y, +y, -z, +z.
  std::vector<std::uint8_t> faces;
  std::vector<CubeCamera> cameras;
  int frames_per_camera = 50;
  double rotation_step_deg = 3.0;
  double noise_sigma = 0.0;
  // observations[c][f] is the P x 2 projection seen by camera c at frame f.
  std::vector<std::vector<Eigen::MatrixXd>> observations;

  int point_count() const { return static_cast<int>(points3d.rows()); }
  int camera_count() const { return static_cast<int>(cameras.size()); }
  // Rotation applied to the cube at `frame` (clockwise about +z).
  Eigen::Matrix3d rotation(int frame) const;
};

struct CubeOptions {
  int points = 88;
  double noise_sigma = 0.01;
  int cameras = 5;
  int frames_per_camera = 50;
  double rotation_step_deg = 3.0;
  double elevation_deg = 30.0;
};

CubeScene generate_cube_sequence(const CubeOptions& options, std::uint64_t seed);

struct ColumnSource {
  int camera = 0;
  int frame = 0;
  int axis = 0;  // 0 = x, 1 = y
};

struct MeasurementMatrix {
  Eigen::MatrixXd values;             // P x 2F
  std::vector<ColumnSource> sources;  // one per column
  DataPartition blocks;               // columns held by each camera
};

// Columns are grouped by camera, then frame, then axis. Only frames below
// `frames` are included when it is non-negative.
MeasurementMatrix assemble_measurement(const CubeScene& scene, int frames = -1);

// Tomasi-Kanade factorisation: column-centre, rank-3 SVD, U * S.
Eigen::MatrixXd svd_baseline(const Eigen::MatrixXd& measurement);

// Largest principal angle between the column spaces of a and b, in degrees.
double max_subspace_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Average of the node posterior W means.
Eigen::MatrixXd consensus_structure(const std::vector<BpcaPosterior>& posteriors);

struct OnlineStep {
  int frames = 0;               // frames [0, frames) per camera are visible
  std::vector<int> new_frames;  // frames added at this step
};

std::vector<OnlineStep> online_schedule(const CubeScene& scene, int initial_frames = 10,
                                        int increment = 5);

struct OnlineStepResult {
  int frames = 0;
  double angle_deg = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct OnlineRun {
  std::vector<OnlineStepResult> steps;
  // Rounds of every step back to back; iteration and wall_ms keep counting.
  ConvergenceTrace trace;
  DistributedResult final_state;
};

// One node per camera on `graph`; each step appends the new frames to
// every node and resumes the solver from its current state.
OnlineRun run_online_dbpca(const CubeScene& scene, const ObservationMask& mask,
                           const std::vector<OnlineStep>& schedule, const NetworkGraph& graph,
                           const BpcaModelConfig& config, const SolverConfig& solver);

// dim x samples matrix of independent N(mean, variance) entries.
Eigen::MatrixXd generate_gaussian_samples(int dim, int samples, double mean, double variance,
                                          std::uint64_t seed);

struct RatingsData {
  Eigen::MatrixXd values;  // D x N, every entry filled
  ObservationMask train;
  ObservationMask::Grid probe;  // disjoint from train; columns may be empty
};

// values = U V^T + mu 1^T + noise. Observed entries are split into probe
// (probability probe_fraction) and train; every column keeps at least one
// training entry.
RatingsData generate_lowrank_ratings(int rows, int cols, int rank, double noise_sigma,
                                     double observed_fraction, std::uint64_t seed,
                                     double probe_fraction = 0.1);

// Predicts every entry by the mean of its column's training entries.
Eigen::MatrixXd column_mean_prediction(const Eigen::MatrixXd& data, const ObservationMask& train);

// Each node's W z + mu for its own columns, scattered back to global order.
Eigen::MatrixXd distributed_reconstruction(const std::vector<NodeState>& nodes, int total_columns);

}  // namespace dmfvi
