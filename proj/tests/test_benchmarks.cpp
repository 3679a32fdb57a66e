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


#include <cmath>
#include <bit>
#include <numbers>
#include <random>
#include <set>

#include <doctest.h>

#include "dmfvi/benchmarks.hpp"
#include "dmfvi/errors.hpp"
#include "dmfvi/missing.hpp"
#include "oracles.hpp"

using namespace dmfvi;

namespace {

double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

Eigen::MatrixXd random_orthogonal(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

CubeOptions small_cube() {
  CubeOptions o;
  o.points = 20;
  o.cameras = 3;
  o.frames_per_camera = 20;
  return o;
}

}  // namespace

TEST_CASE("cube scene geometry") {
  CubeOptions o;
  o.noise_sigma = 0.0;
  const auto scene = generate_cube_sequence(o, 1);
  CHECK(scene.point_count() == 88);
  CHECK(scene.camera_count() == 5);
  CHECK(scene.points3d.colwise().mean().norm() < 1e-12);
  for (int c = 0; c < 5; ++c) {
    const Eigen::MatrixXd expected = scene.points3d * scene.cameras[c].projection.transpose();
    CHECK((scene.observations[c][0] - expected).norm() < 1e-12);
  }

  const Eigen::Matrix3d r = scene.rotation(49);
  const double angle = degrees(std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0)));
  CHECK(angle == doctest::Approx(147.0));
  CHECK(r(1, 0) < 0.0);  // clockwise about +z
  CHECK(scene.rotation(0).isIdentity(1e-15));

  // The eight corners are always present.
  int corners = 0;
  for (int p = 0; p < 88; ++p) {
    corners += std::popcount(static_cast<unsigned>(scene.faces[p])) == 3;
  }
  CHECK(corners == 8);

  const auto again = generate_cube_sequence(o, 1);
  CHECK(again.points3d == scene.points3d);
  CHECK(again.observations[2][7] == scene.observations[2][7]);
  CHECK_THROWS_AS(generate_cube_sequence(CubeOptions{7}, 1), ConfigError);
}

TEST_CASE("measurement matrix layout") {
  const auto scene = generate_cube_sequence(CubeOptions{}, 2);
  const auto mm = assemble_measurement(scene);
  CHECK(mm.values.rows() == 88);
  CHECK(mm.values.cols() == 500);
  for (const auto& block : mm.blocks.assignment) CHECK(block.size() == 100);

  Eigen::MatrixXd rebuilt(88, 500);
  for (int c = 0; c < 5; ++c) {
    for (std::size_t k = 0; k < mm.blocks.assignment[c].size(); ++k) {
      const int col = mm.blocks.assignment[c][k];
      const auto& src = mm.sources[col];
      CHECK(src.camera == c);
      rebuilt.col(col) = scene.observations[src.camera][src.frame].col(src.axis);
    }
  }
  CHECK(rebuilt == mm.values);

  CHECK(assemble_measurement(scene, 10).values.cols() == 100);
}

TEST_CASE("noiseless measurements have rank three after centring") {
  CubeOptions o;
  o.noise_sigma = 0.0;
  const auto mm = assemble_measurement(generate_cube_sequence(o, 3));
  const Eigen::MatrixXd centred = mm.values.rowwise() - mm.values.colwise().mean();
  const auto s = Eigen::BDCSVD<Eigen::MatrixXd>(centred).singularValues();
  CHECK(s(3) <= 1e-8 * s(0));
  CHECK(s(2) > 1e-3 * s(0));
}

TEST_CASE("SVD baseline on the cube") {
  CubeOptions o;
  o.noise_sigma = 0.0;
  const auto scene = generate_cube_sequence(o, 4);
  const auto structure = svd_baseline(assemble_measurement(scene).values);
  CHECK(max_subspace_angle(structure, scene.points3d) <= 0.1);

  CHECK_THROWS_AS(svd_baseline(Eigen::MatrixXd::Ones(10, 10)), DomainError);
}

TEST_CASE("SVD baseline degrades with noise") {
  const std::vector<double> levels{0.005, 0.01, 0.02, 0.03, 0.05};
  std::vector<double> noise, angle;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (double sigma : levels) {
      CubeOptions o;
      o.noise_sigma = sigma;
      const auto scene = generate_cube_sequence(o, seed);
      noise.push_back(sigma);
      angle.push_back(max_subspace_angle(svd_baseline(assemble_measurement(scene).values),
                                         scene.points3d));
    }
  }
  CHECK(oracle::spearman(noise, angle) > 0.8);
}

TEST_CASE("principal angles") {
  const int n = 8;
  const Eigen::MatrixXd q = random_orthogonal(n, 5);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, 3), b = Eigen::MatrixXd::Zero(n, 3);
  const double planted[3] = {10.0, 5.0, 1.0};
  for (int k = 0; k < 3; ++k) {
    const double t = planted[k] * std::numbers::pi / 180.0;
    a(k, k) = 1.0;
    b(k, k) = std::cos(t);
    b(k + 3, k) = std::sin(t);
  }
  a = q * a;
  b = q * b;
  CHECK(max_subspace_angle(a, b) == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(max_subspace_angle(a, a) == doctest::Approx(0.0));

  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, 3);
  for (int k = 0; k < 3; ++k) comp(k + 3, k) = 1.0;
  CHECK(max_subspace_angle(q.leftCols(3), q * comp) == doctest::Approx(90.0));

  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Matrix3d g;
    for (int i = 0; i < 9; ++i) g.data()[i] = normal(rng);
    CHECK(std::abs(max_subspace_angle(a * g, b) - 10.0) < 1e-8);
    CHECK(max_subspace_angle(a * g, a) < 1e-6);
  }

  Eigen::MatrixXd deficient = a;
  deficient.col(2) = deficient.col(0);
  CHECK_THROWS_AS(max_subspace_angle(deficient, b), DomainError);
}

TEST_CASE("online schedule") {
  const auto scene = generate_cube_sequence(CubeOptions{}, 1);
  const auto steps = online_schedule(scene);
  REQUIRE(steps.size() == 9);
  CHECK(steps.front().frames == 10);
  CHECK(steps.front().new_frames.size() == 10);
  CHECK(2 * steps.front().new_frames.size() == 20);
  CHECK(steps.back().frames == 50);
  std::set<int> seen;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (s > 0) CHECK(steps[s].frames == steps[s - 1].frames + 5);
    for (int f : steps[s].new_frames) CHECK(seen.insert(f).second);
    CHECK(static_cast<int>(seen.size()) == steps[s].frames);
  }
  CHECK_THROWS_AS(online_schedule(scene, 60, 5), ConfigError);
  CHECK_THROWS_AS(online_schedule(scene, 10, 0), ConfigError);
}

TEST_CASE("online fits report sane angles at every step") {
  const auto scene = generate_cube_sequence(small_cube(), 1);
  const auto steps = online_schedule(scene, 10, 5);
  const auto graph = build_topology(Topology::kRing, 3);
  SolverConfig solver;
  solver.max_iter = 40;
  const auto run = run_online_dbpca(scene, ObservationMask::all_observed(20, 120), steps, graph,
                                    BpcaModelConfig::with_defaults(20, 3), solver);
  REQUIRE(run.steps.size() == steps.size());
  for (const auto& s : run.steps) {
    CHECK(std::isfinite(s.angle_deg));
    CHECK(s.angle_deg >= 0.0);
    CHECK(s.angle_deg <= 90.0);
  }
  for (int k = 1; k < run.trace.size(); ++k) {
    CHECK(run.trace.rows[k].wall_ms >= run.trace.rows[k - 1].wall_ms);
  }
  for (const auto& node : run.final_state.posteriors) CHECK(node.sample_count() == 40);
}

TEST_CASE("warm-started online steps converge faster than cold fits") {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto scene = generate_cube_sequence(small_cube(), seed);
    const auto graph = build_topology(Topology::kRing, 3);
    const auto config = BpcaModelConfig::with_defaults(20, 3);
    SolverConfig solver;
    solver.seed = seed;
    solver.max_iter = 500;
    solver.consensus_tol = 0.05;
    const auto mm = assemble_measurement(scene);
    const auto mask = ObservationMask::all_observed(20, static_cast<int>(mm.values.cols()));
    const auto warm =
        run_online_dbpca(scene, mask, online_schedule(scene, 10, 5), graph, config, solver);
    const auto cold = fit_distributed(mm.values, mask, graph, mm.blocks, config, solver);
    if (warm.steps.back().converged && warm.steps.back().iterations < cold.iterations) ++wins;
  }
  CHECK(wins >= 6);
}

TEST_CASE("low-rank ratings") {
  const auto clean = generate_lowrank_ratings(30, 40, 4, 0.0, 1.0, 3, 0.0);
  CHECK(clean.train.complete());
  const auto s = Eigen::BDCSVD<Eigen::MatrixXd>(clean.values).singularValues();
  CHECK(s(4) > 1e-8 * s(0));
  CHECK(s(5) <= 1e-8 * s(0));

  const auto r = generate_lowrank_ratings(50, 80, 3, 0.1, 0.3, 4);
  long probe = 0;
  for (int n = 0; n < 80; ++n) {
    CHECK_FALSE(r.train.observed_rows(n).empty());
    for (int d = 0; d < 50; ++d) {
      CHECK_FALSE((r.probe(d, n) && r.train.observed(d, n)));
      probe += r.probe(d, n);
    }
  }
  CHECK(probe > 0);
  const double observed = static_cast<double>(probe + r.train.observed_count()) / (50.0 * 80.0);
  CHECK(observed == doctest::Approx(0.3).epsilon(0.1));

  const auto again = generate_lowrank_ratings(50, 80, 3, 0.1, 0.3, 4);
  CHECK(again.values == r.values);
  CHECK(again.train.grid() == r.train.grid());
  CHECK(again.probe == r.probe);

  CHECK_THROWS_AS(generate_lowrank_ratings(5, 5, 6, 0.0, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(generate_lowrank_ratings(5, 5, 2, 0.0, 0.0, 1), ConfigError);
}

TEST_CASE("column-mean baseline and scattered reconstruction") {
  Eigen::MatrixXd data(2, 2);
  data << 1.0, 5.0, 3.0, 7.0;
  ObservationMask::Grid grid(2, 2);
  grid << 1, 0, 1, 1;
  const auto pred = column_mean_prediction(data, ObservationMask(grid));
  CHECK(pred(0, 0) == 2.0);
  CHECK(pred(1, 0) == 2.0);
  CHECK(pred(0, 1) == 7.0);

  const auto config = BpcaModelConfig::with_defaults(2, 1);
  std::vector<NodeState> nodes(2);
  for (int i = 0; i < 2; ++i) {
    nodes[i].node_id = i;
    nodes[i].data = Eigen::MatrixXd::Zero(2, 1);
    nodes[i].columns = {1 - i};
    nodes[i].posterior = init_posterior(config, 1, 10 + i);
  }
  const auto full = distributed_reconstruction(nodes, 2);
  CHECK(full.col(1) == nodes[0].posterior.reconstruction().col(0));
  CHECK(full.col(0) == nodes[1].posterior.reconstruction().col(0));
}

TEST_CASE("Gaussian samples") {
  const auto x = generate_gaussian_samples(50, 250, 5.0, 0.8, 1);
  CHECK(x.rows() == 50);
  CHECK(x.cols() == 250);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (x.size() - 1.0);
  CHECK(std::abs(mean - 5.0) < 4.0 * std::sqrt(0.8 / x.size()));
  CHECK(std::abs(var - 0.8) < 0.05);
  CHECK(generate_gaussian_samples(50, 250, 5.0, 0.8, 1) == x);
  CHECK_THROWS_AS(generate_gaussian_samples(0, 5, 0.0, 1.0, 1), ConfigError);
}
