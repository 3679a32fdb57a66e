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


// Random small BPCA instances shared by the unit tests and the acceptance run.

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "dmfvi/bpca.hpp"

namespace fixture {

struct Instance {
  Eigen::MatrixXd data;
  dmfvi::ObservationMask mask;
  dmfvi::BpcaModelConfig config;
  dmfvi::BpcaPosterior post;
};

// Low-rank-plus-noise data, an optional random mask (every column keeps at
// least one entry) and a posterior with random means, variances and Gamma
// factors away from their priors.
inline Instance random_instance(int D, int M, int N, std::uint64_t seed,
                                double missing = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Instance inst;
  Eigen::MatrixXd w(D, M), z(M, N);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  for (int i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  inst.data = w * z;
  for (int i = 0; i < inst.data.size(); ++i) inst.data.data()[i] += 1.0 + 0.3 * normal(rng);

  dmfvi::ObservationMask::Grid grid = dmfvi::ObservationMask::Grid::Ones(D, N);
  if (missing > 0.0) {
    for (int n = 0; n < N; ++n) {
      for (int d = 0; d < D; ++d) grid(d, n) = unit(rng) < missing ? 0 : 1;
      if (grid.col(n).sum() == 0) grid(static_cast<int>(unit(rng) * D), n) = 1;
    }
  }
  inst.mask = dmfvi::ObservationMask(grid);

  inst.config = dmfvi::BpcaModelConfig::with_defaults(D, M);
  for (int d = 0; d < D; ++d) inst.config.prior_mean_mu(d) = 0.5 * normal(rng);
  for (int i = 0; i < inst.config.prior_mean_w.size(); ++i) {
    inst.config.prior_mean_w.data()[i] = 0.2 * normal(rng);
  }

  auto& q = inst.post;
  q = dmfvi::init_posterior(inst.config, N, seed + 17);
  for (int d = 0; d < D; ++d) {
    q.mu_mean(d) = normal(rng);
    q.mu_var(d) = 0.05 + unit(rng);
    for (int m = 0; m < M; ++m) {
      q.w_mean(d, m) = normal(rng);
      q.w_var(d, m) = 0.05 + unit(rng);
    }
  }
  for (int n = 0; n < N; ++n) {
    Eigen::MatrixXd a(M, M);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = 0.5 * normal(rng);
    const Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(M, M) + a * a.transpose();
    Eigen::VectorXd mean(M);
    for (int m = 0; m < M; ++m) mean(m) = normal(rng);
    q.set_latent(n, mean, precision);
  }
  q.tau = {1.0 + 5.0 * unit(rng), 0.5 + 2.0 * unit(rng)};
  for (auto& a : q.alpha) a = {1.0 + 3.0 * unit(rng), 0.5 + 2.0 * unit(rng)};
  q.theta = {1.0 + 3.0 * unit(rng), 0.5 + 2.0 * unit(rng)};
  return inst;
}

}  // namespace fixture
