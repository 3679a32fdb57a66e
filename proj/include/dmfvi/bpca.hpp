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
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dmfvi/expfam.hpp"
#include "dmfvi/trace.hpp"

namespace dmfvi {

// Gamma(shape, rate); mean shape / rate.
struct GammaParams {
  double shape = 1e-3;
  double rate = 1e-3;

  bool valid() const;
  double mean() const { return shape / rate; }
  // E[ln x] = digamma(shape) - ln(rate).
  double log_mean() const;
};

// KL(q || p) between two Gamma distributions.
double gamma_kl(const GammaParams& q, const GammaParams& p);

// A precision hyperparameter that is either held fixed or given a Gamma
// prior and learned by a conjugate mean-field update.
struct Hyperparameter {
  bool learned = true;
  double fixed_value = 1.0;
  GammaParams prior{1e-3, 1e-3};
};

struct BpcaModelConfig {
  int data_dim = 0;    // D
  int latent_dim = 0;  // M
  Eigen::VectorXd prior_mean_mu;  // D
  Eigen::MatrixXd prior_mean_w;   // D x M
  Hyperparameter tau;    // noise precision
  Hyperparameter alpha;  // per-column precision of W (one per latent dim)
  Hyperparameter theta;  // precision of mu

  // Zero prior means, broad Gamma(1e-3, 1e-3) hyperpriors, everything learned.
  static BpcaModelConfig with_defaults(int data_dim, int latent_dim);
  void validate() const;
};

// D x N observation pattern with per-row and per-column index lists.
// Columns with no observed entry are rejected.
class ObservationMask {
 public:
  using Grid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

  ObservationMask() = default;
  explicit ObservationMask(Grid grid);
  static ObservationMask all_observed(int rows, int cols);

  int rows() const { return static_cast<int>(grid_.rows()); }
  int cols() const { return static_cast<int>(grid_.cols()); }
  bool observed(int d, int n) const { return grid_(d, n) != 0; }
  bool complete() const { return observed_count_ == grid_.size(); }
  long observed_count() const { return observed_count_; }
  const Grid& grid() const { return grid_; }

  const std::vector<int>& observed_rows(int n) const { return col_lists_[n]; }
  const std::vector<int>& observed_cols(int d) const { return row_lists_[d]; }

  ObservationMask select_columns(std::span<const int> columns) const;

 private:
  Grid grid_;
  std::vector<std::vector<int>> col_lists_;
  std::vector<std::vector<int>> row_lists_;
  long observed_count_ = 0;
};

// Fully factorised posterior: one full-covariance Gaussian per latent
// column, independent scalar Gaussians for every entry of mu and W, and
// Gamma factors for the hyperparameters.
struct BpcaPosterior {
  Eigen::MatrixXd z_mean;                     // M x N
  std::vector<Eigen::MatrixXd> z_precision;   // N of M x M
  std::vector<Eigen::MatrixXd> z_covariance;  // inverse of z_precision
  Eigen::VectorXd mu_mean;                    // D
  Eigen::VectorXd mu_var;                     // D
  Eigen::MatrixXd w_mean;                     // D x M
  Eigen::MatrixXd w_var;                      // D x M
  GammaParams tau;
  std::vector<GammaParams> alpha;  // M
  GammaParams theta;

  int data_dim() const { return static_cast<int>(mu_mean.size()); }
  int latent_dim() const { return static_cast<int>(w_mean.cols()); }
  int sample_count() const { return static_cast<int>(z_mean.cols()); }

  GaussianParams mu(int d) const { return {mu_mean(d), mu_var(d)}; }
  GaussianParams w(int d, int m) const { return {w_mean(d, m), w_var(d, m)}; }

  // Sets column n's latent factor and refreshes its covariance.
  void set_latent(int n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision);
  // Resizes the latent block to `count` columns; new columns get `mean`
  // and identity precision.
  void resize_latents(int count, const Eigen::MatrixXd& new_means);

  // Posterior-mean reconstruction W z + mu.
  Eigen::MatrixXd reconstruction() const;
};

// Expected hyperparameters under the current posterior (or fixed values).
struct HyperMoments {
  double tau = 1.0;
  double log_tau = 0.0;
  Eigen::VectorXd alpha;
  Eigen::VectorXd log_alpha;
  double theta = 1.0;
  double log_theta = 0.0;
};

HyperMoments hyper_moments(const BpcaPosterior& post, const BpcaModelConfig& config);

BpcaPosterior init_posterior(const BpcaModelConfig& config, int sample_count,
                             std::uint64_t seed);

struct LatentMoments {
  Eigen::VectorXd mean;       // m^z_n
  Eigen::MatrixXd precision;  // Lambda^z_n
};

// Optimal q(z_n) given the rest. Only rows listed in observed_rows enter.
LatentMoments update_latent(const Eigen::Ref<const Eigen::VectorXd>& x_n,
                            std::span<const int> observed_rows, const BpcaPosterior& post,
                            double tau_mean);

void update_latents(const Eigen::MatrixXd& data, const ObservationMask& mask,
                    BpcaPosterior& post, const BpcaModelConfig& config);

// Exact coordinate updates of every mu and W factor (mean then variance,
// mu for d ascending, then W row-major). `global_weight` scales the prior
// and entropy terms of mu and W; 1 for a centralised fit.
void update_global_central(const Eigen::MatrixXd& data, const ObservationMask& mask,
                           BpcaPosterior& post, const BpcaModelConfig& config,
                           double global_weight = 1.0);

// Conjugate Gamma updates for the learned hyperparameters.
void update_hyperparams(const Eigen::MatrixXd& data, const ObservationMask& mask,
                        BpcaPosterior& post, const BpcaModelConfig& config);

// Sum over observed entries of E_q[(x_dn - w_d^T z_n - mu_d)^2].
double expected_squared_residual(const Eigen::MatrixXd& data, const ObservationMask& mask,
                                 const BpcaPosterior& post);

// Variational lower bound, all expectations in closed form. Missing entries
// are excluded. Terms belonging to mu, W, alpha and theta are multiplied by
// `global_weight`.
double compute_elbo(const Eigen::MatrixXd& data, const ObservationMask& mask,
                    const BpcaPosterior& post, const BpcaModelConfig& config,
                    double global_weight = 1.0);

struct FitOptions {
  std::uint64_t seed = 1;
  double tol = 1e-3;
  int max_iter = 500;
};

struct FitResult {
  BpcaPosterior posterior;
  ConvergenceTrace trace;
  bool converged = false;
  int iterations = 0;
};

// Coordinate ascent: all latents, then mu/W, then hyperparameters, until
// the relative change of the bound drops below tol. Throws DivergenceError
// on a non-finite bound.
FitResult fit_centralized(const Eigen::MatrixXd& data, const ObservationMask& mask,
                          const BpcaModelConfig& config, const FitOptions& options);
FitResult fit_centralized(const Eigen::MatrixXd& data, const ObservationMask& mask,
                          const BpcaModelConfig& config, const FitOptions& options,
                          BpcaPosterior initial);

namespace detail {

// Data-plus-prior part of a scalar coordinate's negative bound:
//   mean:     precision/2 * m^2 - rhs * m
//   variance: precision/2 * v - weight/2 * ln v
struct CoordinateStats {
  double precision = 0.0;
  double rhs = 0.0;
};

CoordinateStats mu_coordinate(const Eigen::MatrixXd& data, const ObservationMask& mask,
                              const BpcaPosterior& post, const HyperMoments& hyper,
                              const BpcaModelConfig& config, int d, double global_weight);

// Sufficient statistics of row d for the W sweep:
//   second = sum_{n obs in row d} E[z_n z_n^T]
//   cross  = sum_{n obs in row d} (x_dn - m^mu_d) m^z_n
struct RowMoments {
  Eigen::MatrixXd second;
  Eigen::VectorXd cross;
};

// Caches sum_n E[z_n z_n^T] when every column is fully observed.
class LatentSecondMoments {
 public:
  LatentSecondMoments(const ObservationMask& mask, const BpcaPosterior& post);
  RowMoments row(const Eigen::MatrixXd& data, const ObservationMask& mask,
                 const BpcaPosterior& post, int d) const;

 private:
  bool shared_ = false;
  Eigen::MatrixXd total_;
  std::vector<Eigen::MatrixXd> per_column_;
};

CoordinateStats w_coordinate(const RowMoments& row, const BpcaPosterior& post,
                             const HyperMoments& hyper, const BpcaModelConfig& config,
                             int d, int m, double global_weight);

}  // namespace detail

}  // namespace dmfvi
