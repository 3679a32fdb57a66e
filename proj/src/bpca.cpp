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

#include "dmfvi/bpca.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "dmfvi/errors.hpp"

namespace dmfvi {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double expected(const Hyperparameter& h, const GammaParams& post) {
  return h.learned ? post.mean() : h.fixed_value;
}

double expected_log(const Hyperparameter& h, const GammaParams& post) {
  return h.learned ? post.log_mean() : std::log(h.fixed_value);
}

void validate_hyper(const Hyperparameter& h, const char* name) {
  if (!h.prior.valid()) {
    throw ConfigError(std::string("model.") + name + ": Gamma prior shape and rate must be > 0");
  }
  if (!h.learned && !(h.fixed_value > 0.0 && std::isfinite(h.fixed_value))) {
    throw ConfigError(std::string("model.") + name + ": fixed value must be > 0");
  }
}

// E[z z^T] for column n.
Eigen::MatrixXd latent_second_moment(const BpcaPosterior& post, int n) {
  return post.z_covariance[n] + post.z_mean.col(n) * post.z_mean.col(n).transpose();
}

}  // namespace

bool GammaParams::valid() const {
  return std::isfinite(shape) && std::isfinite(rate) && shape > 0.0 && rate > 0.0;
}

double GammaParams::log_mean() const {
  return boost::math::digamma(shape) - std::log(rate);
}

double gamma_kl(const GammaParams& q, const GammaParams& p) {
  return (q.shape - p.shape) * boost::math::digamma(q.shape) - std::lgamma(q.shape) +
         std::lgamma(p.shape) + p.shape * (std::log(q.rate) - std::log(p.rate)) +
         q.shape * (p.rate - q.rate) / q.rate;
}

BpcaModelConfig BpcaModelConfig::with_defaults(int data_dim, int latent_dim) {
  BpcaModelConfig c;
  c.data_dim = data_dim;
  c.latent_dim = latent_dim;
  c.prior_mean_mu = Eigen::VectorXd::Zero(std::max(data_dim, 0));
  c.prior_mean_w = Eigen::MatrixXd::Zero(std::max(data_dim, 0), std::max(latent_dim, 0));
  return c;
}

void BpcaModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("model.latent_dim: must be >= 1");
  if (data_dim < latent_dim) {
    throw ConfigError("model.latent_dim: data dimension " + std::to_string(data_dim) +
                      " is smaller than latent dimension " + std::to_string(latent_dim));
  }
  if (prior_mean_mu.size() != data_dim) throw ConfigError("model: prior_mean_mu has wrong size");
  if (prior_mean_w.rows() != data_dim || prior_mean_w.cols() != latent_dim) {
    throw ConfigError("model: prior_mean_w has wrong shape");
  }
  validate_hyper(tau, "tau");
  validate_hyper(alpha, "alpha");
  validate_hyper(theta, "theta");
}

ObservationMask::ObservationMask(Grid grid) : grid_(std::move(grid)) {
  col_lists_.assign(grid_.cols(), {});
  row_lists_.assign(grid_.rows(), {});
  for (int n = 0; n < cols(); ++n) {
    for (int d = 0; d < rows(); ++d) {
      if (grid_(d, n)) {
        col_lists_[n].push_back(d);
        row_lists_[d].push_back(n);
        ++observed_count_;
      }
    }
    if (col_lists_[n].empty()) {
      throw ConfigError("mask: column " + std::to_string(n) + " has no observed entry");
    }
  }
}

ObservationMask ObservationMask::all_observed(int rows, int cols) {
  return ObservationMask(Grid::Ones(rows, cols));
}

ObservationMask ObservationMask::select_columns(std::span<const int> columns) const {
  Grid sub(grid_.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) sub.col(k) = grid_.col(columns[k]);
  return ObservationMask(std::move(sub));
}

void BpcaPosterior::set_latent(int n, const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& precision) {
  z_mean.col(n) = mean;
  z_precision[n] = precision;
  z_covariance[n] = precision.llt().solve(
      Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
}

void BpcaPosterior::resize_latents(int count, const Eigen::MatrixXd& new_means) {
  const int old = sample_count();
  const int M = latent_dim();
  Eigen::MatrixXd means(M, count);
  const int keep = std::min(old, count);
  means.leftCols(keep) = z_mean.leftCols(keep);
  if (count > old) means.rightCols(count - old) = new_means;
  z_mean = std::move(means);
  z_precision.resize(count, Eigen::MatrixXd::Identity(M, M));
  z_covariance.resize(count, Eigen::MatrixXd::Identity(M, M));
}

Eigen::MatrixXd BpcaPosterior::reconstruction() const {
  Eigen::MatrixXd out = w_mean * z_mean;
  out.colwise() += mu_mean;
  return out;
}

HyperMoments hyper_moments(const BpcaPosterior& post, const BpcaModelConfig& config) {
  HyperMoments h;
  h.tau = expected(config.tau, post.tau);
  h.log_tau = expected_log(config.tau, post.tau);
  h.theta = expected(config.theta, post.theta);
  h.log_theta = expected_log(config.theta, post.theta);
  const int M = post.latent_dim();
  h.alpha.resize(M);
  h.log_alpha.resize(M);
  for (int m = 0; m < M; ++m) {
    h.alpha(m) = expected(config.alpha, post.alpha[m]);
    h.log_alpha(m) = expected_log(config.alpha, post.alpha[m]);
  }
  return h;
}

BpcaPosterior init_posterior(const BpcaModelConfig& config, int sample_count,
                             std::uint64_t seed) {
  config.validate();
  const int D = config.data_dim;
  const int M = config.latent_dim;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  BpcaPosterior post;
  post.mu_mean.resize(D);
  for (int d = 0; d < D; ++d) post.mu_mean(d) = unit(rng);
  post.mu_var = Eigen::VectorXd::Ones(D);
  post.w_mean.resize(D, M);
  for (int d = 0; d < D; ++d)
    for (int m = 0; m < M; ++m) post.w_mean(d, m) = unit(rng);
  post.w_var = Eigen::MatrixXd::Ones(D, M);
  post.z_mean.resize(M, sample_count);
  for (int n = 0; n < sample_count; ++n)
    for (int m = 0; m < M; ++m) post.z_mean(m, n) = unit(rng);
  post.z_precision.assign(sample_count, Eigen::MatrixXd::Identity(M, M));
  post.z_covariance.assign(sample_count, Eigen::MatrixXd::Identity(M, M));
  post.tau = config.tau.prior;
  post.alpha.assign(M, config.alpha.prior);
  post.theta = config.theta.prior;
  return post;
}

LatentMoments update_latent(const Eigen::Ref<const Eigen::VectorXd>& x_n,
                            std::span<const int> observed_rows, const BpcaPosterior& post,
                            double tau_mean) {
  const int M = post.latent_dim();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(M, M);
  Eigen::VectorXd proj = Eigen::VectorXd::Zero(M);
  Eigen::VectorXd var_sum = Eigen::VectorXd::Zero(M);
  for (int d : observed_rows) {
    const auto w_row = post.w_mean.row(d).transpose();
    gram.selfadjointView<Eigen::Lower>().rankUpdate(w_row);
    var_sum += post.w_var.row(d).transpose();
    proj += w_row * (x_n(d) - post.mu_mean(d));
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal() += var_sum;

  LatentMoments out;
  out.precision = Eigen::MatrixXd::Identity(M, M) + tau_mean * gram;
  out.mean = tau_mean * out.precision.llt().solve(proj);
  return out;
}

void update_latents(const Eigen::MatrixXd& data, const ObservationMask& mask,
                    BpcaPosterior& post, const BpcaModelConfig& config) {
  const double tau = expected(config.tau, post.tau);
  const int N = post.sample_count();
  const int M = post.latent_dim();
  if (mask.complete()) {
    // Shared precision: I + tau (M^T M + sum_d diag(var_d)).
    Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(M, M);
    Eigen::MatrixXd gram = post.w_mean.transpose() * post.w_mean;
    gram.diagonal() += post.w_var.colwise().sum().transpose();
    precision += tau * gram;
    const Eigen::LLT<Eigen::MatrixXd> llt(precision);
    const Eigen::MatrixXd covariance = llt.solve(Eigen::MatrixXd::Identity(M, M));
    const Eigen::MatrixXd centered = data.colwise() - post.mu_mean;
    post.z_mean = tau * llt.solve(post.w_mean.transpose() * centered);
    for (int n = 0; n < N; ++n) {
      post.z_precision[n] = precision;
      post.z_covariance[n] = covariance;
    }
    return;
  }
  for (int n = 0; n < N; ++n) {
    const auto& rows = mask.observed_rows(n);
    LatentMoments z = update_latent(data.col(n), rows, post, tau);
    post.set_latent(n, z.mean, z.precision);
  }
}

namespace detail {

CoordinateStats mu_coordinate(const Eigen::MatrixXd& data, const ObservationMask& mask,
                              const BpcaPosterior& post, const HyperMoments& hyper,
                              const BpcaModelConfig& config, int d, double global_weight) {
  double residual_sum = 0.0;
  const auto& cols = mask.observed_cols(d);
  const auto w_row = post.w_mean.row(d);
  for (int n : cols) residual_sum += data(d, n) - w_row.dot(post.z_mean.col(n));
  const double prior_precision = global_weight * hyper.theta;
  return {hyper.tau * static_cast<double>(cols.size()) + prior_precision,
          hyper.tau * residual_sum + prior_precision * config.prior_mean_mu(d)};
}

LatentSecondMoments::LatentSecondMoments(const ObservationMask& mask,
                                         const BpcaPosterior& post)
    : shared_(mask.complete()) {
  const int N = post.sample_count();
  const int M = post.latent_dim();
  if (shared_) {
    total_ = post.z_mean * post.z_mean.transpose();
    for (int n = 0; n < N; ++n) total_ += post.z_covariance[n];
    return;
  }
  per_column_.reserve(N);
  for (int n = 0; n < N; ++n) per_column_.push_back(latent_second_moment(post, n));
  (void)M;
}

RowMoments LatentSecondMoments::row(const Eigen::MatrixXd& data, const ObservationMask& mask,
                                    const BpcaPosterior& post, int d) const {
  const int M = post.latent_dim();
  RowMoments out{Eigen::MatrixXd::Zero(M, M), Eigen::VectorXd::Zero(M)};
  const auto& cols = mask.observed_cols(d);
  const double mu = post.mu_mean(d);
  for (int n : cols) out.cross += (data(d, n) - mu) * post.z_mean.col(n);
  if (shared_) {
    out.second = total_;
  } else {
    for (int n : cols) out.second += per_column_[n];
  }
  return out;
}

CoordinateStats w_coordinate(const RowMoments& row, const BpcaPosterior& post,
                             const HyperMoments& hyper, const BpcaModelConfig& config,
                             int d, int m, double global_weight) {
  double coupling = 0.0;
  for (int k = 0; k < post.latent_dim(); ++k) {
    if (k != m) coupling += row.second(m, k) * post.w_mean(d, k);
  }
  const double prior_precision = global_weight * hyper.alpha(m);
  return {hyper.tau * row.second(m, m) + prior_precision,
          hyper.tau * (row.cross(m) - coupling) + prior_precision * config.prior_mean_w(d, m)};
}

}  // namespace detail

void update_global_central(const Eigen::MatrixXd& data, const ObservationMask& mask,
                           BpcaPosterior& post, const BpcaModelConfig& config,
                           double global_weight) {
  const HyperMoments hyper = hyper_moments(post, config);
  const int D = post.data_dim();
  const int M = post.latent_dim();
  for (int d = 0; d < D; ++d) {
    const auto stats = detail::mu_coordinate(data, mask, post, hyper, config, d, global_weight);
    post.mu_mean(d) = stats.rhs / stats.precision;
    post.mu_var(d) = clamp_variance(global_weight / stats.precision);
  }
  const detail::LatentSecondMoments moments(mask, post);
  for (int d = 0; d < D; ++d) {
    const auto row = moments.row(data, mask, post, d);
    for (int m = 0; m < M; ++m) {
      const auto stats = detail::w_coordinate(row, post, hyper, config, d, m, global_weight);
      post.w_mean(d, m) = stats.rhs / stats.precision;
      post.w_var(d, m) = clamp_variance(global_weight / stats.precision);
    }
  }
}

double expected_squared_residual(const Eigen::MatrixXd& data, const ObservationMask& mask,
                                 const BpcaPosterior& post) {
  const int N = post.sample_count();
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const auto z = post.z_mean.col(n);
    const Eigen::MatrixXd& cov = post.z_covariance[n];
    const Eigen::VectorXd second_diag = cov.diagonal() + z.cwiseAbs2();
    for (int d : mask.observed_rows(n)) {
      const auto w = post.w_mean.row(d);
      const double r = data(d, n) - w.dot(z) - post.mu_mean(d);
      total += r * r + w * cov * w.transpose() + post.w_var.row(d).dot(second_diag) +
               post.mu_var(d);
    }
  }
  return total;
}

void update_hyperparams(const Eigen::MatrixXd& data, const ObservationMask& mask,
                        BpcaPosterior& post, const BpcaModelConfig& config) {
  const int D = post.data_dim();
  const int M = post.latent_dim();
  if (config.tau.learned) {
    post.tau.shape = config.tau.prior.shape + 0.5 * static_cast<double>(mask.observed_count());
    post.tau.rate = config.tau.prior.rate + 0.5 * expected_squared_residual(data, mask, post);
  }
  if (config.alpha.learned) {
    for (int m = 0; m < M; ++m) {
      const double ss = (post.w_mean.col(m) - config.prior_mean_w.col(m)).squaredNorm() +
                        post.w_var.col(m).sum();
      post.alpha[m].shape = config.alpha.prior.shape + 0.5 * D;
      post.alpha[m].rate = config.alpha.prior.rate + 0.5 * ss;
    }
  }
  if (config.theta.learned) {
    const double ss = (post.mu_mean - config.prior_mean_mu).squaredNorm() + post.mu_var.sum();
    post.theta.shape = config.theta.prior.shape + 0.5 * D;
    post.theta.rate = config.theta.prior.rate + 0.5 * ss;
  }
}

double compute_elbo(const Eigen::MatrixXd& data, const ObservationMask& mask,
                    const BpcaPosterior& post, const BpcaModelConfig& config,
                    double global_weight) {
  const HyperMoments h = hyper_moments(post, config);
  const int D = post.data_dim();
  const int M = post.latent_dim();
  const int N = post.sample_count();

  const double count = static_cast<double>(mask.observed_count());
  double elbo = count * 0.5 * (h.log_tau - kLog2Pi) -
                0.5 * h.tau * expected_squared_residual(data, mask, post);

  // Latent prior + entropy: -1/2 tr E[zz^T] - 1/2 ln|Lambda| + M/2.
  for (int n = 0; n < N; ++n) {
    const Eigen::LLT<Eigen::MatrixXd> llt(post.z_precision[n]);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double trace = post.z_covariance[n].trace() + post.z_mean.col(n).squaredNorm();
    elbo += -0.5 * trace - 0.5 * log_det + 0.5 * M;
  }

  double global = 0.0;
  for (int d = 0; d < D; ++d) {
    for (int m = 0; m < M; ++m) {
      const double dev = post.w_mean(d, m) - config.prior_mean_w(d, m);
      const double v = post.w_var(d, m);
      global += 0.5 * h.log_alpha(m) - 0.5 * h.alpha(m) * (dev * dev + v) + 0.5 * std::log(v) + 0.5;
    }
    const double dev = post.mu_mean(d) - config.prior_mean_mu(d);
    const double v = post.mu_var(d);
    global += 0.5 * h.log_theta - 0.5 * h.theta * (dev * dev + v) + 0.5 * std::log(v) + 0.5;
  }
  if (config.alpha.learned) {
    for (int m = 0; m < M; ++m) global -= gamma_kl(post.alpha[m], config.alpha.prior);
  }
  if (config.theta.learned) global -= gamma_kl(post.theta, config.theta.prior);
  elbo += global_weight * global;

  if (config.tau.learned) elbo -= gamma_kl(post.tau, config.tau.prior);
  return elbo;
}

FitResult fit_centralized(const Eigen::MatrixXd& data, const ObservationMask& mask,
                          const BpcaModelConfig& config, const FitOptions& options) {
  return fit_centralized(data, mask, config, options,
                         init_posterior(config, static_cast<int>(data.cols()), options.seed));
}

FitResult fit_centralized(const Eigen::MatrixXd& data, const ObservationMask& mask,
                          const BpcaModelConfig& config, const FitOptions& options,
                          BpcaPosterior initial) {
  config.validate();
  if (data.rows() != config.data_dim) throw ConfigError("data: row count does not match model");
  if (mask.rows() != data.rows() || mask.cols() != data.cols()) {
    throw ConfigError("mask: shape does not match data");
  }
  if (!(options.tol > 0.0)) throw ConfigError("solver.tol: must be > 0");
  if (initial.sample_count() != data.cols()) throw ConfigError("initial posterior has wrong size");

  FitResult result;
  result.posterior = std::move(initial);
  BpcaPosterior& post = result.posterior;
  const auto start = std::chrono::steady_clock::now();
  double previous = 0.0;
  for (int it = 1; it <= options.max_iter; ++it) {
    update_latents(data, mask, post, config);
    update_global_central(data, mask, post, config);
    update_hyperparams(data, mask, post, config);
    const double objective = -compute_elbo(data, mask, post, config);
    if (!std::isfinite(objective)) {
      throw DivergenceError("centralised fit: non-finite objective at iteration " +
                            std::to_string(it));
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.trace.rows.push_back({it, objective, 0.0, 0.0, ms});
    result.iterations = it;
    if (it > 1 && std::abs(objective - previous) <= options.tol * std::abs(previous)) {
      result.converged = true;
      break;
    }
    previous = objective;
  }
  return result;
}

}  // namespace dmfvi
