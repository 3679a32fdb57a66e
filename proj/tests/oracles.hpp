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


// Test-side reference computations. Nothing here calls the library's
// update or bound code; the oracles work from the model densities directly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dmfvi/bpca.hpp"

namespace oracle {

// Golden-section search on [lo, hi] for a unimodal f.
inline double golden_section(const std::function<double(double)>& f, double lo, double hi,
                             double tol = 1e-12) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// Global minimiser on [lo, hi]: a dense scan (log-spaced when `log_scale`)
// picks the bracket, golden section refines it.
inline double scan_then_golden(const std::function<double(double)>& f, double lo, double hi,
                               bool log_scale, int grid = 4000) {
  auto at = [&](int k) {
    const double t = static_cast<double>(k) / grid;
    return log_scale ? std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)))
                     : lo + t * (hi - lo);
  };
  int best = 0;
  double best_value = f(at(0));
  for (int k = 1; k <= grid; ++k) {
    const double v = f(at(k));
    if (v < best_value) {
      best_value = v;
      best = k;
    }
  }
  const double a = at(std::max(best - 1, 0));
  const double b = at(std::min(best + 1, grid));
  if (log_scale) {
    const double u = golden_section([&](double t) { return f(std::exp(t)); }, std::log(a),
                                    std::log(b), 1e-14);
    return std::exp(u);
  }
  return golden_section(f, a, b, 1e-14);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<int> order(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mid;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - mx);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - mx) * (ry[i] - mx);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double log_normal(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - d * d / (2.0 * variance);
}

inline double log_gamma_density(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// Monte Carlo estimate of E_q[log p(X, Z, W, mu, tau, alpha, theta) - log q]
// over the observed entries. Fixed hyperparameters enter as point masses.
inline Estimate monte_carlo_elbo(const Eigen::MatrixXd& data, const dmfvi::ObservationMask& mask,
                                 const dmfvi::BpcaPosterior& q,
                                 const dmfvi::BpcaModelConfig& config, long samples,
                                 std::uint64_t seed) {
  const int D = q.data_dim(), M = q.latent_dim(), N = q.sample_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  auto draw_gamma = [&](const dmfvi::GammaParams& g) {
    std::gamma_distribution<double> dist(g.shape, 1.0 / g.rate);
    return dist(rng);
  };
  std::vector<Eigen::MatrixXd> chol(N);
  for (int n = 0; n < N; ++n) chol[n] = Eigen::LLT<Eigen::MatrixXd>(q.z_covariance[n]).matrixL();

  double sum = 0.0, sum_sq = 0.0;
  Eigen::MatrixXd z(M, N), w(D, M);
  Eigen::VectorXd mu(D), alpha(M), eps(M);
  for (long s = 0; s < samples; ++s) {
    double log_p = 0.0, log_q = 0.0;

    double tau = config.tau.fixed_value;
    if (config.tau.learned) {
      tau = draw_gamma(q.tau);
      log_q += log_gamma_density(tau, q.tau.shape, q.tau.rate);
      log_p += log_gamma_density(tau, config.tau.prior.shape, config.tau.prior.rate);
    }
    for (int m = 0; m < M; ++m) {
      alpha(m) = config.alpha.fixed_value;
      if (config.alpha.learned) {
        alpha(m) = draw_gamma(q.alpha[m]);
        log_q += log_gamma_density(alpha(m), q.alpha[m].shape, q.alpha[m].rate);
        log_p += log_gamma_density(alpha(m), config.alpha.prior.shape, config.alpha.prior.rate);
      }
    }
    double theta = config.theta.fixed_value;
    if (config.theta.learned) {
      theta = draw_gamma(q.theta);
      log_q += log_gamma_density(theta, q.theta.shape, q.theta.rate);
      log_p += log_gamma_density(theta, config.theta.prior.shape, config.theta.prior.rate);
    }

    for (int d = 0; d < D; ++d) {
      mu(d) = q.mu_mean(d) + std::sqrt(q.mu_var(d)) * std_normal(rng);
      log_q += log_normal(mu(d), q.mu_mean(d), q.mu_var(d));
      log_p += log_normal(mu(d), config.prior_mean_mu(d), 1.0 / theta);
      for (int m = 0; m < M; ++m) {
        w(d, m) = q.w_mean(d, m) + std::sqrt(q.w_var(d, m)) * std_normal(rng);
        log_q += log_normal(w(d, m), q.w_mean(d, m), q.w_var(d, m));
        log_p += log_normal(w(d, m), config.prior_mean_w(d, m), 1.0 / alpha(m));
      }
    }

    for (int n = 0; n < N; ++n) {
      for (int m = 0; m < M; ++m) eps(m) = std_normal(rng);
      z.col(n) = q.z_mean.col(n) + chol[n] * eps;
      // log N(z | m, Sigma) = -M/2 ln 2pi - 1/2 ln|Sigma| - 1/2 |eps|^2.
      const double log_det = 2.0 * chol[n].diagonal().array().log().sum();
      log_q += -0.5 * M * std::log(2.0 * std::numbers::pi) - 0.5 * log_det - 0.5 * eps.squaredNorm();
      for (int m = 0; m < M; ++m) log_p += log_normal(z(m, n), 0.0, 1.0);
    }

    for (int n = 0; n < N; ++n) {
      for (int d = 0; d < D; ++d) {
        if (!mask.observed(d, n)) continue;
        log_p += log_normal(data(d, n), w.row(d).dot(z.col(n)) + mu(d), 1.0 / tau);
      }
    }

    const double value = log_p - log_q;
    sum += value;
    sum_sq += value * value;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = (sum_sq / n - mean * mean) * n / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

}  // namespace oracle
