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

#include "dmfvi/expfam.hpp"

#include <cmath>
#include <string>

#include "dmfvi/errors.hpp"

namespace dmfvi {
namespace {

std::atomic<std::uint64_t> g_clamp_count{0};

void require_valid(const GaussianParams& p, const char* what) {
  if (!p.valid()) {
    throw DomainError(std::string(what) + ": invalid Gaussian (mean " +
                      std::to_string(p.mean) + ", variance " +
                      std::to_string(p.variance) + ")");
  }
}

void require_valid(const NaturalParams& n, const char* what) {
  if (!n.valid()) {
    throw DomainError(std::string(what) + ": natural parameter eta2 must be "
                      "negative and finite, got " + std::to_string(n.eta2));
  }
}

}  // namespace

bool GaussianParams::valid() const {
  return std::isfinite(mean) && std::isfinite(variance) && variance > 0.0;
}

bool NaturalParams::valid() const {
  return std::isfinite(eta1) && std::isfinite(eta2) && eta2 < 0.0;
}

NaturalParams to_natural(const GaussianParams& p) {
  require_valid(p, "to_natural");
  return {p.mean / p.variance, -0.5 / p.variance};
}

GaussianParams to_moment(const NaturalParams& n) {
  require_valid(n, "to_moment");
  const double variance = -0.5 / n.eta2;
  return {n.eta1 * variance, variance};
}

double log_partition(const NaturalParams& n) {
  require_valid(n, "log_partition");
  return -n.eta1 * n.eta1 / (4.0 * n.eta2) - 0.5 * std::log(-2.0 * n.eta2);
}

std::array<double, 2> log_partition_gradient(const NaturalParams& n) {
  const GaussianParams p = to_moment(n);
  return {p.mean, p.mean * p.mean + p.variance};
}

double gaussian_kl(const GaussianParams& p, const GaussianParams& q) {
  require_valid(p, "gaussian_kl");
  require_valid(q, "gaussian_kl");
  const double diff = p.mean - q.mean;
  const double ratio = p.variance / q.variance;
  // log1p keeps precision when the variances are nearly equal.
  return diff * diff / (2.0 * q.variance) +
         0.5 * (ratio - 1.0 - std::log1p(ratio - 1.0));
}

double bregman_divergence(const NaturalParams& lhs, const NaturalParams& rhs) {
  require_valid(lhs, "bregman_divergence");
  require_valid(rhs, "bregman_divergence");
  const auto grad = log_partition_gradient(rhs);
  return log_partition(lhs) - log_partition(rhs) -
         (lhs.eta1 - rhs.eta1) * grad[0] - (lhs.eta2 - rhs.eta2) * grad[1];
}

std::uint64_t variance_clamp_count() { return g_clamp_count.load(); }

double clamp_variance(double v) {
  if (!(v >= kVarianceFloor)) {
    g_clamp_count.fetch_add(1, std::memory_order_relaxed);
    return kVarianceFloor;
  }
  return v;
}

}  // namespace dmfvi
