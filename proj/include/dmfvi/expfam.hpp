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

#include <array>
#include <atomic>
#include <cstdint>

namespace dmfvi {

// Univariate Gaussian in moment form.
struct GaussianParams {
  double mean = 0.0;
  double variance = 1.0;

  bool valid() const;
};

// Minimal natural parameterisation: eta1 = mean / variance,
// eta2 = -1 / (2 variance).
struct NaturalParams {
  double eta1 = 0.0;
  double eta2 = -0.5;

  bool valid() const;
};

inline constexpr double kVarianceFloor = 1e-12;

NaturalParams to_natural(const GaussianParams& p);
GaussianParams to_moment(const NaturalParams& n);

/// Log-partition A(eta) = -eta1^2 / (4 eta2) - 1/2 ln(-2 eta2).
///
/// The -1/2 ln(2 pi) constant is absorbed into the base measure. Every
/// divergence built on A is unaffected by that choice. Throws DomainError
/// when eta2 >= 0.
double log_partition(const NaturalParams& n);

/// Gradient of A: the expected sufficient statistics (E[x], E[x^2]).
std::array<double, 2> log_partition_gradient(const NaturalParams& n);

/// KL(p || q) in closed form.
double gaussian_kl(const GaussianParams& p, const GaussianParams& q);

/// B_A(lhs, rhs) = A(lhs) - A(rhs) - <lhs - rhs, grad A(rhs)>.
/// Equals KL(P_rhs || P_lhs).
double bregman_divergence(const NaturalParams& lhs, const NaturalParams& rhs);

// Counts how many times clamp_variance had to raise a value to the floor.
// Process-wide and monotone; tests read deltas.
std::uint64_t variance_clamp_count();

double clamp_variance(double v);

}  // namespace dmfvi
