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

#include "dmfvi/badmm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <thread>

#include <boost/math/tools/minima.hpp>

#include "dmfvi/errors.hpp"

namespace dmfvi {
namespace {

constexpr double kVarianceCeiling = 1e6;

struct PairValue {
  double rho;
  double phi;
};

double variance_objective(double a2, double a1, double a0, double x) {
  return a2 * x + a1 * std::log(x) - a0 / x;
}

// Penalised scalar update shared by every mu and W entry of a node.
//
// The node's restricted augmented Lagrangian in (m, v) is
//   stats.precision/2 (m^2 + v) - stats.rhs m - weight/2 ln v
//   + dual_mean m + dual_var v
//   + eta sum_k KL(N(rho_k, phi_k) || N(m, v))
// with k running over all incident ordered pairs. The variance is searched in
// (floor, ceiling] where the caller passes the prior variance: without
// penalties the update can never exceed it.
void penalised_update(const detail::CoordinateStats& stats, double weight, double eta,
                      double dual_mean, double dual_var, const std::vector<PairValue>& pairs,
                      double ceiling, double& mean, double& variance,
                      SolverDiagnostics* diag) {
  const double count = static_cast<double>(pairs.size());
  double sum_rho = 0.0;
  for (const auto& p : pairs) sum_rho += p.rho;
  const double v = variance;
  mean = (stats.rhs - dual_mean + eta / v * sum_rho) / (stats.precision + eta * count / v);

  double spread = 0.0;
  for (const auto& p : pairs) {
    const double diff = mean - p.rho;
    spread += p.phi + diff * diff;
  }
  variance = minimize_variance_objective(stats.precision + 2.0 * dual_var,
                                         eta * count - weight, -eta * spread, ceiling, diag);
}

template <typename Fn>
void for_each_parallel(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&fn, t, threads, count] {
      for (int i = t; i < count; i += threads) fn(i);
    });
  }
}

void max_abs(double& acc, double value) { acc = std::max(acc, std::abs(value)); }

}  // namespace

void SolverConfig::validate() const {
  if (!(eta > 0.0)) throw ConfigError("solver.eta: must be > 0");
  if (!(tol > 0.0)) throw ConfigError("solver.tol: must be > 0");
  if (max_iter < 1) throw ConfigError("solver.max_iter: must be >= 1");
  if (!(consensus_tol > 0.0)) throw ConfigError("solver.consensus_tol: must be > 0");
  if (threads < 1) throw ConfigError("solver.threads: must be >= 1");
}

EdgeDuals EdgeDuals::zeros(int data_dim, int latent_dim) {
  EdgeDuals d;
  d.gamma_mu_1 = d.gamma_mu_2 = d.beta_mu_1 = d.beta_mu_2 = Eigen::VectorXd::Zero(data_dim);
  d.gamma_w_1 = d.gamma_w_2 = d.beta_w_1 = d.beta_w_2 =
      Eigen::MatrixXd::Zero(data_dim, latent_dim);
  return d;
}

std::optional<double> solve_stationarity_quadratic(double a2, double a1, double a0,
                                                   double floor) {
  if (!std::isfinite(a2) || !std::isfinite(a1) || !std::isfinite(a0)) return std::nullopt;
  if (a2 == 0.0) {
    if (a1 == 0.0) return std::nullopt;
    const double root = -a0 / a1;
    if (root > floor) return root;
    return std::nullopt;
  }
  const double disc = a1 * a1 - 4.0 * a2 * a0;
  if (disc < 0.0) return std::nullopt;
  // Cancellation-free pair of roots.
  const double q = -0.5 * (a1 + std::copysign(std::sqrt(disc), a1));
  double roots[2] = {q / a2, q != 0.0 ? a0 / q : std::numeric_limits<double>::quiet_NaN()};
  std::optional<double> best;
  double best_value = std::numeric_limits<double>::infinity();
  for (double r : roots) {
    if (!(r > floor) || !std::isfinite(r)) continue;
    const double value = variance_objective(a2, a1, a0, r);
    if (!best || value < best_value) {
      best = r;
      best_value = value;
    }
  }
  return best;
}

double minimize_variance_objective(double a2, double a1, double a0, double ceiling,
                                   SolverDiagnostics* diag) {
  if (!std::isfinite(a2) || !std::isfinite(a1) || !std::isfinite(a0) || !(ceiling > 0.0)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  ceiling = std::clamp(ceiling, 2.0 * kVarianceFloor, kVarianceCeiling);
  const auto root = solve_stationarity_quadratic(a2, a1, a0, kVarianceFloor);
  const double at_ceiling = variance_objective(a2, a1, a0, ceiling);
  if (root && *root <= ceiling && !(at_ceiling < variance_objective(a2, a1, a0, *root))) {
    return *root;
  }
  if (diag) ++diag->quadratic_fallbacks;
  const auto in_log = [=](double u) { return variance_objective(a2, a1, a0, std::exp(u)); };
  std::uintmax_t max_iter = 500;
  const auto [u, value] = boost::math::tools::brent_find_minima(
      in_log, std::log(kVarianceFloor), std::log(ceiling), 52, max_iter);
  if (at_ceiling < value) return ceiling;
  return clamp_variance(std::exp(u));
}

namespace {

// Incident ordered pairs of node i as (out, in): (i, j) where i is the first
// endpoint and (j, i) where it is the second.
std::vector<std::pair<int, int>> incident_pairs(const NetworkGraph& graph, int i) {
  std::vector<std::pair<int, int>> incident;
  for (int k = 0; k < static_cast<int>(graph.neighbors(i).size()); ++k) {
    const int out = graph.pair_id(i, k);
    incident.emplace_back(out, graph.reverse_pair(out));
  }
  return incident;
}

}  // namespace

namespace detail {

void update_mu_entry(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                     const DualState& duals, const BpcaModelConfig& config,
                     const HyperMoments& hyper, double eta, int d, SolverDiagnostics* diag) {
  BpcaPosterior& post = node.posterior;
  const double weight = global_weight(graph);
  const auto stats = mu_coordinate(node.data, node.mask, post, hyper, config, d, weight);
  double dual_mean = 0.0;
  double dual_var = 0.0;
  std::vector<PairValue> pairs;
  for (const auto& [out, in] : incident_pairs(graph, node.node_id)) {
    dual_mean += duals[out].gamma_mu_1(d) - duals[in].gamma_mu_2(d);
    dual_var += duals[out].beta_mu_1(d) - duals[in].beta_mu_2(d);
    pairs.push_back({aux[out].rho_mu(d), aux[out].phi_mu(d)});
    pairs.push_back({aux[in].rho_mu(d), aux[in].phi_mu(d)});
  }
  penalised_update(stats, weight, eta, dual_mean, dual_var, pairs, 1.0 / hyper.theta,
                   post.mu_mean(d), post.mu_var(d), diag);
}

void update_w_entry(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                    const DualState& duals, const BpcaModelConfig& config,
                    const HyperMoments& hyper, const RowMoments& row, double eta, int d, int m,
                    SolverDiagnostics* diag) {
  BpcaPosterior& post = node.posterior;
  const double weight = global_weight(graph);
  const auto stats = w_coordinate(row, post, hyper, config, d, m, weight);
  double dual_mean = 0.0;
  double dual_var = 0.0;
  std::vector<PairValue> pairs;
  for (const auto& [out, in] : incident_pairs(graph, node.node_id)) {
    dual_mean += duals[out].gamma_w_1(d, m) - duals[in].gamma_w_2(d, m);
    dual_var += duals[out].beta_w_1(d, m) - duals[in].beta_w_2(d, m);
    pairs.push_back({aux[out].rho_w(d, m), aux[out].phi_w(d, m)});
    pairs.push_back({aux[in].rho_w(d, m), aux[in].phi_w(d, m)});
  }
  penalised_update(stats, weight, eta, dual_mean, dual_var, pairs, 1.0 / hyper.alpha(m),
                   post.w_mean(d, m), post.w_var(d, m), diag);
}

void aux_entry(double mi, double vi, double mj, double vj, double g1, double g2, double b1,
               double b2, double eta, double ceiling, double& rho, double& phi,
               SolverDiagnostics* diag) {
  rho = 0.5 * (mi + mj) - phi * (g2 - g1) / (2.0 * eta);
  const double di = mi - rho;
  const double dj = mj - rho;
  const double spread = vi + di * di + vj + dj * dj;
  phi = minimize_variance_objective(b2 - b1, eta, -0.5 * eta * spread, ceiling, diag);
}

}  // namespace detail

void local_update_phase(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                        const DualState& duals, const BpcaModelConfig& config, double eta,
                        SolverDiagnostics* diag) {
  BpcaPosterior& post = node.posterior;
  update_latents(node.data, node.mask, post, config);
  const HyperMoments hyper = hyper_moments(post, config);
  for (int d = 0; d < post.data_dim(); ++d) {
    detail::update_mu_entry(node, graph, aux, duals, config, hyper, eta, d, diag);
  }
  const detail::LatentSecondMoments moments(node.mask, post);
  for (int d = 0; d < post.data_dim(); ++d) {
    const auto row = moments.row(node.data, node.mask, post, d);
    for (int m = 0; m < post.latent_dim(); ++m) {
      detail::update_w_entry(node, graph, aux, duals, config, hyper, row, eta, d, m, diag);
    }
  }
  update_hyperparams(node.data, node.mask, post, config);
}


void aux_update_phase(const std::vector<NodeState>& nodes, const NetworkGraph& graph,
                      EdgeAuxState& aux, const DualState& duals, const BpcaModelConfig& config,
                      double eta, SolverDiagnostics* diag) {
  std::vector<HyperMoments> hyper;
  hyper.reserve(nodes.size());
  for (const auto& node : nodes) hyper.push_back(hyper_moments(node.posterior, config));

  for (int p = 0; p < graph.ordered_pair_count(); ++p) {
    const int from = graph.pair_from(p);
    const int to = graph.pair_to(p);
    const BpcaPosterior& a = nodes[from].posterior;
    const BpcaPosterior& b = nodes[to].posterior;
    const EdgeDuals& y = duals[p];
    EdgeAux& x = aux[p];
    const double mu_ceiling = 1.0 / std::min(hyper[from].theta, hyper[to].theta);
    for (int d = 0; d < a.data_dim(); ++d) {
      detail::aux_entry(a.mu_mean(d), a.mu_var(d), b.mu_mean(d), b.mu_var(d), y.gamma_mu_1(d),
                y.gamma_mu_2(d), y.beta_mu_1(d), y.beta_mu_2(d), eta, mu_ceiling, x.rho_mu(d),
                x.phi_mu(d), diag);
    }
    for (int d = 0; d < a.data_dim(); ++d) {
      for (int m = 0; m < a.latent_dim(); ++m) {
        const double w_ceiling = 1.0 / std::min(hyper[from].alpha(m), hyper[to].alpha(m));
        detail::aux_entry(a.w_mean(d, m), a.w_var(d, m), b.w_mean(d, m), b.w_var(d, m),
                  y.gamma_w_1(d, m), y.gamma_w_2(d, m), y.beta_w_1(d, m), y.beta_w_2(d, m), eta,
                  w_ceiling, x.rho_w(d, m), x.phi_w(d, m), diag);
      }
    }
  }
}

void dual_update_phase(const std::vector<NodeState>& nodes, const NetworkGraph& graph,
                       const EdgeAuxState& aux, DualState& duals, double eta) {
  for (int p = 0; p < graph.ordered_pair_count(); ++p) {
    const BpcaPosterior& a = nodes[graph.pair_from(p)].posterior;
    const BpcaPosterior& b = nodes[graph.pair_to(p)].posterior;
    const EdgeAux& x = aux[p];
    EdgeDuals& y = duals[p];
    y.gamma_mu_1 += eta * (a.mu_mean - x.rho_mu);
    y.gamma_mu_2 += eta * (x.rho_mu - b.mu_mean);
    y.beta_mu_1 += eta * (a.mu_var - x.phi_mu);
    y.beta_mu_2 += eta * (x.phi_mu - b.mu_var);
    y.gamma_w_1 += eta * (a.w_mean - x.rho_w);
    y.gamma_w_2 += eta * (x.rho_w - b.w_mean);
    y.beta_w_1 += eta * (a.w_var - x.phi_w);
    y.beta_w_2 += eta * (x.phi_w - b.w_var);
  }
}

ConsensusResidual consensus_residual(const std::vector<NodeState>& nodes,
                                     const NetworkGraph& graph, const EdgeAuxState& aux) {
  ConsensusResidual out;
  for (int p = 0; p < graph.ordered_pair_count(); ++p) {
    const BpcaPosterior& a = nodes[graph.pair_from(p)].posterior;
    const BpcaPosterior& b = nodes[graph.pair_to(p)].posterior;
    const EdgeAux& x = aux[p];
    max_abs(out.primal, (a.mu_mean - x.rho_mu).cwiseAbs().maxCoeff());
    max_abs(out.primal, (x.rho_mu - b.mu_mean).cwiseAbs().maxCoeff());
    max_abs(out.primal, (a.mu_var - x.phi_mu).cwiseAbs().maxCoeff());
    max_abs(out.primal, (x.phi_mu - b.mu_var).cwiseAbs().maxCoeff());
    max_abs(out.primal, (a.w_mean - x.rho_w).cwiseAbs().maxCoeff());
    max_abs(out.primal, (x.rho_w - b.w_mean).cwiseAbs().maxCoeff());
    max_abs(out.primal, (a.w_var - x.phi_w).cwiseAbs().maxCoeff());
    max_abs(out.primal, (x.phi_w - b.w_var).cwiseAbs().maxCoeff());
  }

  // Scale of each family: largest magnitude over all nodes.
  double scale[4] = {0.0, 0.0, 0.0, 0.0};
  for (const auto& node : nodes) {
    const BpcaPosterior& q = node.posterior;
    max_abs(scale[0], q.mu_mean.cwiseAbs().maxCoeff());
    max_abs(scale[1], q.mu_var.cwiseAbs().maxCoeff());
    max_abs(scale[2], q.w_mean.cwiseAbs().maxCoeff());
    max_abs(scale[3], q.w_var.cwiseAbs().maxCoeff());
  }
  double gap[4] = {0.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < graph.node_count(); ++i) {
    for (int j : graph.neighbors(i)) {
      if (j < i) continue;
      const BpcaPosterior& a = nodes[i].posterior;
      const BpcaPosterior& b = nodes[j].posterior;
      max_abs(gap[0], (a.mu_mean - b.mu_mean).cwiseAbs().maxCoeff());
      max_abs(gap[1], (a.mu_var - b.mu_var).cwiseAbs().maxCoeff());
      max_abs(gap[2], (a.w_mean - b.w_mean).cwiseAbs().maxCoeff());
      max_abs(gap[3], (a.w_var - b.w_var).cwiseAbs().maxCoeff());
    }
  }
  for (int f = 0; f < 4; ++f) {
    out.max_edge_gap = std::max(out.max_edge_gap, gap[f]);
    if (gap[f] > 0.0) {
      out.relative_gap = std::max(out.relative_gap, gap[f] / std::max(scale[f], 1e-300));
    }
  }
  return out;
}

std::uint64_t node_seed(std::uint64_t seed, int node) {
  return seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(node);
}

DistributedSolver::DistributedSolver(NetworkGraph graph, std::vector<NodeState> nodes,
                                     BpcaModelConfig config, SolverConfig solver)
    : graph_(std::move(graph)),
      nodes_(std::move(nodes)),
      config_(std::move(config)),
      solver_(solver) {
  config_.validate();
  solver_.validate();
  if (static_cast<int>(nodes_.size()) != graph_.node_count()) {
    throw ConfigError("partition: node count does not match the network");
  }
  const int D = config_.data_dim;
  const int M = config_.latent_dim;
  for (int i = 0; i < graph_.node_count(); ++i) {
    const NodeState& node = nodes_[i];
    if (node.node_id != i) throw ConfigError("node ids must be 0..|V|-1 in order");
    if (node.data.rows() != D || node.posterior.data_dim() != D ||
        node.posterior.latent_dim() != M || node.posterior.sample_count() != node.data.cols() ||
        node.mask.rows() != D || node.mask.cols() != node.data.cols()) {
      throw ConfigError("node " + std::to_string(i) + ": inconsistent dimensions");
    }
    if (node.data.cols() == 0) throw ConfigError("node " + std::to_string(i) + " has no data");
  }
  aux_.resize(graph_.ordered_pair_count());
  duals_.assign(graph_.ordered_pair_count(), EdgeDuals::zeros(D, M));
  for (int p = 0; p < graph_.ordered_pair_count(); ++p) {
    const BpcaPosterior& q = nodes_[graph_.pair_from(p)].posterior;
    aux_[p] = {q.mu_mean, q.mu_var, q.w_mean, q.w_var};
  }
}

DistributedSolver DistributedSolver::from_partition(const Eigen::MatrixXd& data,
                                                    const ObservationMask& mask,
                                                    NetworkGraph graph,
                                                    const DataPartition& partition,
                                                    BpcaModelConfig config, SolverConfig solver) {
  config.validate();
  if (data.rows() != config.data_dim) throw ConfigError("data: row count does not match model");
  if (mask.rows() != data.rows() || mask.cols() != data.cols()) {
    throw ConfigError("mask: shape does not match data");
  }
  if (partition.node_count() != graph.node_count()) {
    throw ConfigError("partition: node count does not match the network");
  }
  std::vector<char> used(data.cols(), 0);
  std::vector<NodeState> nodes;
  nodes.reserve(partition.node_count());
  for (int i = 0; i < partition.node_count(); ++i) {
    const auto& cols = partition.assignment[i];
    if (cols.empty()) throw ConfigError("partition: node " + std::to_string(i) + " is empty");
    NodeState node;
    node.node_id = i;
    node.columns = cols;
    node.data.resize(data.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const int c = cols[k];
      if (c < 0 || c >= data.cols() || used[c]) {
        throw ConfigError("partition: column assignment is not a disjoint cover");
      }
      used[c] = 1;
      node.data.col(k) = data.col(c);
    }
    node.mask = mask.select_columns(cols);
    node.posterior = init_posterior(config, static_cast<int>(cols.size()), solver.seed);
    nodes.push_back(std::move(node));
  }
  if (std::find(used.begin(), used.end(), 0) != used.end()) {
    throw ConfigError("partition: some columns are not assigned to any node");
  }
  return DistributedSolver(std::move(graph), std::move(nodes), std::move(config), solver);
}

void DistributedSolver::run_local_phase() {
  std::vector<SolverDiagnostics> local(nodes_.size());
  for_each_parallel(graph_.node_count(), solver_.threads, [&](int i) {
    local_update_phase(nodes_[i], graph_, aux_, duals_, config_, solver_.eta, &local[i]);
  });
  for (const auto& d : local) diag_.quadratic_fallbacks += d.quadratic_fallbacks;
}

TraceRow DistributedSolver::step() {
  const auto start = std::chrono::steady_clock::now();
  run_local_phase();
  aux_update_phase(nodes_, graph_, aux_, duals_, config_, solver_.eta, &diag_);
  dual_update_phase(nodes_, graph_, aux_, duals_, solver_.eta);
  ++iteration_;
  const ConsensusResidual r = residual();
  TraceRow row;
  row.iteration = iteration_;
  row.objective = objective();
  row.primal_residual = r.primal;
  row.max_edge_gap = r.max_edge_gap;
  row.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

DistributedResult DistributedSolver::run() {
  DistributedResult result;
  double previous = 0.0;
  double elapsed = 0.0;
  for (int it = 1; it <= solver_.max_iter; ++it) {
    std::vector<BpcaPosterior> saved_post;
    saved_post.reserve(nodes_.size());
    for (const auto& n : nodes_) saved_post.push_back(n.posterior);
    EdgeAuxState saved_aux = aux_;
    DualState saved_duals = duals_;

    TraceRow row = step();
    if (!std::isfinite(row.objective)) {
      for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].posterior = std::move(saved_post[i]);
      aux_ = std::move(saved_aux);
      duals_ = std::move(saved_duals);
      --iteration_;
      throw DivergenceError("distributed fit: non-finite objective at iteration " +
                            std::to_string(row.iteration) + "; state rolled back");
    }
    elapsed += row.wall_ms;
    row.wall_ms = elapsed;
    result.trace.rows.push_back(row);
    result.iterations = it;
    const double rel_gap = residual().relative_gap;
    if (it > 1 && std::abs(row.objective - previous) <= solver_.tol * std::abs(previous) &&
        rel_gap <= solver_.consensus_tol) {
      result.converged = true;
      break;
    }
    previous = row.objective;
  }
  for (const auto& n : nodes_) result.posteriors.push_back(n.posterior);
  result.aux = aux_;
  result.duals = duals_;
  result.diagnostics = diag_;
  return result;
}

void DistributedSolver::append_columns(int node, const Eigen::MatrixXd& data,
                                       const ObservationMask::Grid& mask,
                                       std::span<const int> global_columns) {
  NodeState& state = nodes_.at(node);
  const int added = static_cast<int>(data.cols());
  if (data.rows() != state.data.rows() || mask.rows() != data.rows() || mask.cols() != added ||
      static_cast<int>(global_columns.size()) != added) {
    throw ConfigError("append_columns: inconsistent block shape");
  }
  const int old = static_cast<int>(state.data.cols());
  Eigen::MatrixXd merged(state.data.rows(), old + added);
  merged << state.data, data;
  ObservationMask::Grid grid(mask.rows(), old + added);
  grid << state.mask.grid(), mask;
  state.mask = ObservationMask(std::move(grid));
  state.data = std::move(merged);
  state.columns.insert(state.columns.end(), global_columns.begin(), global_columns.end());

  std::mt19937_64 rng(node_seed(solver_.seed, node) ^ (0xA5A5A5A5ULL + ++appended_batches_));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd fresh(state.posterior.latent_dim(), added);
  for (int n = 0; n < added; ++n)
    for (int m = 0; m < fresh.rows(); ++m) fresh(m, n) = unit(rng);
  state.posterior.resize_latents(old + added, fresh);
}

double DistributedSolver::objective() const {
  const double weight = global_weight(graph_);
  double total = 0.0;
  for (const auto& node : nodes_) {
    total -= compute_elbo(node.data, node.mask, node.posterior, config_, weight);
  }
  return total;
}

ConsensusResidual DistributedSolver::residual() const {
  return consensus_residual(nodes_, graph_, aux_);
}

DistributedResult fit_distributed(const Eigen::MatrixXd& data, const ObservationMask& mask,
                                  const NetworkGraph& graph, const DataPartition& partition,
                                  const BpcaModelConfig& config, const SolverConfig& solver) {
  auto engine = DistributedSolver::from_partition(data, mask, graph, partition, config, solver);
  return engine.run();
}

}  // namespace dmfvi
