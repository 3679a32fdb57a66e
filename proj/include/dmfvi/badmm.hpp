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
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dmfvi/bpca.hpp"
#include "dmfvi/network.hpp"
#include "dmfvi/trace.hpp"

namespace dmfvi {

struct SolverConfig {
  double eta = 10.0;            // Bregman penalty weight and dual step
  double tol = 1e-3;            // relative objective change
  int max_iter = 200;
  std::uint64_t seed = 1;
  double consensus_tol = 1e-3;  // relative edge gap required to stop
  int threads = 1;              // workers for the node-local phase

  void validate() const;
};

// Auxiliary consensus variables of one ordered pair (i, j).
struct EdgeAux {
  Eigen::VectorXd rho_mu;  // means
  Eigen::VectorXd phi_mu;  // variances, > 0
  Eigen::MatrixXd rho_w;
  Eigen::MatrixXd phi_w;
};
using EdgeAuxState = std::vector<EdgeAux>;  // indexed by ordered pair id

// Multipliers of one ordered pair. Suffix 1 belongs to the constraint
// "node i == aux", suffix 2 to "aux == node j"; gamma for means, beta for
// variances.
struct EdgeDuals {
  Eigen::VectorXd gamma_mu_1, gamma_mu_2, beta_mu_1, beta_mu_2;
  Eigen::MatrixXd gamma_w_1, gamma_w_2, beta_w_1, beta_w_2;

  static EdgeDuals zeros(int data_dim, int latent_dim);
};
using DualState = std::vector<EdgeDuals>;

struct NodeState {
  int node_id = 0;
  Eigen::MatrixXd data;  // D x N_i
  ObservationMask mask;
  std::vector<int> columns;  // global column index of every local column
  BpcaPosterior posterior;
};

// Weight given to the mu/W prior and entropy terms inside each node's bound
// so that the node bounds sum to the centralised bound at consensus.
inline double global_weight(const NetworkGraph& graph) {
  return 1.0 / static_cast<double>(graph.node_count());
}

struct SolverDiagnostics {
  std::uint64_t quadratic_fallbacks = 0;
};

// Root of a2 x^2 + a1 x + a0 = 0 above `floor`.
//
// The quadratic is the stationarity condition (times x^2) of the scalar
// objective g(x) = a2 x + a1 ln x - a0 / x, which is the form every
// variance coordinate takes under the KL penalties. When both roots are
// admissible the one with the smaller g wins. Returns nullopt when no root
// is admissible.
std::optional<double> solve_stationarity_quadratic(double a2, double a1, double a0,
                                                   double floor);

// Minimiser of g over (kVarianceFloor, ceiling], ceiling at most 1e6. Uses
// solve_stationarity_quadratic when its root is the minimiser and otherwise
// falls back to a bounded numeric search, counting the fallback in `diag`.
// Non-finite coefficients yield NaN.
double minimize_variance_objective(double a2, double a1, double a0, double ceiling,
                                   SolverDiagnostics* diag);

namespace detail {

// Penalised coordinate update of mu_d on `node`: the mean with the variance
// held, then the variance at the new mean. Minimises the node's augmented
// Lagrangian
//   -ELBO_i + sum of dual terms + eta sum_k KL(aux_k || q_i)
// restricted to that coordinate; k runs over both ordered pairs of every
// incident edge.
void update_mu_entry(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                     const DualState& duals, const BpcaModelConfig& config,
                     const HyperMoments& hyper, double eta, int d, SolverDiagnostics* diag);

// Same for W_dm; `row` holds the latent moments of row d.
void update_w_entry(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                    const DualState& duals, const BpcaModelConfig& config,
                    const HyperMoments& hyper, const RowMoments& row, double eta, int d, int m,
                    SolverDiagnostics* diag);

// Auxiliary entry of one ordered pair. Minimises
//   (g2 - g1) rho + (b2 - b1) phi + eta [KL(q_i || aux) + KL(q_j || aux)]
// first over rho with phi at its incoming value, then over phi in
// (kVarianceFloor, ceiling].
void aux_entry(double mi, double vi, double mj, double vj, double g1, double g2, double b1,
               double b2, double eta, double ceiling, double& rho, double& phi,
               SolverDiagnostics* diag);

}  // namespace detail

// One node's B-ADMM primal step: latents, mu and W coordinates (each with
// dual and eta-weighted KL(aux || node) terms for every incident ordered
// pair), then hyperparameters. `aux` and `duals` are read at iteration t.
void local_update_phase(NodeState& node, const NetworkGraph& graph, const EdgeAuxState& aux,
                        const DualState& duals, const BpcaModelConfig& config, double eta,
                        SolverDiagnostics* diag = nullptr);

// Auxiliary step for every ordered pair, penalised with KL(node || aux).
// Auxiliary variances are bounded by the endpoints' prior variances.
void aux_update_phase(const std::vector<NodeState>& nodes, const NetworkGraph& graph,
                      EdgeAuxState& aux, const DualState& duals, const BpcaModelConfig& config,
                      double eta, SolverDiagnostics* diag = nullptr);

void dual_update_phase(const std::vector<NodeState>& nodes, const NetworkGraph& graph,
                       const EdgeAuxState& aux, DualState& duals, double eta);

struct ConsensusResidual {
  double primal = 0.0;         // max |node value - aux value|
  double max_edge_gap = 0.0;   // max |value_i - value_j| over edges
  double relative_gap = 0.0;   // edge gap per family over that family's scale
};

ConsensusResidual consensus_residual(const std::vector<NodeState>& nodes,
                                     const NetworkGraph& graph, const EdgeAuxState& aux);

struct DistributedResult {
  std::vector<BpcaPosterior> posteriors;
  EdgeAuxState aux;
  DualState duals;
  ConvergenceTrace trace;
  bool converged = false;
  int iterations = 0;
  SolverDiagnostics diagnostics;
};

// Synchronous multi-node B-ADMM over an in-process network. Holds all node,
// auxiliary and dual state so fits can be resumed after data is appended.
class DistributedSolver {
 public:
  DistributedSolver(NetworkGraph graph, std::vector<NodeState> nodes, BpcaModelConfig config,
                    SolverConfig solver);

  // Splits `data` by `partition` and initialises every node with seeded
  // uniform(0,1) means and unit variances; duals start at zero and every
  // auxiliary pair (i, j) copies node i's initial posterior.
  static DistributedSolver from_partition(const Eigen::MatrixXd& data,
                                          const ObservationMask& mask, NetworkGraph graph,
                                          const DataPartition& partition,
                                          BpcaModelConfig config, SolverConfig solver);

  // One local -> aux -> dual round; returns the trace row for it.
  TraceRow step();

  // Iterates until the relative objective change is below tol and the
  // relative edge gap is below consensus_tol, or max_iter rounds. Throws
  // DivergenceError (state rolled back to the last finite round).
  DistributedResult run();

  // Appends new local columns to `node`; their latent means are drawn fresh.
  void append_columns(int node, const Eigen::MatrixXd& data, const ObservationMask::Grid& mask,
                      std::span<const int> global_columns);

  double objective() const;
  ConsensusResidual residual() const;

  const NetworkGraph& graph() const { return graph_; }
  const std::vector<NodeState>& nodes() const { return nodes_; }
  const EdgeAuxState& aux() const { return aux_; }
  const DualState& duals() const { return duals_; }
  const BpcaModelConfig& config() const { return config_; }
  const SolverConfig& solver_config() const { return solver_; }
  SolverConfig& solver_config() { return solver_; }
  const SolverDiagnostics& diagnostics() const { return diag_; }

 private:
  void run_local_phase();

  NetworkGraph graph_;
  std::vector<NodeState> nodes_;
  BpcaModelConfig config_;
  SolverConfig solver_;
  EdgeAuxState aux_;
  DualState duals_;
  SolverDiagnostics diag_;
  int iteration_ = 0;
  int appended_batches_ = 0;
};

DistributedResult fit_distributed(const Eigen::MatrixXd& data, const ObservationMask& mask,
                                  const NetworkGraph& graph, const DataPartition& partition,
                                  const BpcaModelConfig& config, const SolverConfig& solver);

// Seed used to initialise node `node`; node 0 uses the solver seed itself.
std::uint64_t node_seed(std::uint64_t seed, int node);

}  // namespace dmfvi
