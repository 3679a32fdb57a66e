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

#include "dmfvi/network.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>

#include "dmfvi/errors.hpp"

namespace dmfvi {

Topology parse_topology(std::string_view name) {
  if (name == "ring") return Topology::kRing;
  if (name == "chain") return Topology::kChain;
  if (name == "complete") return Topology::kComplete;
  if (name == "star") return Topology::kStar;
  throw ConfigError("network.topology: unknown topology '" + std::string(name) +
                    "' (expected ring, chain, complete or star)");
}

std::string_view topology_name(Topology kind) {
  switch (kind) {
    case Topology::kRing: return "ring";
    case Topology::kChain: return "chain";
    case Topology::kComplete: return "complete";
    case Topology::kStar: return "star";
  }
  return "unknown";
}

NetworkGraph::NetworkGraph(std::vector<std::vector<int>> neighbors)
    : neighbors_(std::move(neighbors)) {
  const int n = node_count();
  if (n < 1) throw ConfigError("network: graph needs at least one node");
  for (int i = 0; i < n; ++i) {
    auto& list = neighbors_[i];
    std::sort(list.begin(), list.end());
    if (std::adjacent_find(list.begin(), list.end()) != list.end()) {
      throw ConfigError("network: duplicate neighbour of node " + std::to_string(i));
    }
    for (int j : list) {
      if (j < 0 || j >= n) throw ConfigError("network: neighbour index out of range");
      if (j == i) throw ConfigError("network: self-loop at node " + std::to_string(i));
      const auto& back = neighbors_[j];
      if (std::find(back.begin(), back.end(), i) == back.end()) {
        throw ConfigError("network: adjacency is not symmetric");
      }
    }
  }
  if (!is_connected()) throw ConfigError("network: graph is not connected");

  pair_offset_.resize(n + 1, 0);
  for (int i = 0; i < n; ++i) {
    pair_offset_[i + 1] = pair_offset_[i] + static_cast<int>(neighbors_[i].size());
  }
  for (int i = 0; i < n; ++i) {
    for (int j : neighbors_[i]) {
      pair_from_.push_back(i);
      pair_to_.push_back(j);
    }
  }
  reverse_.resize(pair_from_.size());
  for (int p = 0; p < ordered_pair_count(); ++p) {
    const int i = pair_from_[p];
    const int j = pair_to_[p];
    const auto& back = neighbors_[j];
    const int k = static_cast<int>(std::lower_bound(back.begin(), back.end(), i) - back.begin());
    reverse_[p] = pair_id(j, k);
  }
}

bool NetworkGraph::is_connected() const {
  const int n = node_count();
  std::vector<char> seen(n, 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    for (int j : neighbors_[i]) {
      if (!seen[j]) {
        seen[j] = 1;
        ++reached;
        frontier.push(j);
      }
    }
  }
  return reached == n;
}

NetworkGraph build_topology(Topology kind, int n) {
  int minimum = 1;
  switch (kind) {
    case Topology::kRing: minimum = 3; break;
    case Topology::kChain:
    case Topology::kStar: minimum = 2; break;
    case Topology::kComplete: minimum = 1; break;
  }
  if (n < minimum) {
    throw ConfigError("network.nodes: " + std::string(topology_name(kind)) +
                      " needs at least " + std::to_string(minimum) + " nodes, got " +
                      std::to_string(n));
  }
  std::vector<std::vector<int>> adj(n);
  auto link = [&adj](int a, int b) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  };
  switch (kind) {
    case Topology::kRing:
      for (int i = 0; i < n; ++i) link(i, (i + 1) % n);
      break;
    case Topology::kChain:
      for (int i = 0; i + 1 < n; ++i) link(i, i + 1);
      break;
    case Topology::kComplete:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) link(i, j);
      break;
    case Topology::kStar:
      for (int i = 1; i < n; ++i) link(0, i);
      break;
  }
  return NetworkGraph(std::move(adj));
}

std::vector<int> DataPartition::counts() const {
  std::vector<int> out;
  out.reserve(assignment.size());
  for (const auto& block : assignment) out.push_back(static_cast<int>(block.size()));
  return out;
}

DataPartition partition_equal(int total, const NetworkGraph& graph, std::uint64_t seed,
                              bool shuffle) {
  const int n = graph.node_count();
  if (total < n) {
    throw ConfigError("partition: " + std::to_string(total) + " samples cannot cover " +
                      std::to_string(n) + " nodes");
  }
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  DataPartition part;
  part.assignment.resize(n);
  const int base = total / n;
  const int extra = total % n;
  int cursor = 0;
  for (int i = 0; i < n; ++i) {
    const int size = base + (i < extra ? 1 : 0);
    part.assignment[i].assign(order.begin() + cursor, order.begin() + cursor + size);
    cursor += size;
  }
  return part;
}

}  // namespace dmfvi
