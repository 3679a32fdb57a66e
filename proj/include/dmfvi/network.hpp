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
#include <string>
#include <string_view>
#include <vector>

namespace dmfvi {

enum class Topology { kRing, kChain, kComplete, kStar };

Topology parse_topology(std::string_view name);
std::string_view topology_name(Topology kind);

// Undirected, connected, loop-free graph. Neighbour lists are sorted.
//
// Every undirected edge {i, j} is seen as two ordered pairs (i, j) and
// (j, i); consensus state is indexed by ordered pair id.
class NetworkGraph {
 public:
  explicit NetworkGraph(std::vector<std::vector<int>> neighbors);

  int node_count() const { return static_cast<int>(neighbors_.size()); }
  const std::vector<int>& neighbors(int node) const { return neighbors_[node]; }

  int ordered_pair_count() const { return static_cast<int>(pair_from_.size()); }
  // Id of ordered pair (node, neighbors(node)[k]).
  int pair_id(int node, int k) const { return pair_offset_[node] + k; }
  int pair_from(int pair) const { return pair_from_[pair]; }
  int pair_to(int pair) const { return pair_to_[pair]; }
  // Id of (to, from) for a given (from, to).
  int reverse_pair(int pair) const { return reverse_[pair]; }

  bool is_connected() const;

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> pair_offset_;
  std::vector<int> pair_from_;
  std::vector<int> pair_to_;
  std::vector<int> reverse_;
};

NetworkGraph build_topology(Topology kind, int n);

struct DataPartition {
  std::vector<std::vector<int>> assignment;  // sample indices per node

  int node_count() const { return static_cast<int>(assignment.size()); }
  std::vector<int> counts() const;
};

// Contiguous blocks of floor(total / n) with the remainder handed to the
// first nodes. When shuffle is set, sample indices are permuted with `seed`
// before blocking.
DataPartition partition_equal(int total, const NetworkGraph& graph,
                              std::uint64_t seed, bool shuffle = false);

}  // namespace dmfvi
