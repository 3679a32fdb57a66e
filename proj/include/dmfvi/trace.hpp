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

#include <vector>

namespace dmfvi {

struct TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double primal_residual = 0.0;
  double max_edge_gap = 0.0;
  double wall_ms = 0.0;
};

// Per-iteration record of a fit. `objective` is the negative variational
// lower bound (summed over nodes for distributed fits), so smaller is better.
struct ConvergenceTrace {
  std::vector<TraceRow> rows;

  bool empty() const { return rows.empty(); }
  const TraceRow& back() const { return rows.back(); }
  int size() const { return static_cast<int>(rows.size()); }
};

}  // namespace dmfvi
