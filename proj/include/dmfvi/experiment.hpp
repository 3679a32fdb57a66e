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
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace dmfvi {

using Json = nlohmann::json;

enum class ExperimentKind {
  kSynthConvergence,
  kCubeSfm,
  kCubeSfmOnline,
  kMatrixCompletion,
  kLoadTracks,
};

ExperimentKind parse_experiment_kind(std::string_view name);
const char* experiment_kind_name(ExperimentKind kind);

// Complete configuration tree for `kind` with every default filled in.
Json default_config(ExperimentKind kind);

// Overlays `user` on the defaults for its "experiment" and validates the
// result. Unknown keys, type mismatches and out-of-range values raise
// ConfigError naming the dotted key.
Json resolve_config(const Json& user);

// Parses a config file. Relative data paths are taken relative to the
// file's directory.
Json load_config(const std::filesystem::path& path);

// Replaces the value at a dotted key ("solver.eta") and re-validates.
void set_config_value(Json& resolved, std::string_view dotted_key, const Json& value);

// Sets solver.seed and replaces data.seeds with the single seed.
void override_seed(Json& resolved, std::uint64_t seed);

// FNV-1a 64 of the compact dump, as 16 hex digits.
std::string config_hash(const Json& resolved);

struct RunOutcome {
  Json results;  // contents of results.json
  std::vector<std::uint64_t> diverged_seeds;
  double final_objective = 0.0;  // first successful seed
  int iterations = 0;
  bool converged = false;
  double metric = 0.0;  // per experiment, see README
};

// Runs every seed of the experiment and writes trace.csv, results.json,
// config-echo.json and the per-experiment CSV files into `out_dir`.
// Divergent seeds are recorded and skipped.
RunOutcome run_experiment(const Json& resolved, const std::filesystem::path& out_dir);

struct SweepRow {
  Json value;
  std::uint64_t seed = 0;
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double metric = 0.0;
  bool diverged = false;
};

// One run per (value, seed); each run gets its own subdirectory of
// `out_dir` and one row in out_dir/sweep.csv. With `parallel` above 1 the
// runs are spread over that many threads.
std::vector<SweepRow> run_sweep(const Json& resolved, std::string_view dotted_key,
                                const std::vector<Json>& values, const std::filesystem::path& out_dir,
                                int parallel = 1);

// Reads a CLI value list such as "1,10,100" or "ring,chain" into JSON scalars.
std::vector<Json> parse_value_list(std::string_view text);

// Machine-readable error record: {"error": kind, "message": what}.
Json error_record(std::string_view kind, std::string_view message);

}  // namespace dmfvi
