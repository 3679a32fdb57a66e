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


// Command-line front end: `dmfvi run <config>` and
// `dmfvi sweep <config> --param <key> --values <list>`.
//
// Exit status: 0 success, 2 configuration error, 3 solver divergence,
// 4 I/O error, 1 anything else. Failures print a JSON error record on
// stderr and, when the output directory is known, write it to error.json.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmfvi/errors.hpp"
#include "dmfvi/experiment.hpp"

namespace fs = std::filesystem;
using dmfvi::Json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kDivergence = 3, kIo = 4 };

void report(const Json& record, const std::optional<fs::path>& out_dir) {
  std::cerr << record.dump() << '\n';
  if (!out_dir) return;
  std::error_code ec;
  fs::create_directories(*out_dir, ec);
  std::ofstream out(*out_dir / "error.json");
  if (out) out << record.dump(2) << '\n';
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const Json& v : dmfvi::parse_value_list(text)) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw dmfvi::ConfigError("--seeds: expected non-negative integers, got '" + text + "'");
    }
    seeds.push_back(v.get<std::uint64_t>());
  }
  return seeds;
}

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string param;
  std::string values;
  std::string seeds;
  int parallel = 1;
};

fs::path output_dir(const Json& config, const Options& opt) {
  return opt.out.empty() ? fs::path(config.at("output_dir").get<std::string>()) : fs::path(opt.out);
}

Json load(const Options& opt) {
  Json config = dmfvi::load_config(opt.config_path);
  if (opt.seed) dmfvi::override_seed(config, *opt.seed);
  return config;
}

int do_run(const Options& opt, std::optional<fs::path>& out_dir) {
  const Json config = load(opt);
  out_dir = output_dir(config, opt);
  const dmfvi::RunOutcome outcome = dmfvi::run_experiment(config, *out_dir);
  const Json& summary = outcome.results.at("summary");
  std::cout << config.at("experiment").get<std::string>() << ": "
            << summary.at("completed_seeds") << " seed(s), " << summary.at("converged_seeds")
            << " converged, mean " << outcome.results.at("metric").get<std::string>() << " "
            << summary.at("mean_metric") << "\n"
            << "outputs in " << out_dir->string() << "\n";
  if (!outcome.diverged_seeds.empty()) {
    Json record = dmfvi::error_record("divergence", "solver diverged for some seeds");
    record["seeds"] = outcome.diverged_seeds;
    report(record, out_dir);
    return kDivergence;
  }
  return kOk;
}

int do_sweep(const Options& opt, std::optional<fs::path>& out_dir) {
  Json config = load(opt);
  if (!opt.seeds.empty()) dmfvi::set_config_value(config, "data.seeds", parse_seed_list(opt.seeds));
  out_dir = output_dir(config, opt);
  const auto rows = dmfvi::run_sweep(config, opt.param, dmfvi::parse_value_list(opt.values),
                                     *out_dir, opt.parallel);
  std::vector<std::uint64_t> diverged;
  for (const auto& row : rows) {
    std::cout << opt.param << "=" << row.value.dump() << " seed " << row.seed << ": objective "
              << row.final_objective << ", " << row.iterations << " iterations"
              << (row.converged ? "" : " (not converged)") << ", metric " << row.metric << "\n";
    if (row.diverged) diverged.push_back(row.seed);
  }
  std::cout << "sweep table in " << (*out_dir / "sweep.csv").string() << "\n";
  if (!diverged.empty()) {
    Json record = dmfvi::error_record("divergence", "solver diverged in some sweep runs");
    record["seeds"] = diverged;
    report(record, out_dir);
    return kDivergence;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed variational Bayesian PCA experiments"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", opt.config_path, "JSON experiment config")->required();
    cmd->add_option("--out", opt.out, "Output directory (overrides output_dir)");
    cmd->add_option("--seed", opt.seed, "Sets solver.seed and data.seeds to this seed");
  };
  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  add_common(run);
  CLI::App* sweep = app.add_subcommand("sweep", "Run an experiment over a list of parameter values");
  add_common(sweep);
  sweep->add_option("--param", opt.param, "Dotted config key, e.g. solver.eta")->required();
  sweep->add_option("--values", opt.values, "Comma-separated values, e.g. 1,10,100")->required();
  sweep->add_option("--seeds", opt.seeds, "Comma-separated seeds (overrides data.seeds)");
  sweep->add_option("--parallel", opt.parallel, "Concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  std::optional<fs::path> out_dir;
  if (!opt.out.empty()) out_dir = opt.out;
  try {
    return run->parsed() ? do_run(opt, out_dir) : do_sweep(opt, out_dir);
  } catch (const dmfvi::ConfigError& e) {
    report(dmfvi::error_record("config", e.what()), out_dir);
    return kConfig;
  } catch (const dmfvi::DivergenceError& e) {
    report(dmfvi::error_record("divergence", e.what()), out_dir);
    return kDivergence;
  } catch (const dmfvi::IoError& e) {
    report(dmfvi::error_record("io", e.what()), out_dir);
    return kIo;
  } catch (const std::exception& e) {
    report(dmfvi::error_record("internal", e.what()), out_dir);
    return kOther;
  }
}
