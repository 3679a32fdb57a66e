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


#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <doctest.h>

#include "dmfvi/errors.hpp"
#include "dmfvi/experiment.hpp"

using namespace dmfvi;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dmfvi_exp_" + std::to_string(std::random_device{}()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

Json small_synth() {
  return Json::parse(R"({
    "experiment": "synth-convergence",
    "model": {"latent_dim": 2},
    "solver": {"max_iter": 30},
    "network": {"nodes": 3},
    "reference": {"max_iter": 50},
    "data": {"dim": 10, "samples": 60}
  })");
}

fs::path write_config(const fs::path& dir, const std::string& name, const Json& config) {
  const auto p = dir / name;
  std::ofstream(p) << config.dump(2);
  return p;
}

struct CliResult {
  int code;
  std::string err;
};

CliResult cli(const std::string& args, const fs::path& scratch) {
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + DMFVI_CLI_PATH + "\" " + args + " > \"" +
                          (scratch / "stdout.txt").string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string expect_config_error(Json user) {
  try {
    resolve_config(user);
  } catch (const ConfigError& e) {
    return e.what();
  }
  FAIL("expected a configuration error");
  return {};
}

}  // namespace

TEST_CASE("defaults follow the experiment kind") {
  const Json synth = default_config(ExperimentKind::kSynthConvergence);
  CHECK(synth["solver"]["eta"] == 10.0);
  CHECK(synth["solver"]["tol"] == 1e-3);
  CHECK(synth["network"]["topology"] == "ring");
  CHECK(synth["model"]["latent_dim"] == 5);
  CHECK(synth["data"]["samples"] == 250);
  CHECK(default_config(ExperimentKind::kCubeSfm)["model"]["latent_dim"] == 3);
  CHECK(default_config(ExperimentKind::kMatrixCompletion)["network"]["nodes"] == 10);
  CHECK(parse_experiment_kind("cube-sfm-online") == ExperimentKind::kCubeSfmOnline);
  CHECK(std::string(experiment_kind_name(ExperimentKind::kLoadTracks)) == "load-tracks");
  CHECK_THROWS_AS(parse_experiment_kind("netflix"), ConfigError);
}

TEST_CASE("configuration errors name the offending key") {
  Json bad = small_synth();
  bad["network"]["topology"] = "torus";
  CHECK(expect_config_error(bad).find("network.topology") != std::string::npos);

  bad = small_synth();
  bad["solver"]["etta"] = 1.0;
  CHECK(expect_config_error(bad).find("solver.etta") != std::string::npos);

  bad = small_synth();
  bad["solver"]["max_iter"] = 2.5;
  CHECK(expect_config_error(bad).find("solver.max_iter") != std::string::npos);

  bad = small_synth();
  bad["solver"]["eta"] = -1.0;
  CHECK(expect_config_error(bad).find("solver.eta") != std::string::npos);

  bad = small_synth();
  bad["data"]["mask"]["missing_ratio"] = 1.0;
  bad["data"]["mask"]["kind"] = "mar";
  CHECK(expect_config_error(bad).find("data.mask.missing_ratio") != std::string::npos);

  bad = small_synth();
  bad["data"]["seeds"] = Json::array();
  CHECK(expect_config_error(bad).find("data.seeds") != std::string::npos);

  bad = default_config(ExperimentKind::kCubeSfm);
  bad["network"]["nodes"] = 4;
  CHECK(expect_config_error(bad).find("network.nodes") != std::string::npos);

  bad = default_config(ExperimentKind::kLoadTracks);
  bad["data"]["path"] = "/definitely/not/here.csv";
  CHECK(expect_config_error(bad).find("data.path") != std::string::npos);

  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"model": {}})")), ConfigError);
}

TEST_CASE("dotted overrides and value lists") {
  Json c = resolve_config(small_synth());
  set_config_value(c, "solver.eta", 100);
  CHECK(c["solver"]["eta"].get<double>() == 100.0);
  set_config_value(c, "network.topology", "chain");
  CHECK(c["network"]["topology"] == "chain");
  CHECK_THROWS_AS(set_config_value(c, "solver.nope", 1), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "network.topology", "torus"), ConfigError);

  override_seed(c, 9);
  CHECK(c["solver"]["seed"] == 9);
  CHECK(c["data"]["seeds"] == Json::array({9}));

  const auto values = parse_value_list("1, 10,100");
  REQUIRE(values.size() == 3);
  CHECK(values[2] == 100);
  const auto names = parse_value_list("ring,chain");
  CHECK(names[1] == "chain");
  const auto reals = parse_value_list("0.5,1e-3");
  CHECK(reals[1].get<double>() == 1e-3);
}

TEST_CASE("config hash") {
  const Json a = resolve_config(small_synth());
  Json b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  set_config_value(b, "solver.eta", 1.0);
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("the annotated example configs load") {
  for (const char* name : {"synth_convergence.json", "cube_sfm.json", "cube_sfm_mar.json",
                           "cube_sfm_mnar.json", "cube_sfm_online.json",
                           "matrix_completion.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(fs::path(DMFVI_CONFIG_DIR) / name));
  }
  CHECK_THROWS_AS(load_config(fs::path(DMFVI_CONFIG_DIR) / "nope.json"), IoError);
}

TEST_CASE("run writes reproducible outputs") {
  TempDir dir;
  const auto config = write_config(dir.path, "synth.json", small_synth());
  const auto a = dir.path / "a", b = dir.path / "b";
  REQUIRE(cli("run \"" + config.string() + "\" --out \"" + a.string() + "\"", dir.path).code == 0);
  REQUIRE(cli("run \"" + config.string() + "\" --out \"" + b.string() + "\"", dir.path).code == 0);
  CHECK(slurp(a / "results.json") == slurp(b / "results.json"));
  CHECK(slurp(a / "trace.csv").size() > 0);
  CHECK(count_lines(a / "trace.csv") <= 31);
  CHECK(fs::exists(a / "central_trace.csv"));
  CHECK(fs::exists(a / "seeds.csv"));

  const Json results = Json::parse(slurp(a / "results.json"));
  const Json echo = Json::parse(slurp(a / "config-echo.json"));
  CHECK(results["config_hash"] == echo["config_hash"]);
  CHECK(echo["config_hash"] == config_hash(echo["config"]));
  CHECK(results["seeds"].size() == 1);
  CHECK(results["seeds"][0].contains("centralized_objective"));

  REQUIRE(cli("run \"" + config.string() + "\" --seed 4 --out \"" + (dir.path / "c").string() +
                  "\"",
              dir.path)
              .code == 0);
  const Json other = Json::parse(slurp(dir.path / "c" / "results.json"));
  CHECK(other["seeds"][0]["seed"] == 4);
  CHECK(other["config_hash"] != results["config_hash"]);
}

TEST_CASE("run_experiment agrees with the command line") {
  TempDir dir;
  const Json config = resolve_config(small_synth());
  const auto outcome = run_experiment(config, dir.path / "lib");
  CHECK(outcome.iterations > 0);
  CHECK(outcome.diverged_seeds.empty());
  CHECK(std::isfinite(outcome.final_objective));
  CHECK(outcome.metric >= 0.0);
  const auto config_path = write_config(dir.path, "synth.json", small_synth());
  REQUIRE(cli("run \"" + config_path.string() + "\" --out \"" + (dir.path / "cli").string() + "\"",
              dir.path)
              .code == 0);
  CHECK(slurp(dir.path / "lib" / "results.json") == slurp(dir.path / "cli" / "results.json"));
}

TEST_CASE("an eta sweep produces one row per value and seed") {
  TempDir dir;
  const auto config = write_config(dir.path, "synth.json", small_synth());
  const auto out = dir.path / "sweep";
  const auto r = cli("sweep \"" + config.string() + "\" --param solver.eta --values 1,10,100 " +
                         "--seeds 1,2 --out \"" + out.string() + "\"",
                     dir.path);
  REQUIRE(r.code == 0);
  CHECK(count_lines(out / "sweep.csv") == 1 + 3 * 2);
  std::ifstream in(out / "sweep.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "value,seed,final_objective,iterations,converged,metric");
  CHECK(fs::exists(out / "config-echo.json"));

  const auto parallel = dir.path / "parallel";
  REQUIRE(cli("sweep \"" + config.string() + "\" --param solver.eta --values 1,10,100 " +
                  "--seeds 1,2 --parallel 3 --out \"" + parallel.string() + "\"",
              dir.path)
              .code == 0);
  CHECK(slurp(out / "sweep.csv") == slurp(parallel / "sweep.csv"));
}

TEST_CASE("command-line failures carry exit codes and error records") {
  TempDir dir;
  Json bad = small_synth();
  bad["network"]["topology"] = "torus";
  const auto config = write_config(dir.path, "bad.json", bad);
  const auto out = dir.path / "bad_out";
  const auto r = cli("run \"" + config.string() + "\" --out \"" + out.string() + "\"", dir.path);
  CHECK(r.code == 2);
  const Json record = Json::parse(r.err);
  CHECK(record["error"] == "config");
  CHECK(record["message"].get<std::string>().find("network.topology") != std::string::npos);
  CHECK(Json::parse(slurp(out / "error.json")) == record);

  CHECK(cli("run \"" + (dir.path / "absent.json").string() + "\"", dir.path).code == 4);
  CHECK(cli("frobnicate", dir.path).code == 2);
  CHECK(cli("sweep \"" + config.string() + "\"", dir.path).code == 2);

  const auto good = write_config(dir.path, "good.json", small_synth());
  CHECK(cli("sweep \"" + good.string() + "\" --param solver.bogus --values 1 --out \"" +
                (dir.path / "s").string() + "\"",
            dir.path)
            .code == 2);

  // A NaN in the tracks makes the objective non-finite.
  std::ofstream tracks(dir.path / "tracks.csv");
  for (int p = 0; p < 6; ++p) {
    for (int c = 0; c < 12; ++c) tracks << (c ? "," : "") << (p == 2 && c == 5 ? "nan" : "0.5") ;
    tracks << "\n";
  }
  tracks.close();
  Json load = default_config(ExperimentKind::kLoadTracks);
  load["data"]["path"] = (dir.path / "tracks.csv").string();
  load["reference"]["max_iter"] = 5;
  load["solver"]["max_iter"] = 5;
  const auto load_path = write_config(dir.path, "tracks.json", load);
  const auto diverged =
      cli("run \"" + load_path.string() + "\" --out \"" + (dir.path / "t").string() + "\"",
          dir.path);
  CHECK(diverged.code == 3);
  CHECK(Json::parse(diverged.err)["error"] == "divergence");
  const Json results = Json::parse(slurp(dir.path / "t" / "results.json"));
  CHECK(results["diverged"].size() == 1);
}
