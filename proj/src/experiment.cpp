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


#include "dmfvi/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "dmfvi/badmm.hpp"
#include "dmfvi/benchmarks.hpp"
#include "dmfvi/bpca.hpp"
#include "dmfvi/errors.hpp"
#include "dmfvi/io.hpp"
#include "dmfvi/missing.hpp"
#include "dmfvi/network.hpp"

namespace dmfvi {
namespace fs = std::filesystem;

namespace {

struct KindName {
  ExperimentKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {ExperimentKind::kSynthConvergence, "synth-convergence"},
    {ExperimentKind::kCubeSfm, "cube-sfm"},
    {ExperimentKind::kCubeSfmOnline, "cube-sfm-online"},
    {ExperimentKind::kMatrixCompletion, "matrix-completion"},
    {ExperimentKind::kLoadTracks, "load-tracks"},
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Json hyper_defaults() {
  Json h = Json::object();
  h["learned"] = true;
  h["value"] = 1.0;
  h["prior_shape"] = 1e-3;
  h["prior_rate"] = 1e-3;
  return h;
}

Json cube_data_defaults() {
  Json d = Json::object();
  d["points"] = 88;
  d["noise_sigma"] = 0.01;
  d["cameras"] = 5;
  d["frames_per_camera"] = 50;
  d["rotation_step_deg"] = 3.0;
  d["elevation_deg"] = 30.0;
  return d;
}

// ---------------------------------------------------------------------------
// Overlay and type checking

void check_scalar(const Json& def, const Json& value, const std::string& key) {
  bool ok = false;
  if (def.is_boolean()) ok = value.is_boolean();
  else if (def.is_string()) ok = value.is_string();
  else if (def.is_number_float()) ok = value.is_number();
  else if (def.is_number_integer()) ok = value.is_number_integer();
  if (!ok) {
    const std::string expected = def.is_number_integer() ? "integer" : def.type_name();
    throw ConfigError(key + ": expected " + expected + ", got " + value.type_name());
  }
}

void assign_checked(Json& slot, const Json& value, const std::string& key) {
  if (slot.is_object()) {
    if (!value.is_object()) throw ConfigError(key + ": expected an object");
    for (auto it = value.begin(); it != value.end(); ++it) {
      auto child = slot.find(it.key());
      const std::string child_key = key + "." + it.key();
      if (child == slot.end()) throw ConfigError(child_key + ": unknown key");
      assign_checked(*child, *it, child_key);
    }
    return;
  }
  if (slot.is_array()) {
    if (!value.is_array() || value.empty()) throw ConfigError(key + ": expected a non-empty list");
    for (const Json& v : value) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(key + ": entries must be non-negative integers");
      }
    }
    slot = value;
    return;
  }
  check_scalar(slot, value, key);
  if (slot.is_number_float()) slot = value.get<double>();
  else slot = value;
}

std::uint64_t read_seed(const Json& j, const std::string& key) {
  if (j.get<std::int64_t>() < 0) throw ConfigError(key + ": must be non-negative");
  return j.get<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Typed view of a resolved config

struct Settings {
  ExperimentKind kind = ExperimentKind::kSynthConvergence;
  int latent_dim = 1;
  int data_dim = 0;
  double prior_mean_mu = 0.0;
  double prior_mean_w = 0.0;
  Hyperparameter tau, alpha, theta;
  SolverConfig solver;
  Topology topology = Topology::kRing;
  int nodes = 1;
  bool shuffle = false;
  bool centralized = true;
  int centralized_max_iter = 1000;
  std::vector<std::uint64_t> seeds;
  MaskSpec mask;
  Json data;
};

Hyperparameter read_hyper(const Json& j) {
  Hyperparameter h;
  h.learned = j.at("learned").get<bool>();
  h.fixed_value = j.at("value").get<double>();
  h.prior = {j.at("prior_shape").get<double>(), j.at("prior_rate").get<double>()};
  return h;
}

BpcaModelConfig model_config(const Settings& s, int data_dim) {
  if (s.data_dim != 0 && s.data_dim != data_dim) {
    throw ConfigError("model.data_dim: set to " + std::to_string(s.data_dim) +
                      " but the data has " + std::to_string(data_dim) + " rows");
  }
  BpcaModelConfig cfg = BpcaModelConfig::with_defaults(data_dim, s.latent_dim);
  cfg.prior_mean_mu.setConstant(s.prior_mean_mu);
  cfg.prior_mean_w.setConstant(s.prior_mean_w);
  cfg.tau = s.tau;
  cfg.alpha = s.alpha;
  cfg.theta = s.theta;
  cfg.validate();
  return cfg;
}

CubeOptions cube_options(const Json& data) {
  CubeOptions o;
  o.points = data.at("points").get<int>();
  o.noise_sigma = data.at("noise_sigma").get<double>();
  o.cameras = data.at("cameras").get<int>();
  o.frames_per_camera = data.at("frames_per_camera").get<int>();
  o.rotation_step_deg = data.at("rotation_step_deg").get<double>();
  o.elevation_deg = data.at("elevation_deg").get<double>();
  return o;
}

bool is_cube(ExperimentKind kind) {
  return kind == ExperimentKind::kCubeSfm || kind == ExperimentKind::kCubeSfmOnline;
}

Settings read_settings(const Json& r) {
  Settings s;
  s.kind = parse_experiment_kind(r.at("experiment").get<std::string>());
  const Json& model = r.at("model");
  s.latent_dim = model.at("latent_dim").get<int>();
  s.data_dim = model.at("data_dim").get<int>();
  if (s.data_dim < 0) throw ConfigError("model.data_dim: must be >= 0 (0 takes it from the data)");
  s.prior_mean_mu = model.at("prior_mean_mu").get<double>();
  s.prior_mean_w = model.at("prior_mean_w").get<double>();
  s.tau = read_hyper(model.at("tau"));
  s.alpha = read_hyper(model.at("alpha"));
  s.theta = read_hyper(model.at("theta"));
  model_config(s, s.data_dim > 0 ? s.data_dim : std::max(s.latent_dim, 1));

  const Json& solver = r.at("solver");
  s.solver.eta = solver.at("eta").get<double>();
  s.solver.tol = solver.at("tol").get<double>();
  s.solver.max_iter = solver.at("max_iter").get<int>();
  s.solver.consensus_tol = solver.at("consensus_tol").get<double>();
  s.solver.seed = read_seed(solver.at("seed"), "solver.seed");
  s.solver.threads = solver.at("threads").get<int>();
  s.solver.validate();

  const Json& network = r.at("network");
  s.topology = parse_topology(network.at("topology").get<std::string>());
  s.nodes = network.at("nodes").get<int>();
  if (s.nodes < 1) throw ConfigError("network.nodes: must be >= 1");
  s.shuffle = network.at("shuffle").get<bool>();

  const Json& reference = r.at("reference");
  s.centralized = reference.at("centralized").get<bool>();
  s.centralized_max_iter = reference.at("max_iter").get<int>();
  if (s.centralized_max_iter < 1) throw ConfigError("reference.max_iter: must be >= 1");

  s.data = r.at("data");
  for (const Json& seed : s.data.at("seeds")) s.seeds.push_back(read_seed(seed, "data.seeds"));
  const Json& mask = s.data.at("mask");
  s.mask.kind = parse_mask_kind(mask.at("kind").get<std::string>());
  s.mask.missing_ratio = mask.at("missing_ratio").get<double>();
  s.mask.quantile = mask.at("quantile").get<double>();
  s.mask.seed = read_seed(mask.at("seed"), "data.mask.seed");
  s.mask.validate();

  if (s.mask.kind == MaskKind::kMnarOcclusion && !is_cube(s.kind)) {
    throw ConfigError("data.mask.kind: mnar_occlusion needs a cube experiment");
  }
  switch (s.kind) {
    case ExperimentKind::kSynthConvergence:
      break;
    case ExperimentKind::kCubeSfm:
    case ExperimentKind::kCubeSfmOnline:
      if (s.nodes != s.data.at("cameras").get<int>()) {
        throw ConfigError("network.nodes: must equal data.cameras (one node per camera)");
      }
      break;
    case ExperimentKind::kMatrixCompletion:
      if (s.mask.kind != MaskKind::kNone) {
        throw ConfigError("data.mask.kind: matrix-completion draws its own train/probe split");
      }
      break;
    case ExperimentKind::kLoadTracks: {
      if (s.mask.kind != MaskKind::kNone && s.mask.kind != MaskKind::kMar) {
        throw ConfigError("data.mask.kind: load-tracks supports none or mar");
      }
      const std::string path = s.data.at("path").get<std::string>();
      if (path.empty()) throw ConfigError("data.path: required for load-tracks");
      if (!fs::exists(path)) throw ConfigError("data.path: no such file '" + path + "'");
      const std::string truth = s.data.at("truth_path").get<std::string>();
      if (!truth.empty() && !fs::exists(truth)) {
        throw ConfigError("data.truth_path: no such file '" + truth + "'");
      }
      break;
    }
  }
  return s;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MaskSpec mask_for_seed(const Settings& s, std::uint64_t seed) {
  MaskSpec spec = s.mask;
  spec.seed = mix_seed(s.mask.seed, seed);
  return spec;
}

NetworkGraph make_graph(const Settings& s) { return build_topology(s.topology, s.nodes); }

// ---------------------------------------------------------------------------
// Per-seed pipelines

struct SeedRun {
  std::uint64_t seed = 0;
  ConvergenceTrace trace;
  std::optional<ConvergenceTrace> central_trace;
  double objective = kNaN;
  int iterations = 0;
  bool converged = false;
  double metric = kNaN;
  Json record;
  std::optional<Eigen::MatrixXd> structure;
};

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

void fill_common(SeedRun& run, const DistributedResult& r) {
  run.trace = r.trace;
  run.objective = r.trace.empty() ? kNaN : r.trace.back().objective;
  run.iterations = r.iterations;
  run.converged = r.converged;
  run.record["seed"] = run.seed;
  run.record["objective"] = number_or_null(run.objective);
  run.record["iterations"] = run.iterations;
  run.record["converged"] = run.converged;
  run.record["variance_fallbacks"] = r.diagnostics.quadratic_fallbacks;
  if (!r.trace.empty()) {
    run.record["primal_residual"] = r.trace.back().primal_residual;
    run.record["max_edge_gap"] = r.trace.back().max_edge_gap;
  }
}

FitResult central_fit(const Eigen::MatrixXd& x, const ObservationMask& mask,
                      const BpcaModelConfig& cfg, const Settings& s) {
  return fit_centralized(x, mask, cfg, {s.solver.seed, s.solver.tol, s.centralized_max_iter});
}

double missing_fraction(const ObservationMask& mask) {
  return 1.0 - static_cast<double>(mask.observed_count()) /
                   static_cast<double>(mask.rows() * static_cast<long>(mask.cols()));
}

SeedRun run_synth(const Settings& s, std::uint64_t seed) {
  const Json& d = s.data;
  const Eigen::MatrixXd x =
      generate_gaussian_samples(d.at("dim").get<int>(), d.at("samples").get<int>(),
                                d.at("mean").get<double>(), d.at("variance").get<double>(), seed);
  const ObservationMask mask = make_mask(mask_for_seed(s, seed), x);
  const BpcaModelConfig cfg = model_config(s, static_cast<int>(x.rows()));
  const NetworkGraph graph = make_graph(s);
  const DataPartition part = partition_equal(static_cast<int>(x.cols()), graph, seed, s.shuffle);

  auto engine = DistributedSolver::from_partition(x, mask, graph, part, cfg, s.solver);
  const DistributedResult r = engine.run();
  SeedRun run;
  run.seed = seed;
  fill_common(run, r);
  run.record["relative_edge_gap"] = engine.residual().relative_gap;
  if (s.centralized) {
    const FitResult c = central_fit(x, mask, cfg, s);
    const double ref = c.trace.back().objective;
    run.central_trace = c.trace;
    run.metric = std::abs(run.objective - ref) / std::abs(ref);
    run.record["centralized_objective"] = ref;
    run.record["centralized_iterations"] = c.iterations;
    run.record["relative_objective_gap"] = number_or_null(run.metric);
  }
  return run;
}

SeedRun run_cube(const Settings& s, std::uint64_t seed) {
  const CubeScene scene = generate_cube_sequence(cube_options(s.data), seed);
  const MeasurementMatrix meas = assemble_measurement(scene);
  const ObservationMask mask = make_mask(mask_for_seed(s, seed), meas.values, &scene);
  const BpcaModelConfig cfg = model_config(s, static_cast<int>(meas.values.rows()));
  const NetworkGraph graph = make_graph(s);

  const DistributedResult r =
      fit_distributed(meas.values, mask, graph, meas.blocks, cfg, s.solver);
  SeedRun run;
  run.seed = seed;
  fill_common(run, r);
  run.structure = consensus_structure(r.posteriors);
  run.metric = max_subspace_angle(*run.structure, scene.points3d);
  run.record["noise_sigma"] = scene.noise_sigma;
  run.record["missing_fraction"] = missing_fraction(mask);
  run.record["angle_deg"] = run.metric;
  if (mask.complete()) {
    run.record["svd_angle_deg"] = max_subspace_angle(svd_baseline(meas.values), scene.points3d);
  }
  if (s.centralized) {
    const FitResult c = central_fit(meas.values, mask, cfg, s);
    run.central_trace = c.trace;
    run.record["centralized_angle_deg"] =
        max_subspace_angle(c.posterior.w_mean, scene.points3d);
  }
  return run;
}

SeedRun run_cube_online(const Settings& s, std::uint64_t seed) {
  const CubeScene scene = generate_cube_sequence(cube_options(s.data), seed);
  const MeasurementMatrix meas = assemble_measurement(scene);
  const ObservationMask mask = make_mask(mask_for_seed(s, seed), meas.values, &scene);
  const BpcaModelConfig cfg = model_config(s, static_cast<int>(meas.values.rows()));
  const auto schedule = online_schedule(scene, s.data.at("initial_frames").get<int>(),
                                        s.data.at("increment").get<int>());

  const OnlineRun online = run_online_dbpca(scene, mask, schedule, make_graph(s), cfg, s.solver);
  SeedRun run;
  run.seed = seed;
  fill_common(run, online.final_state);
  run.trace = online.trace;
  run.iterations = online.trace.size();
  run.record["iterations"] = run.iterations;
  run.structure = consensus_structure(online.final_state.posteriors);
  run.metric = online.steps.back().angle_deg;
  run.record["noise_sigma"] = scene.noise_sigma;
  run.record["angle_deg"] = run.metric;
  Json steps = Json::array();
  for (std::size_t k = 0; k < online.steps.size(); ++k) {
    const OnlineStepResult& st = online.steps[k];
    Json row = Json::object();
    row["step"] = k;
    row["frames"] = st.frames;
    row["angle_deg"] = st.angle_deg;
    row["iterations"] = st.iterations;
    row["converged"] = st.converged;
    steps.push_back(row);
  }
  run.record["steps"] = steps;
  if (s.centralized) {
    const FitResult c = central_fit(meas.values, mask, cfg, s);
    run.central_trace = c.trace;
    const double central = max_subspace_angle(c.posterior.w_mean, scene.points3d);
    run.record["centralized_angle_deg"] = central;
    run.record["angle_gap_deg"] = std::abs(run.metric - central);
  }
  return run;
}

SeedRun run_matrix_completion(const Settings& s, std::uint64_t seed) {
  const Json& d = s.data;
  const RatingsData ratings = generate_lowrank_ratings(
      d.at("rows").get<int>(), d.at("cols").get<int>(), d.at("rank").get<int>(),
      d.at("noise_sigma").get<double>(), d.at("observed_fraction").get<double>(), seed,
      d.at("probe_fraction").get<double>());
  const int cols = static_cast<int>(ratings.values.cols());
  const BpcaModelConfig cfg = model_config(s, static_cast<int>(ratings.values.rows()));
  const NetworkGraph graph = make_graph(s);
  const DataPartition part = partition_equal(cols, graph, seed, s.shuffle);

  auto engine =
      DistributedSolver::from_partition(ratings.values, ratings.train, graph, part, cfg, s.solver);
  const DistributedResult r = engine.run();
  SeedRun run;
  run.seed = seed;
  fill_common(run, r);
  run.metric = reconstruction_rmse(ratings.values, ratings.probe,
                                   distributed_reconstruction(engine.nodes(), cols));
  run.record["probe_rmse"] = run.metric;
  run.record["baseline_rmse"] = reconstruction_rmse(
      ratings.values, ratings.probe, column_mean_prediction(ratings.values, ratings.train));
  if (s.centralized) {
    const FitResult c = central_fit(ratings.values, ratings.train, cfg, s);
    run.central_trace = c.trace;
    const double central = reconstruction_rmse(ratings.values, ratings.probe, c.posterior);
    run.record["centralized_rmse"] = central;
    run.record["relative_rmse_gap"] = std::abs(run.metric - central) / central;
  }
  return run;
}

SeedRun run_load_tracks(const Settings& s, std::uint64_t seed) {
  const PointTracks tracks = read_point_tracks(s.data.at("path").get<std::string>());
  ObservationMask::Grid grid = tracks.mask;
  if (s.mask.kind == MaskKind::kMar) {
    const ObservationMask mar = generate_mar_mask(
        static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), s.mask.missing_ratio,
        mask_for_seed(s, seed).seed);
    grid = grid.cwiseProduct(mar.grid());
  }
  const ObservationMask mask(std::move(grid));
  const BpcaModelConfig cfg = model_config(s, static_cast<int>(tracks.values.rows()));
  const NetworkGraph graph = make_graph(s);
  const int frames = static_cast<int>(tracks.values.cols()) / 2;
  const DataPartition by_frame = partition_equal(frames, graph, seed, s.shuffle);
  DataPartition part;
  for (const auto& block : by_frame.assignment) {
    std::vector<int> cols;
    for (int f : block) {
      cols.push_back(2 * f);
      cols.push_back(2 * f + 1);
    }
    part.assignment.push_back(std::move(cols));
  }

  const DistributedResult r = fit_distributed(tracks.values, mask, graph, part, cfg, s.solver);
  SeedRun run;
  run.seed = seed;
  fill_common(run, r);
  run.structure = consensus_structure(r.posteriors);
  run.record["missing_fraction"] = missing_fraction(mask);
  const std::string truth_path = s.data.at("truth_path").get<std::string>();
  if (!truth_path.empty()) {
    const Eigen::MatrixXd truth = read_matrix_csv(truth_path);
    if (truth.rows() != run.structure->rows() || truth.cols() != run.structure->cols()) {
      throw ConfigError("data.truth_path: expected a " + std::to_string(run.structure->rows()) +
                        " x " + std::to_string(run.structure->cols()) + " matrix");
    }
    run.metric = max_subspace_angle(*run.structure, truth);
    run.record["angle_deg"] = run.metric;
    if (mask.complete()) {
      run.record["svd_angle_deg"] = max_subspace_angle(svd_baseline(tracks.values), truth);
    }
  }
  return run;
}

SeedRun run_seed(const Settings& s, std::uint64_t seed) {
  switch (s.kind) {
    case ExperimentKind::kSynthConvergence: return run_synth(s, seed);
    case ExperimentKind::kCubeSfm: return run_cube(s, seed);
    case ExperimentKind::kCubeSfmOnline: return run_cube_online(s, seed);
    case ExperimentKind::kMatrixCompletion: return run_matrix_completion(s, seed);
    case ExperimentKind::kLoadTracks: return run_load_tracks(s, seed);
  }
  throw ConfigError("experiment: unsupported kind");
}

// ---------------------------------------------------------------------------
// Output

std::string csv_field(double v) { return std::isfinite(v) ? format_double(v) : "nan"; }

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  return out;
}

void finish_output(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError(path.string() + ": write failed");
}

void write_json(const fs::path& path, const Json& value) {
  auto out = open_output(path);
  out << value.dump(2) << '\n';
  finish_output(out, path);
}

void write_seed_table(const fs::path& out_dir, const Settings& s, const std::vector<SeedRun>& runs) {
  const fs::path path =
      out_dir / (s.kind == ExperimentKind::kCubeSfmOnline ? "steps.csv" : "seeds.csv");
  auto out = open_output(path);
  switch (s.kind) {
    case ExperimentKind::kCubeSfm:
      out << "seed,noise,angle,iterations\n";
      for (const auto& r : runs) {
        out << r.seed << ',' << csv_field(r.record.at("noise_sigma").get<double>()) << ','
            << csv_field(r.metric) << ',' << r.iterations << '\n';
      }
      break;
    case ExperimentKind::kCubeSfmOnline:
      out << "seed,step,frames,angle,iterations,converged\n";
      for (const auto& r : runs) {
        for (const Json& st : r.record.at("steps")) {
          out << r.seed << ',' << st.at("step").get<int>() << ',' << st.at("frames").get<int>()
              << ',' << csv_field(st.at("angle_deg").get<double>()) << ','
              << st.at("iterations").get<int>() << ',' << (st.at("converged").get<bool>() ? 1 : 0)
              << '\n';
        }
      }
      break;
    default:
      out << "seed,final_objective,iterations,converged,metric\n";
      for (const auto& r : runs) {
        out << r.seed << ',' << csv_field(r.objective) << ',' << r.iterations << ','
            << (r.converged ? 1 : 0) << ',' << csv_field(r.metric) << '\n';
      }
      break;
  }
  finish_output(out, path);
}

Json summarise(const std::vector<SeedRun>& runs) {
  Json summary = Json::object();
  int converged = 0;
  double metric_sum = 0.0;
  int metric_count = 0;
  for (const auto& r : runs) {
    converged += r.converged ? 1 : 0;
    if (std::isfinite(r.metric)) {
      metric_sum += r.metric;
      ++metric_count;
    }
  }
  summary["completed_seeds"] = runs.size();
  summary["converged_seeds"] = converged;
  summary["mean_metric"] =
      metric_count > 0 ? Json(metric_sum / metric_count) : Json(nullptr);
  return summary;
}

const char* metric_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSynthConvergence: return "relative_objective_gap";
    case ExperimentKind::kCubeSfm:
    case ExperimentKind::kCubeSfmOnline:
    case ExperimentKind::kLoadTracks: return "angle_deg";
    case ExperimentKind::kMatrixCompletion: return "probe_rmse";
  }
  return "metric";
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError(dir.string() + ": cannot create output directory");
  }
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = text.find(sep, start);
    parts.emplace_back(text.substr(start, end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return parts;
}

std::string value_label(const Json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (const auto& k : kKindNames) {
    if (name == k.name) return k.kind;
  }
  throw ConfigError("experiment: unknown experiment '" + std::string(name) +
                    "' (expected synth-convergence, cube-sfm, cube-sfm-online, "
                    "matrix-completion or load-tracks)");
}

const char* experiment_kind_name(ExperimentKind kind) {
  for (const auto& k : kKindNames) {
    if (k.kind == kind) return k.name;
  }
  return "unknown";
}

Json default_config(ExperimentKind kind) {
  int latent_dim = 3;
  int max_iter = 1000;
  int nodes = 5;
  Json data = Json::object();
  switch (kind) {
    case ExperimentKind::kSynthConvergence:
      latent_dim = 5;
      max_iter = 200;
      data["dim"] = 50;
      data["samples"] = 250;
      data["mean"] = 5.0;
      data["variance"] = 0.8;
      break;
    case ExperimentKind::kCubeSfm:
      data = cube_data_defaults();
      break;
    case ExperimentKind::kCubeSfmOnline:
      data = cube_data_defaults();
      max_iter = 300;
      data["initial_frames"] = 10;
      data["increment"] = 5;
      break;
    case ExperimentKind::kMatrixCompletion:
      latent_dim = 12;
      max_iter = 1500;
      nodes = 10;
      data["rows"] = 200;
      data["cols"] = 1000;
      data["rank"] = 12;
      data["noise_sigma"] = 0.1;
      data["observed_fraction"] = 0.2;
      data["probe_fraction"] = 0.1;
      break;
    case ExperimentKind::kLoadTracks:
      data["path"] = "";
      data["truth_path"] = "";
      break;
  }
  data["seeds"] = Json::array({1});
  Json mask = Json::object();
  mask["kind"] = "none";
  mask["missing_ratio"] = 0.2;
  mask["quantile"] = 0.2;
  mask["seed"] = 1;
  data["mask"] = mask;

  Json model = Json::object();
  model["latent_dim"] = latent_dim;
  model["data_dim"] = 0;
  model["prior_mean_mu"] = 0.0;
  model["prior_mean_w"] = 0.0;
  model["tau"] = hyper_defaults();
  model["alpha"] = hyper_defaults();
  model["theta"] = hyper_defaults();

  Json solver = Json::object();
  solver["eta"] = 10.0;
  solver["tol"] = 1e-3;
  solver["max_iter"] = max_iter;
  solver["consensus_tol"] = 1e-3;
  solver["seed"] = 1;
  solver["threads"] = 1;

  Json network = Json::object();
  network["topology"] = "ring";
  network["nodes"] = nodes;
  network["shuffle"] = false;

  Json reference = Json::object();
  reference["centralized"] = kind != ExperimentKind::kLoadTracks;
  reference["max_iter"] = 1000;

  Json config = Json::object();
  config["experiment"] = experiment_kind_name(kind);
  config["output_dir"] = "out";
  config["model"] = model;
  config["solver"] = solver;
  config["network"] = network;
  config["reference"] = reference;
  config["data"] = data;
  return config;
}

Json resolve_config(const Json& user) {
  if (!user.is_object()) throw ConfigError("config: top level must be an object");
  const auto kind_it = user.find("experiment");
  if (kind_it == user.end()) throw ConfigError("experiment: missing");
  if (!kind_it->is_string()) throw ConfigError("experiment: expected string");
  Json resolved = default_config(parse_experiment_kind(kind_it->get<std::string>()));
  for (auto it = user.begin(); it != user.end(); ++it) {
    auto slot = resolved.find(it.key());
    if (slot == resolved.end()) throw ConfigError(it.key() + ": unknown key");
    assign_checked(*slot, *it, it.key());
  }
  read_settings(resolved);
  return resolved;
}

Json load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open config");
  Json user;
  try {
    user = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (user.is_object()) {
    auto data = user.find("data");
    if (data != user.end() && data->is_object()) {
      for (const char* key : {"path", "truth_path"}) {
        auto p = data->find(key);
        if (p != data->end() && p->is_string() && !p->get<std::string>().empty()) {
          const fs::path file = p->get<std::string>();
          if (file.is_relative()) *p = (path.parent_path() / file).lexically_normal().string();
        }
      }
    }
  }
  return resolve_config(user);
}

void set_config_value(Json& resolved, std::string_view dotted_key, const Json& value) {
  const std::vector<std::string> parts = split(dotted_key, '.');
  Json updated = resolved;
  Json* slot = &updated;
  for (const std::string& part : parts) {
    if (!slot->is_object() || !slot->contains(part)) {
      throw ConfigError(std::string(dotted_key) + ": no such parameter");
    }
    slot = &(*slot)[part];
  }
  if (parts.front() == "experiment") throw ConfigError("experiment: cannot be overridden");
  assign_checked(*slot, value, std::string(dotted_key));
  read_settings(updated);
  resolved = std::move(updated);
}

void override_seed(Json& resolved, std::uint64_t seed) {
  resolved["solver"]["seed"] = seed;
  resolved["data"]["seeds"] = Json::array({seed});
  read_settings(resolved);
}

std::string config_hash(const Json& resolved) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : resolved.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

RunOutcome run_experiment(const Json& resolved, const fs::path& out_dir) {
  const Settings s = read_settings(resolved);
  const std::string hash = config_hash(resolved);
  ensure_directory(out_dir);
  Json echo = Json::object();
  echo["config_hash"] = hash;
  echo["config"] = resolved;
  write_json(out_dir / "config-echo.json", echo);

  std::vector<SeedRun> runs;
  Json diverged = Json::array();
  RunOutcome outcome;
  for (std::uint64_t seed : s.seeds) {
    try {
      runs.push_back(run_seed(s, seed));
    } catch (const DivergenceError& e) {
      outcome.diverged_seeds.push_back(seed);
      Json entry = Json::object();
      entry["seed"] = seed;
      entry["message"] = e.what();
      diverged.push_back(entry);
    }
  }

  if (!runs.empty()) {
    const SeedRun& first = runs.front();
    write_trace_csv(out_dir / "trace.csv", first.trace);
    if (first.central_trace) write_trace_csv(out_dir / "central_trace.csv", *first.central_trace);
    if (first.structure) write_matrix_csv(out_dir / "structure.csv", *first.structure);
    if (runs.size() > 1) {
      for (const auto& r : runs) {
        write_trace_csv(out_dir / ("trace_seed_" + std::to_string(r.seed) + ".csv"), r.trace);
      }
    }
    write_seed_table(out_dir, s, runs);
    outcome.final_objective = first.objective;
    outcome.iterations = first.iterations;
    outcome.converged = first.converged;
    outcome.metric = first.metric;
  } else {
    outcome.final_objective = kNaN;
    outcome.metric = kNaN;
  }

  Json results = Json::object();
  results["experiment"] = experiment_kind_name(s.kind);
  results["config_hash"] = hash;
  results["metric"] = metric_name(s.kind);
  Json seeds = Json::array();
  for (const auto& r : runs) seeds.push_back(r.record);
  results["seeds"] = seeds;
  results["diverged"] = diverged;
  results["summary"] = summarise(runs);
  write_json(out_dir / "results.json", results);
  outcome.results = std::move(results);
  return outcome;
}

std::vector<SweepRow> run_sweep(const Json& resolved, std::string_view dotted_key,
                                const std::vector<Json>& values, const fs::path& out_dir,
                                int parallel) {
  if (values.empty()) throw ConfigError("sweep: --values is empty");
  if (parallel < 1) throw ConfigError("sweep: --parallel must be >= 1");
  const Settings base = read_settings(resolved);

  struct Job {
    Json config;
    std::size_t value_index;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < values.size(); ++v) {
    Json config = resolved;
    set_config_value(config, dotted_key, values[v]);
    for (std::uint64_t seed : base.seeds) {
      Json single = config;
      single["data"]["seeds"] = Json::array({seed});
      jobs.push_back({std::move(single), v, seed,
                      out_dir / ("value_" + std::to_string(v) + "_seed_" + std::to_string(seed))});
    }
  }
  ensure_directory(out_dir);
  Json echo = Json::object();
  echo["config_hash"] = config_hash(resolved);
  echo["config"] = resolved;
  echo["sweep"] = {{"param", std::string(dotted_key)}, {"values", values}};
  write_json(out_dir / "config-echo.json", echo);

  std::vector<SweepRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const RunOutcome r = run_experiment(jobs[j].config, jobs[j].dir);
        SweepRow& row = rows[j];
        row.value = values[jobs[j].value_index];
        row.seed = jobs[j].seed;
        row.final_objective = r.final_objective;
        row.iterations = r.iterations;
        row.converged = r.converged;
        row.metric = r.metric;
        row.diverged = !r.diverged_seeds.empty();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  {
    const int workers = std::min<int>(parallel, static_cast<int>(jobs.size()));
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  const fs::path path = out_dir / "sweep.csv";
  auto out = open_output(path);
  out << "value,seed,final_objective,iterations,converged,metric\n";
  for (const SweepRow& row : rows) {
    out << value_label(row.value) << ',' << row.seed << ',' << csv_field(row.final_objective)
        << ',' << row.iterations << ',' << (row.converged ? 1 : 0) << ','
        << csv_field(row.metric) << '\n';
  }
  finish_output(out, path);
  return rows;
}

std::vector<Json> parse_value_list(std::string_view text) {
  std::vector<Json> values;
  for (const std::string& item : split(text, ',')) {
    if (item.empty()) throw ConfigError("sweep: empty entry in --values");
    Json parsed = Json::parse(item, nullptr, false);
    if (parsed.is_discarded() || parsed.is_object() || parsed.is_array() || parsed.is_null()) {
      values.emplace_back(item);
    } else {
      values.push_back(std::move(parsed));
    }
  }
  return values;
}

Json error_record(std::string_view kind, std::string_view message) {
  Json record = Json::object();
  record["error"] = std::string(kind);
  record["message"] = std::string(message);
  return record;
}

}  // namespace dmfvi
