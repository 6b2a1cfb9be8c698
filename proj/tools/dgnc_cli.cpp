// dgnc command-line runner: gen, solve, bench, deform.
//
// Exit codes: 0 ok, 1 run failure, 2 usage or IO error.

#include "dgnc/bench.hpp"
#include "dgnc/eval.hpp"
#include "dgnc/lmo.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace dgnc;

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kUsage = 2;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename F>
auto io(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw IoFailure(e.what());
  }
}

struct GridArgs {
  std::size_t rows = 15;
  std::size_t cols = 20;
  double loop_prob = 0.3;
  double noise_rot = 0.002;
  double noise_tr = 0.02;
  double sigma_rot = 0.01;
  double sigma_tr = 0.1;

  void add(CLI::App* app) {
    app->add_option("--rows", rows, "Grid rows")->capture_default_str();
    app->add_option("--cols", cols, "Grid columns")->capture_default_str();
    app->add_option("--loop-prob", loop_prob, "Loop closure probability")->capture_default_str();
    app->add_option("--noise-rot", noise_rot, "Measurement noise, rad")->capture_default_str();
    app->add_option("--noise-tr", noise_tr, "Measurement noise, m")->capture_default_str();
    app->add_option("--sigma-rot", sigma_rot, "Std-dev behind the rotation precision, rad")->capture_default_str();
    app->add_option("--sigma-tr", sigma_tr, "Std-dev behind the translation precision, m")->capture_default_str();
  }
  [[nodiscard]] GridOptions options(std::size_t robots, std::uint64_t seed) const {
    GridOptions o;
    o.rows = rows;
    o.cols = cols;
    o.robots = robots;
    o.loop_prob = loop_prob;
    o.noise_rot = noise_rot;
    o.noise_tr = noise_tr;
    o.sigma_rot = sigma_rot;
    o.sigma_tr = sigma_tr;
    o.seed = seed;
    return o;
  }
};

struct RbcdArgs {
  int rank = 5;
  int iters = 15;
  int local_iters = 1;
  int es_cap = 50;

  void add(CLI::App* app) {
    app->add_option("--rank", rank, "Relaxation rank")->capture_default_str();
    app->add_option("--rbcd-iters", iters, "RBCD block updates per variable update")->capture_default_str();
    app->add_option("--local-iters", local_iters, "Local solver steps per block update")->capture_default_str();
    app->add_option("--es-cap", es_cap, "Total block updates for D-GNC-ES")->capture_default_str();
  }
  [[nodiscard]] BenchOptions options() const {
    BenchOptions o;
    o.rbcd.rank = rank;
    o.rbcd.iters_per_round = iters;
    o.rbcd.local_iters = local_iters;
    o.es_cap = es_cap;
    return o;
  }
};

/// Base graph from a dataset file or a synthetic grid, split into robots.
struct Source {
  std::string dataset;
  std::size_t robots = 3;
  std::uint64_t grid_seed = 0;
  GridArgs grid;

  void add(CLI::App* app) {
    app->add_option("--dataset", dataset, "g2o dataset; a synthetic grid when absent");
    app->add_option("--robots", robots, "Robots to partition a single-robot dataset into")->capture_default_str();
    app->add_option("--grid-seed", grid_seed, "Seed of the synthetic grid")->capture_default_str();
    grid.add(app);
  }

  [[nodiscard]] MultiRobotPoseGraph load() const {
    if (dataset.empty()) return synth_grid(grid.options(robots, grid_seed));
    MultiRobotPoseGraph g = io([&] { return load_dataset(dataset); });
    for (Edge& e : g.edges) {
      if (e.is_loop() && !e.truth) e.truth = Truth::Inlier;  // untagged datasets: loops taken as inliers
    }
    if (g.robots().size() == 1 && robots > 1) g = partition(g, robots);
    return g;
  }
};

MultiRobotPoseGraph with_outliers(const MultiRobotPoseGraph& g, double ratio, std::uint64_t seed) {
  if (ratio <= 0.0) return g;
  OutlierOptions o;
  o.ratio = ratio;
  o.seed = seed;
  return inject_outliers(g, o);
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

BenchRow make_row(const MethodRun& run, const MultiRobotPoseGraph& g, const PoseMap& ml, std::uint64_t seed,
                  double ratio, double threshold) {
  BenchRow row;
  row.method = to_string(run.method);
  row.seed = seed;
  row.outlier_ratio = ratio;
  row.threshold = threshold;
  row.cost = run.cost;
  row.bytes = run.bytes;
  row.wall_ms = run.wall_ms;
  row.status = run.status;
  row.ate_m = std::nan("");
  row.precision = std::nan("");
  row.recall = std::nan("");
  if (!run.weights.empty()) {
    const ClassificationReport c = classification_report(g, run.weights);
    row.precision = c.precision;
    row.recall = c.recall;
  }
  if (run.poses.size() == ml.size()) row.ate_m = ate(run.poses, ml).rmse;
  return row;
}

int cmd_gen(const Source& src, double ratio, std::uint64_t seed, const std::string& out) {
  const MultiRobotPoseGraph g = with_outliers(src.load(), ratio, seed);
  io([&] {
    save_dataset(g, out);
    return 0;
  });
  std::cout << "wrote " << out << ": " << g.nodes.size() << " poses, " << g.edges.size() << " edges, "
            << g.robots().size() << " robots\n";
  return kOk;
}

int cmd_solve(const Source& src, const RbcdArgs& rbcd, const std::string& method_name, double probability,
              double ratio, std::uint64_t seed, const std::string& ledger_path, const std::string& traj_out) {
  const auto method = method_from_string(method_name);
  if (!method) throw CLI::ValidationError("--method", "unknown method " + method_name);
  const MultiRobotPoseGraph g = with_outliers(src.load(), ratio, seed);
  DgncConfig base;
  base.rbcd = rbcd.options().rbcd;
  base.seed = seed;
  const MethodRun run = run_method(*method, g, probability, rbcd.options(), &base);
  const PoseMap ml = ml_reference(g);
  const BenchRow row = make_row(run, g, ml, seed, ratio, probability);
  std::cout << "method " << row.method << "\nate_m " << row.ate_m << "\nprecision " << row.precision << "\nrecall "
            << row.recall << "\ncost " << row.cost << "\nbytes " << row.bytes << "\nwall_ms " << row.wall_ms
            << "\nstatus " << row.status << "\n";
  if (!ledger_path.empty() && run.ledger) io([&] {
      run.ledger->write_csv(ledger_path);
      return 0;
    });
  if (!traj_out.empty() && !run.poses.empty()) io([&] {
      write_g2o_vertices(run.poses, traj_out);
      return 0;
    });
  return run.status.starts_with("error") ? kRunFailure : kOk;
}

int cmd_bench(const Source& src, const RbcdArgs& rbcd, const std::vector<double>& ratios,
              const std::vector<double>& thresholds, int seeds, std::uint64_t first_seed,
              const std::vector<std::string>& method_names, const std::string& out_dir, bool timing) {
  std::vector<Method> methods;
  for (const std::string& n : method_names) {
    const auto m = method_from_string(n);
    if (!m) throw CLI::ValidationError("--methods", "unknown method " + n);
    methods.push_back(*m);
  }
  if (methods.empty()) methods = all_methods();
  const MultiRobotPoseGraph base = src.load();
  const PoseMap ml = ml_reference(base);

  io([&] {
    fs::create_directories(fs::path(out_dir) / "ledgers");
    return 0;
  });
  std::ofstream csv(fs::path(out_dir) / "results.csv");
  if (!csv) throw IoFailure("cannot write " + (fs::path(out_dir) / "results.csv").string());
  csv << csv_header() << '\n';

  bool failed = false;
  for (double ratio : ratios) {
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(s);
      const MultiRobotPoseGraph g = with_outliers(base, ratio, seed);
      for (double p : thresholds) {
        for (Method m : methods) {
          DgncConfig cfg;
          cfg.rbcd = rbcd.options().rbcd;
          cfg.seed = seed;
          const MethodRun run = run_method(m, g, p, rbcd.options(), &cfg);
          const BenchRow row = make_row(run, g, ml, seed, ratio, p);
          failed = failed || run.status.starts_with("error");
          csv << to_csv(row, timing) << '\n';
          if (run.ledger) {
            const std::string name = std::string(to_string(m)) + "_r" + format_number(ratio) + "_p" +
                                     format_number(p) + "_s" + std::to_string(seed) + ".csv";
            io([&] {
              run.ledger->write_csv(fs::path(out_dir) / "ledgers" / name);
              return 0;
            });
          }
          std::cerr << row.method << " ratio " << ratio << " p " << p << " seed " << seed << ": ate " << row.ate_m
                    << " " << row.status << '\n';
        }
      }
    }
  }
  csv.flush();
  if (!csv) throw IoFailure("write failed: results.csv");
  return failed ? kRunFailure : kOk;
}

int cmd_deform(const std::string& mesh_in, const std::string& before, const std::string& after, double voxel,
               double range, int k_nn, const std::string& out) {
  const TriMesh mesh = io([&] { return load_mesh(mesh_in); });
  const PoseMap x0 = io([&] { return read_g2o_vertices(before); });
  const PoseMap x1 = io([&] { return read_g2o_vertices(after); });
  if (x0.size() != x1.size()) throw IoFailure("trajectory files list different keyframes");

  const Simplified simple = simplify(mesh, voxel);
  std::vector<Keyframe> keyframes;
  std::vector<Pose3d> anchors;
  for (const auto& [id, pose] : x0) {
    const auto it = x1.find(id);
    if (it == x1.end()) throw IoFailure("keyframe " + std::to_string(id.g2o_id()) + " missing after optimization");
    keyframes.push_back({pose, visible_nodes(simple.mesh, pose, range)});
    anchors.push_back(it->second);
  }
  const DeformationGraph graph = build_graph(simple.mesh, keyframes);
  const DeformResult res = deform(graph, anchors);
  const TriMesh deformed = interpolate(mesh, res.graph, k_nn);
  io([&] {
    save_mesh(deformed, out);
    return 0;
  });
  std::cout << "nodes " << graph.mesh_nodes.size() << " keyframes " << graph.keyframes.size() << " cost " << res.cost
            << " iterations " << res.iterations << "\nwrote " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed robust pose-graph optimization and mesh deformation"};
  app.set_config("--config", "", "TOML/INI configuration; command-line flags take precedence");
  app.require_subcommand(1);

  Source src;
  RbcdArgs rbcd;
  double ratio = 0.0;
  double probability = 0.5;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen", "Write a synthetic multi-robot dataset");
  std::string gen_out;
  src.add(gen);
  gen->add_option("--outliers", ratio, "Outlier fraction of all loop closures")->capture_default_str();
  gen->add_option("--seed", seed, "Outlier seed")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "Output g2o path")->required();

  auto* solve = app.add_subcommand("solve", "Single run: prints ATE, cost and bytes");
  std::string method = "D-GNC";
  std::string ledger_out;
  std::string traj_out;
  Source solve_src;
  solve_src.add(solve);
  rbcd.add(solve);
  solve->add_option("--method", method, "L2, PCM, PCM+GNC, GNC, D-GNC, D-GNC-naive, D-GNC-ES, centralized-GNC")
      ->capture_default_str();
  solve->add_option("--probability", probability, "TLS threshold probability")->capture_default_str();
  solve->add_option("--outliers", ratio, "Outlier ratio")->capture_default_str();
  solve->add_option("--seed", seed, "Run seed")->capture_default_str();
  solve->add_option("--ledger", ledger_out, "Write the communication ledger CSV");
  solve->add_option("--trajectory", traj_out, "Write the estimate as g2o vertices");

  auto* bench = app.add_subcommand("bench", "Monte-Carlo method sweep to CSV");
  Source bench_src;
  RbcdArgs bench_rbcd;
  std::vector<double> ratios{0.1, 0.7};
  std::vector<double> thresholds{0.5};
  int seeds = 10;
  std::uint64_t first_seed = 0;
  std::vector<std::string> methods;
  std::string out_dir = "bench_out";
  bool timing = false;
  bench_src.add(bench);
  bench_rbcd.add(bench);
  bench->add_option("--ratios", ratios, "Outlier ratios")->delimiter(',')->capture_default_str();
  bench->add_option("--thresholds", thresholds, "TLS threshold probabilities")->delimiter(',')->capture_default_str();
  bench->add_option("--seeds", seeds, "Monte-Carlo seeds per setting")->check(CLI::PositiveNumber)->capture_default_str();
  bench->add_option("--first-seed", first_seed, "First seed")->capture_default_str();
  bench->add_option("--methods", methods, "Methods to run (default: all)")->delimiter(',');
  bench->add_option("-o,--out-dir", out_dir, "Output directory")->capture_default_str();
  bench->add_flag("--timing", timing, "Record wall_ms (makes the CSV run-dependent)");

  auto* def = app.add_subcommand("deform", "Deform a mesh to follow an optimized trajectory");
  std::string mesh_in, before, after, mesh_out;
  double voxel = 0.5;
  double range = 5.0;
  int k_nn = 4;
  def->add_option("--mesh", mesh_in, "Input OBJ (labels from <name>.labels.csv)")->required();
  def->add_option("--before", before, "Keyframe poses the mesh was built with (g2o vertices)")->required();
  def->add_option("--after", after, "Optimized keyframe poses (g2o vertices)")->required();
  def->add_option("--voxel", voxel, "Simplification voxel, m")->check(CLI::PositiveNumber)->capture_default_str();
  def->add_option("--range", range, "Keyframe visibility range, m")->capture_default_str();
  def->add_option("--k-nn", k_nn, "Nodes blended per vertex")->check(CLI::PositiveNumber)->capture_default_str();
  def->add_option("-o,--out", mesh_out, "Output OBJ")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(src, ratio, seed, gen_out);
    if (*solve) return cmd_solve(solve_src, rbcd, method, probability, ratio, seed, ledger_out, traj_out);
    if (*bench)
      return cmd_bench(bench_src, bench_rbcd, ratios, thresholds, seeds, first_seed, methods, out_dir, timing);
    if (*def) return cmd_deform(mesh_in, before, after, voxel, range, k_nn, mesh_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kUsage;
}
