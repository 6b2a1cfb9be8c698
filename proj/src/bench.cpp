#include "dgnc/bench.hpp"

#include "dgnc/eval.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <sstream>

namespace dgnc {

const char* to_string(Method m) {
  switch (m) {
    case Method::L2: return "L2";
    case Method::Pcm: return "PCM";
    case Method::PcmGnc: return "PCM+GNC";
    case Method::Gnc: return "GNC";
    case Method::Dgnc: return "D-GNC";
    case Method::DgncNaive: return "D-GNC-naive";
    case Method::DgncEs: return "D-GNC-ES";
    case Method::CentralGnc: return "centralized-GNC";
  }
  return "?";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> v{Method::L2,   Method::Pcm,       Method::PcmGnc, Method::Gnc,
                                     Method::Dgnc, Method::DgncNaive, Method::DgncEs, Method::CentralGnc};
  return v;
}

std::optional<Method> method_from_string(const std::string& name) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  for (Method m : all_methods()) {
    if (lower(to_string(m)) == lower(name)) return m;
  }
  return std::nullopt;
}

bool is_distributed(Method m) {
  return m == Method::Dgnc || m == Method::DgncNaive || m == Method::DgncEs || m == Method::CentralGnc;
}

bool is_planar(const MultiRobotPoseGraph& graph) {
  for (const auto& [id, node] : graph.nodes) {
    if (!node.initial) return false;
    const Matrix3d& r = node.initial->rot().matrix();
    if (std::abs(node.initial->trans().z()) > 1e-9 || std::abs(r(2, 2) - 1.0) > 1e-9) return false;
  }
  return true;
}

namespace {

PoseMap initial_estimate(const MultiRobotPoseGraph& graph) {
  PoseMap out;
  for (const auto& [id, node] : graph.nodes) {
    if (!node.initial) return spanning_tree_guess(graph, [](const Edge& e) { return !e.is_loop(); });
    out.emplace(id, *node.initial);
  }
  return out;
}

std::vector<double> ones(const MultiRobotPoseGraph& graph) { return std::vector<double>(graph.edges.size(), 1.0); }

void centralized(MethodRun& run, const MultiRobotPoseGraph& graph, const TlsConfig& tls, const PoseMap& init) {
  const GncResult r = centralized_gnc_pgo(graph, tls, init, make_lm_inner_solver());
  run.poses = r.poses;
  run.weights = r.weights;
  if (!r.converged) run.status = "unconverged";
}

}  // namespace

MethodRun run_method(Method method, const MultiRobotPoseGraph& graph, double probability, const BenchOptions& opts,
                     const DgncConfig* dgnc_base) {
  MethodRun run;
  run.method = method;
  const int dof = opts.dof > 0 ? opts.dof : (is_planar(graph) ? 3 : 6);
  const TlsConfig tls = TlsConfig::from_probability(probability, dof);
  DgncConfig cfg = dgnc_base ? *dgnc_base : DgncConfig{};
  if (!dgnc_base) cfg.rbcd = opts.rbcd;
  cfg.tls = tls;
  if (method == Method::DgncEs) cfg.early_stop_total_iters = opts.es_cap;

  const auto t0 = std::chrono::steady_clock::now();
  try {
    switch (method) {
      case Method::L2: {
        run.weights = ones(graph);
        run.poses = solve_weighted_pgo(graph, run.weights, initial_estimate(graph)).poses;
        break;
      }
      case Method::Pcm: {
        PcmConfig pc = opts.pcm;
        pc.probability = probability;
        run.weights = selection_weights(graph, pcm_select(graph, pc));
        run.poses = solve_weighted_pgo(graph, run.weights, initial_estimate(graph)).poses;
        break;
      }
      case Method::PcmGnc: {
        PcmConfig pc = opts.pcm;
        pc.probability = probability;
        const std::set<EdgeId> kept = pcm_select(graph, pc);
        MultiRobotPoseGraph filtered;
        filtered.nodes = graph.nodes;
        std::vector<EdgeId> index;
        for (EdgeId k = 0; k < graph.edges.size(); ++k) {
          if (!graph.edges[k].is_loop() || kept.contains(k)) {
            filtered.edges.push_back(graph.edges[k]);
            index.push_back(k);
          }
        }
        MethodRun inner;
        centralized(inner, filtered, tls, initial_estimate(graph));
        run.poses = std::move(inner.poses);
        run.status = inner.status;
        run.weights.assign(graph.edges.size(), 0.0);
        for (std::size_t j = 0; j < index.size(); ++j) run.weights[index[j]] = inner.weights[j];
        break;
      }
      case Method::Gnc:
        centralized(run, graph, tls, initial_estimate(graph));
        break;
      case Method::Dgnc:
      case Method::DgncEs:
      case Method::DgncNaive: {
        const auto odom = local_odometry(graph);
        DgncResult r = method == Method::DgncNaive ? run_naive_init_dgnc(graph, odom, cfg) : run_dgnc(graph, odom, cfg);
        run.poses = std::move(r.poses);
        run.weights = std::move(r.weights);
        run.block_updates = r.block_updates;
        run.weight_round_messages = std::move(r.weight_round_messages);
        run.bytes = r.ledger.total_bytes();
        if (!r.converged && !r.early_stopped) run.status = "unconverged";
        run.ledger = std::move(r.ledger);
        break;
      }
      case Method::CentralGnc: {
        Network net(graph.robots());
        const InitResult init = distributed_initialization(graph, local_odometry(graph), InitMode::Robust, cfg, net);
        centralized(run, graph, tls, init.poses);
        run.bytes = net.ledger().total_bytes();
        run.ledger = net.ledger();
        break;
      }
    }
    run.cost = pgo_cost(graph, run.weights, run.poses);
  } catch (const SolverError& e) {
    run.status = std::string("error: ") + e.what();
    run.poses = e.last_iterate();
  } catch (const DgncError& e) {
    run.status = std::string("error: ") + e.what();
    run.poses = e.last_iterate();
  } catch (const std::exception& e) {
    run.status = std::string("error: ") + e.what();
    run.poses.clear();
  }
  if (run.status.starts_with("error")) {
    run.cost = std::nan("");
    std::replace(run.status.begin(), run.status.end(), ',', ';');
    std::replace(run.status.begin(), run.status.end(), '\n', ' ');
  }
  run.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

std::string csv_header() {
  return "method,seed,outlier_ratio,threshold,ate_m,precision,recall,cost,bytes,wall_ms,status";
}

std::string to_csv(const BenchRow& row, bool with_timing) {
  std::ostringstream ss;
  ss.precision(10);
  ss << row.method << ',' << row.seed << ',' << row.outlier_ratio << ',' << row.threshold << ',' << row.ate_m << ','
     << row.precision << ',' << row.recall << ',' << row.cost << ',' << row.bytes << ',';
  if (with_timing) ss << row.wall_ms;
  ss << ',' << row.status;
  return ss.str();
}

}  // namespace dgnc
