#include "dgnc/pcm.hpp"

#include "dgnc/gnc.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace dgnc {

std::size_t ConsistencyGraph::degree(std::size_t a) const {
  return static_cast<std::size_t>(adjacency.row(static_cast<Eigen::Index>(a)).count());
}

bool ConsistencyGraph::well_formed() const {
  const auto n = static_cast<Eigen::Index>(vertices.size());
  if (adjacency.rows() != n || adjacency.cols() != n) return false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (adjacency(i, i)) return false;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (adjacency(i, j) != adjacency(j, i)) return false;
    }
  }
  return true;
}

namespace {

struct Oriented {
  NodeId a;  // endpoint on the lower robot id
  NodeId b;
  Pose3d z;  // pose of b relative to a
};

Oriented orient(const Edge& e) {
  if (e.src.robot <= e.dst.robot) return {e.src, e.dst, e.meas};
  return {e.dst, e.src, e.meas.inverse()};
}

const Pose3d& odom_pose(const std::map<RobotId, PoseMap>& odometry, NodeId id) {
  const auto r = odometry.find(id.robot);
  if (r == odometry.end()) throw std::invalid_argument("pcm: missing odometry for robot");
  const auto p = r->second.find(id);
  if (p == r->second.end()) throw std::invalid_argument("pcm: missing odometry for pose");
  return p->second;
}

}  // namespace

double cycle_residual_sq(const Edge& e1, const Edge& e2, const std::map<RobotId, PoseMap>& odometry,
                         const Matrix6d& cov) {
  const Oriented l1 = orient(e1);
  const Oriented l2 = orient(e2);
  if (l1.a.robot != l2.a.robot || l1.b.robot != l2.b.robot) {
    throw std::invalid_argument("pcm: loops join different robot pairs");
  }
  const Pose3d beta = odom_pose(odometry, l1.b).inverse() * odom_pose(odometry, l2.b);
  const Pose3d alpha = odom_pose(odometry, l2.a).inverse() * odom_pose(odometry, l1.a);
  const Pose3d cycle = l1.z * beta * l2.z.inverse() * alpha;
  return (whitening_from_covariance(cov) * boxminus(cycle, Pose3d::identity())).squaredNorm();
}

bool pairwise_consistent(const Edge& e1, const Edge& e2, const std::map<RobotId, PoseMap>& odometry,
                         double threshold_sq, const Matrix6d& cov) {
  return cycle_residual_sq(e1, e2, odometry, cov) <= threshold_sq;
}

ConsistencyGraph build_consistency_graph(const MultiRobotPoseGraph& graph, const std::vector<EdgeId>& loops,
                                         const std::map<RobotId, PoseMap>& odometry, double threshold_sq,
                                         const Matrix6d& cov) {
  ConsistencyGraph cg;
  cg.vertices = loops;
  const auto n = static_cast<Eigen::Index>(loops.size());
  cg.adjacency.setConstant(n, n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const bool ok = pairwise_consistent(graph.edges[loops[static_cast<std::size_t>(i)]],
                                          graph.edges[loops[static_cast<std::size_t>(j)]], odometry,
                                          threshold_sq, cov);
      cg.adjacency(i, j) = ok;
      cg.adjacency(j, i) = ok;
    }
  }
  return cg;
}

namespace {

bool adjacent_to_all(const ConsistencyGraph& cg, std::size_t v, const std::vector<std::size_t>& clique,
                     std::size_t skip = SIZE_MAX) {
  return std::all_of(clique.begin(), clique.end(),
                     [&](std::size_t u) { return u == skip || (u != v && cg.adjacent(u, v)); });
}

// Replaces one member by two outsiders while such a swap exists.
void improve(const ConsistencyGraph& cg, std::vector<std::size_t>& clique) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t k = 0; k < clique.size() && !changed; ++k) {
      const std::size_t out = clique[k];
      std::vector<std::size_t> cand;
      for (std::size_t v = 0; v < cg.size(); ++v) {
        if (std::find(clique.begin(), clique.end(), v) != clique.end()) continue;
        if (adjacent_to_all(cg, v, clique, out)) cand.push_back(v);
      }
      for (std::size_t i = 0; i < cand.size() && !changed; ++i) {
        for (std::size_t j = i + 1; j < cand.size() && !changed; ++j) {
          if (!cg.adjacent(cand[i], cand[j])) continue;
          clique.erase(clique.begin() + static_cast<std::ptrdiff_t>(k));
          clique.push_back(cand[i]);
          clique.push_back(cand[j]);
          changed = true;
        }
      }
    }
  }
}

}  // namespace

std::vector<std::size_t> max_clique(const ConsistencyGraph& cg, std::chrono::milliseconds time_budget,
                                    bool keep_singleton) {
  if (!cg.well_formed()) throw std::invalid_argument("max_clique: malformed consistency graph");
  const std::size_t n = cg.size();
  if (n == 0) return {};
  const auto deadline = std::chrono::steady_clock::now() + time_budget;

  std::vector<std::size_t> deg(n);
  for (std::size_t v = 0; v < n; ++v) deg[v] = cg.degree(v);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return deg[a] > deg[b]; });

  std::vector<std::size_t> best;
  for (std::size_t seed : order) {
    if (deg[seed] + 1 <= best.size()) break;  // no larger clique can contain this seed
    std::vector<std::size_t> clique{seed};
    for (std::size_t v : order) {
      if (v != seed && cg.adjacent(seed, v) && adjacent_to_all(cg, v, clique)) clique.push_back(v);
    }
    if (clique.size() > best.size()) best = std::move(clique);
    if (std::chrono::steady_clock::now() > deadline) break;
  }
  improve(cg, best);
  if (best.size() == 1 && !keep_singleton) best.clear();
  std::sort(best.begin(), best.end());
  for (std::size_t i = 0; i < best.size(); ++i) {
    for (std::size_t j = i + 1; j < best.size(); ++j) {
      if (!cg.adjacent(best[i], best[j])) throw std::logic_error("max_clique: result is not a clique");
    }
  }
  return best;
}

std::set<EdgeId> max_clique_inliers(const ConsistencyGraph& cg, std::chrono::milliseconds time_budget,
                                    bool keep_singleton) {
  std::set<EdgeId> out;
  for (std::size_t v : max_clique(cg, time_budget, keep_singleton)) out.insert(cg.vertices[v]);
  return out;
}

std::set<EdgeId> pcm_select(const MultiRobotPoseGraph& graph, const PcmConfig& cfg) {
  const double threshold_sq = threshold_from_probability(cfg.probability, cfg.dof);
  std::map<RobotId, PoseMap> odometry;
  for (RobotId r : graph.robots()) odometry[r] = graph.odometry_chain(r);

  std::map<std::pair<RobotId, RobotId>, std::vector<EdgeId>> groups;
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    if (!e.is_loop()) continue;
    groups[std::minmax(e.src.robot, e.dst.robot)].push_back(k);
  }
  std::set<EdgeId> kept;
  for (const auto& [pair, loops] : groups) {
    const ConsistencyGraph cg = build_consistency_graph(graph, loops, odometry, threshold_sq, cfg.cov);
    const std::set<EdgeId> in = max_clique_inliers(cg, cfg.time_budget, cfg.keep_singleton);
    kept.insert(in.begin(), in.end());
  }
  return kept;
}

MultiRobotPoseGraph pcm_filter(const MultiRobotPoseGraph& graph, const PcmConfig& cfg) {
  const std::set<EdgeId> kept = pcm_select(graph, cfg);
  MultiRobotPoseGraph out;
  out.nodes = graph.nodes;
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    if (!graph.edges[k].is_loop() || kept.contains(k)) out.edges.push_back(graph.edges[k]);
  }
  return out;
}

std::vector<double> selection_weights(const MultiRobotPoseGraph& graph, const std::set<EdgeId>& kept) {
  std::vector<double> w(graph.edges.size(), 1.0);
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    if (graph.edges[k].is_loop() && !kept.contains(k)) w[k] = 0.0;
  }
  return w;
}

}  // namespace dgnc
