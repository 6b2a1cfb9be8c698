// Pairwise consistency maximization: loops between the same pair of robots
// are kept only if they form a large mutually consistent set.

#ifndef DGNC_PCM_HPP
#define DGNC_PCM_HPP

#include "dgnc/pose_graph.hpp"

#include <chrono>
#include <map>
#include <set>
#include <vector>

namespace dgnc {

struct ConsistencyGraph {
  std::vector<EdgeId> vertices;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> adjacency;

  [[nodiscard]] std::size_t size() const { return vertices.size(); }
  [[nodiscard]] bool adjacent(std::size_t a, std::size_t b) const { return adjacency(a, b); }
  [[nodiscard]] std::size_t degree(std::size_t a) const;
  /// Symmetric with an empty diagonal.
  [[nodiscard]] bool well_formed() const;
};

struct PcmConfig {
  Matrix6d cov = diagonal_covariance(0.1, 0.5);
  double probability = 0.99;
  int dof = 6;
  std::chrono::milliseconds time_budget{2000};
  /// Returns one vertex rather than nothing when no two loops agree.
  bool keep_singleton = true;
};

/// Squared whitened norm of the cycle e1 · odom_β · e2⁻¹ · odom_α. Both edges
/// must join the same two robots; either orientation is accepted.
[[nodiscard]] double cycle_residual_sq(const Edge& e1, const Edge& e2,
                                       const std::map<RobotId, PoseMap>& odometry, const Matrix6d& cov);

[[nodiscard]] bool pairwise_consistent(const Edge& e1, const Edge& e2,
                                       const std::map<RobotId, PoseMap>& odometry, double threshold_sq,
                                       const Matrix6d& cov = diagonal_covariance(0.1, 0.5));

[[nodiscard]] ConsistencyGraph build_consistency_graph(const MultiRobotPoseGraph& graph,
                                                       const std::vector<EdgeId>& loops,
                                                       const std::map<RobotId, PoseMap>& odometry,
                                                       double threshold_sq, const Matrix6d& cov);

/// Greedy degree-ordered clique from every seed, then 1-out/2-in swaps.
/// Returns vertex indices into cg, ascending.
[[nodiscard]] std::vector<std::size_t> max_clique(const ConsistencyGraph& cg,
                                                  std::chrono::milliseconds time_budget,
                                                  bool keep_singleton = true);

/// Edge ids of max_clique.
[[nodiscard]] std::set<EdgeId> max_clique_inliers(const ConsistencyGraph& cg,
                                                  std::chrono::milliseconds time_budget,
                                                  bool keep_singleton = true);

/// Loops kept: the clique of each robot pair, intra-robot pairs included.
[[nodiscard]] std::set<EdgeId> pcm_select(const MultiRobotPoseGraph& graph, const PcmConfig& cfg = {});

/// Graph with every rejected loop removed; odometry untouched.
[[nodiscard]] MultiRobotPoseGraph pcm_filter(const MultiRobotPoseGraph& graph, const PcmConfig& cfg = {});

/// Per-edge 0/1 weights of the original graph from a kept set.
[[nodiscard]] std::vector<double> selection_weights(const MultiRobotPoseGraph& graph,
                                                    const std::set<EdgeId>& kept);

}  // namespace dgnc

#endif  // DGNC_PCM_HPP
