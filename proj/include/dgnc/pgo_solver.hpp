// Centralized weighted pose-graph optimization on SE(3) with the chordal
// cost, solved by Levenberg-Marquardt over sparse normal equations.

#ifndef DGNC_PGO_SOLVER_HPP
#define DGNC_PGO_SOLVER_HPP

#include "dgnc/pose_graph.hpp"

#include <span>
#include <stdexcept>

namespace dgnc {

struct LmOptions {
  int max_iters = 100;
  double grad_tol = 1e-6;
  /// Stop when a step improves the cost by less than this fraction.
  double rel_cost_tol = 1e-12;
  double initial_lambda = 1e-4;
  double max_lambda = 1e12;
};

struct LmResult {
  PoseMap poses;
  double cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, PoseMap last_iterate)
      : std::runtime_error(what), last_iterate_(std::move(last_iterate)) {}
  [[nodiscard]] const PoseMap& last_iterate() const { return last_iterate_; }

 private:
  PoseMap last_iterate_;
};

/// Σ_e weights[e] · r_e², with r_e the chordal residual of edge e.
[[nodiscard]] double pgo_cost(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                              const PoseMap& poses);

/// Same cost with every weight equal to one.
[[nodiscard]] double pgo_cost(const MultiRobotPoseGraph& graph, const PoseMap& poses);

/// Edge weights taken from Edge::gnc_weight.
[[nodiscard]] std::vector<double> graph_weights(const MultiRobotPoseGraph& graph);

/// The first pose of the lowest robot id is held fixed (gauge).
LmResult solve_weighted_pgo(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                            const PoseMap& init, const LmOptions& opts = {});

/// Initial guess from a BFS over edges accepted by `use_edge`, composing
/// measurements outward from the lowest node. Unreached nodes keep identity.
template <typename Pred>
PoseMap spanning_tree_guess(const MultiRobotPoseGraph& graph, Pred use_edge);

/// Applies g on the left of every pose.
[[nodiscard]] PoseMap transform_poses(const Pose3d& g, const PoseMap& poses);

/// Left-composes so that `anchor` maps to the identity.
[[nodiscard]] PoseMap anchor_poses(const PoseMap& poses, NodeId anchor);

}  // namespace dgnc

#include "dgnc/detail/spanning_tree_guess.ipp"

#endif  // DGNC_PGO_SOLVER_HPP
