// Robust reference-frame alignment between robots: candidate frame offsets
// from inter-robot loop closures, TLS pose averaging, and composition of
// pairwise offsets along a robot-level spanning tree.

#ifndef DGNC_ROBUST_INIT_HPP
#define DGNC_ROBUST_INIT_HPP

#include "dgnc/gnc.hpp"
#include "dgnc/pose_graph.hpp"

#include <map>
#include <set>
#include <utility>
#include <vector>

namespace dgnc {

/// transform = pose of `to_robot`'s local frame expressed in `from_robot`'s.
struct FrameAlignment {
  RobotId from_robot = 0;
  RobotId to_robot = 0;
  Pose3d transform;
  std::vector<EdgeId> inlier_edges;
  bool low_confidence = false;
};

using RobotPair = std::pair<RobotId, RobotId>;

struct RobotDependencyGraph {
  std::vector<RobotId> vertices;
  std::set<RobotPair> edges;  // stored with first < second

  static RobotDependencyGraph from_graph(const MultiRobotPoseGraph& graph);
  [[nodiscard]] std::vector<RobotId> neighbors(RobotId r) const;
};

struct SpanningTree {
  RobotId root = 0;
  std::map<RobotId, RobotId> parent;  // root has no entry
  std::vector<RobotId> bfs_order;     // starts with root
};

struct RobustInitConfig {
  Matrix6d cov = diagonal_covariance(0.1, 0.5);
  TlsConfig tls = TlsConfig::from_probability(0.5, 6);
  int lm_max_iters = 50;
  double lm_grad_tol = 1e-8;
};

/// X̂^A_{αi} · X̃ · (X̂^B_{βj})⁻¹ for an edge from robot A to robot B.
/// `odom_src` / `odom_dst` hold the local odometric estimates of the
/// source and destination robots.
[[nodiscard]] Pose3d candidate_alignment(const Edge& edge, const PoseMap& odom_src,
                                         const PoseMap& odom_dst);

struct PoseAverage {
  Pose3d pose;
  std::vector<std::size_t> inliers;  // candidate indices with weight > 0.5
  std::vector<double> weights;
  bool low_confidence = false;
};

/// GNC-TLS over residuals ‖X ⊟ candidate‖_Σ, LM inner solver started at the
/// identity. Hard TLS refinements seeded at each candidate replace the GNC
/// result when they reach a lower TLS objective.
PoseAverage robust_pose_average(std::span<const Pose3d> candidates, const RobustInitConfig& cfg);

/// BFS tree; children visited in ascending robot id.
SpanningTree build_spanning_tree(const RobotDependencyGraph& dep, RobotId root);

/// Maximum-support spanning tree grown from root (Prim). Pairs missing from
/// `support` count as zero; ties go to the lower (parent, child) ids.
/// bfs_order lists robots in attachment order, parents first.
SpanningTree build_spanning_tree(const RobotDependencyGraph& dep, RobotId root,
                                 const std::map<RobotPair, double>& support);

/// Frame of every robot in root's frame. `pairwise` may hold either
/// orientation of a tree edge.
std::map<RobotId, Pose3d> assemble_global_frames(const SpanningTree& tree,
                                                 const std::map<RobotPair, FrameAlignment>& pairwise);

/// Every inter-robot loop between a and b oriented a→b, with its candidate.
struct PairCandidates {
  std::vector<EdgeId> edges;
  std::vector<Pose3d> candidates;  // offset of b's frame in a's frame
};
PairCandidates pair_candidates(const MultiRobotPoseGraph& graph, RobotId a, RobotId b,
                               const std::map<RobotId, PoseMap>& odometry);

/// Robust alignment of robot b's frame into robot a's frame.
FrameAlignment align_pair(const MultiRobotPoseGraph& graph, RobotId a, RobotId b,
                          const std::map<RobotId, PoseMap>& odometry, const RobustInitConfig& cfg);

/// Odometry trajectories (local frames) of every robot.
std::map<RobotId, PoseMap> local_odometry(const MultiRobotPoseGraph& graph);

/// Expresses local trajectories in the global frame.
PoseMap apply_frames(const std::map<RobotId, PoseMap>& odometry,
                     const std::map<RobotId, Pose3d>& frames);

}  // namespace dgnc

#endif  // DGNC_ROBUST_INIT_HPP
