// Riemannian block-coordinate descent on the rank-restricted relaxation of
// weighted PGO. Each robot owns one block of lifted poses and updates it with
// its neighbors' public poses held fixed.
//
// Lifted variables are packed column-wise as X = [Y_1 p_1 … Y_n p_n], an
// r × 4n matrix, so the cost reads tr(X M Xᵀ) for a sparse PSD M.

#ifndef DGNC_RBCD_HPP
#define DGNC_RBCD_HPP

#include "dgnc/geometry.hpp"
#include "dgnc/netsim.hpp"
#include "dgnc/pose_graph.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <vector>

namespace dgnc {

enum class BlockMethod {
  TrustRegion,     // one Riemannian trust-region step, preconditioned tCG
  GradientArmijo,  // Riemannian gradient step with Armijo backtracking
};

enum class PoseEncoding {
  Auto,    // Pose3 at rank 3, lifted otherwise
  Pose3,   // 7 doubles per pose; rank 3 only
  Lifted,  // r×4 doubles per pose
};

struct RbcdConfig {
  int rank = 5;
  int iters_per_round = 15;
  BlockMethod step = BlockMethod::TrustRegion;
  /// Blocks whose Riemannian gradient norm is below this are left unchanged.
  double grad_tol = 1e-6;
  PoseEncoding encoding = PoseEncoding::Auto;
  /// Local solver iterations within one block update (neighbors held fixed).
  int local_iters = 1;

  int tcg_max_iters = 50;
  double initial_radius = 100.0;
  int max_rejections = 10;

  double armijo_c = 1e-4;
  int armijo_max_halvings = 30;

  void validate() const;
  [[nodiscard]] PoseEncoding wire_encoding() const;
};

struct RobotBlock {
  RobotId robot = 0;
  std::map<std::uint32_t, LiftedPosed> lifted;
  std::set<std::uint32_t> public_indices;
  double trust_radius = 0.0;  // 0 means "use the configured initial radius"

  [[nodiscard]] int rank() const;
};

using BlockMap = std::map<RobotId, RobotBlock>;

/// Poses owned by `robot` that touch an inter-robot edge.
[[nodiscard]] std::set<std::uint32_t> public_indices(const MultiRobotPoseGraph& graph, RobotId robot);

/// Edges with at least one endpoint owned by `robot`, ascending.
[[nodiscard]] std::vector<EdgeId> local_edges(const MultiRobotPoseGraph& graph, RobotId robot);

/// Robots sharing an edge with `robot`, ascending.
[[nodiscard]] std::vector<RobotId> neighbor_robots(const MultiRobotPoseGraph& graph, RobotId robot);

/// Pads every rotation to [R; 0] (r×3) and translation to [t; 0].
[[nodiscard]] BlockMap lift(const MultiRobotPoseGraph& graph, const PoseMap& poses, int rank);

/// Σ_e w_e (w_rot ‖Y_j − Y_i R̃‖² + w_tr ‖p_j − p_i − Y_i t̃‖²) over all edges.
[[nodiscard]] double lifted_cost(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                                 const BlockMap& blocks);

/// Rank-3 projection: thin SVD of the stacked rotations, per-pose projection
/// to SO(3) with a consistent global sign. The basis is rotated to match the
/// canonical embedding, so an exact lift rounds back to itself.
[[nodiscard]] PoseMap round_solution(const BlockMap& blocks);

/// Left-composes so the first pose of `root` is the identity.
[[nodiscard]] PoseMap fix_gauge(const PoseMap& poses, RobotId root);

class RbcdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct BlockEdge {
  int src = 0;
  int dst = 0;
  bool src_external = false;
  bool dst_external = false;
  Matrix3d rot;
  Vector3d trans;
  double kappa = 0.0;  // weight · w_rot
  double tau = 0.0;    // weight · w_tr
};
}  // namespace detail

/// Quadratic restricted to one robot's block, external variables fixed.
class BlockProblem {
 public:
  BlockProblem(const MultiRobotPoseGraph& graph, const RobotBlock& block,
               std::span<const EdgeId> edges, std::span<const double> weights);

  [[nodiscard]] const std::vector<NodeId>& owned() const { return owned_; }
  [[nodiscard]] const std::vector<NodeId>& external() const { return external_; }

  [[nodiscard]] Eigen::MatrixXd pack_owned(const RobotBlock& block) const;
  [[nodiscard]] Eigen::MatrixXd pack_external(const std::map<NodeId, LiftedPosed>& neighbors,
                                              int rank) const;
  void unpack_owned(const Eigen::MatrixXd& x, RobotBlock& block) const;

  [[nodiscard]] double cost(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb) const;
  [[nodiscard]] Eigen::MatrixXd euclidean_gradient(const Eigen::MatrixXd& xa,
                                                   const Eigen::MatrixXd& xb) const;
  [[nodiscard]] Eigen::MatrixXd riemannian_gradient(const Eigen::MatrixXd& xa,
                                                    const Eigen::MatrixXd& egrad) const;
  [[nodiscard]] Eigen::MatrixXd hessian_vector(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& egrad,
                                               const Eigen::MatrixXd& v) const;
  [[nodiscard]] Eigen::MatrixXd precondition(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v) const;

  [[nodiscard]] static Eigen::MatrixXd project_tangent(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v);
  [[nodiscard]] static Eigen::MatrixXd retract(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v);

 private:
  std::vector<NodeId> owned_;
  std::vector<NodeId> external_;
  std::vector<detail::BlockEdge> edges_;
  Eigen::SparseMatrix<double> q_;    // owned × owned
  Eigen::SparseMatrix<double> b_;    // owned × external
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> precond_;
};

struct BlockUpdateResult {
  RobotBlock block;
  double cost_before = 0.0;
  double cost_after = 0.0;
  double grad_norm = 0.0;
  bool moved = false;
};

/// One block update; never increases the block cost.
[[nodiscard]] BlockUpdateResult block_update(const BlockProblem& problem, const RobotBlock& block,
                                             const std::map<NodeId, LiftedPosed>& neighbor_public,
                                             const RbcdConfig& cfg);

/// Convenience overload that assembles the block problem.
[[nodiscard]] BlockUpdateResult block_update(const MultiRobotPoseGraph& graph, const RobotBlock& block,
                                             const std::map<NodeId, LiftedPosed>& neighbor_public,
                                             std::span<const EdgeId> edges, std::span<const double> weights,
                                             const RbcdConfig& cfg);

struct UpdateEvent {
  std::size_t index = 0;  // position in the run's sequence of block updates
  RobotId robot = 0;
  double cost_before = 0.0;
  double cost_after = 0.0;
  double grad_norm = 0.0;
};

using UpdateObserver = std::function<void(const UpdateEvent&)>;

/// One robot's view of the relaxation: its own block, the latest public
/// poses of its neighbors, and its copy of the weights of edges it touches.
class RbcdAgent {
 public:
  RbcdAgent(const MultiRobotPoseGraph& graph, RobotBlock block, const RbcdConfig& cfg);

  [[nodiscard]] RobotId id() const { return block_.robot; }
  [[nodiscard]] const RobotBlock& block() const { return block_; }
  [[nodiscard]] const std::vector<RobotId>& neighbors() const { return neighbors_; }
  [[nodiscard]] const std::vector<EdgeId>& edges() const { return edges_; }
  [[nodiscard]] const std::map<NodeId, LiftedPosed>& neighbor_poses() const { return neighbor_poses_; }
  [[nodiscard]] double weight(EdgeId e) const { return weights_.at(e); }

  void set_weight(EdgeId e, double w);

  /// Public poses this robot shares with `to`, encoded for the wire.
  [[nodiscard]] Message public_poses_for(RobotId to) const;
  /// Stores the poses carried by a PublicPoses message.
  void receive_public_poses(const Message& msg);

  /// Block update against the cached neighbor poses.
  BlockUpdateResult update();
  [[nodiscard]] double gradient_norm() const;
  /// Cost of this robot's edges alone.
  [[nodiscard]] double block_cost() const;

  /// Squared lifted residual of an edge touching this robot.
  [[nodiscard]] double residual_sq(EdgeId e) const;

 private:
  [[nodiscard]] const LiftedPosed& pose(NodeId id) const;
  void ensure_problem() const;

  const MultiRobotPoseGraph* graph_;
  RbcdConfig cfg_;
  RobotBlock block_;
  std::vector<EdgeId> edges_;
  std::vector<RobotId> neighbors_;
  std::map<RobotId, std::vector<std::uint32_t>> shared_with_;  // my poses each neighbor needs
  std::map<NodeId, LiftedPosed> neighbor_poses_;
  std::map<EdgeId, double> weights_;
  mutable std::unique_ptr<BlockProblem> problem_;
};

/// Predicate: PublicPoses messages carry only the sender's public poses.
[[nodiscard]] MessagePredicate public_poses_only(const MultiRobotPoseGraph& graph);

/// Runs `updates` block updates in round-robin order by robot id, starting at
/// position `offset` in the schedule. Before each update every neighbor of
/// the active robot sends it one PublicPoses message (one network round).
/// `before` runs ahead of each update, after the exchange.
void rbcd_updates(std::vector<RbcdAgent>& agents, int updates, std::size_t& offset, Network& net,
                  std::size_t& update_counter, const UpdateObserver& observer = {},
                  const std::function<void()>& before = {});

/// config.iters_per_round updates on blocks, weights fixed.
struct RbcdRoundResult {
  BlockMap blocks;
  std::vector<UpdateEvent> events;
};
RbcdRoundResult rbcd_round(const BlockMap& blocks, const MultiRobotPoseGraph& graph,
                           std::span<const double> weights, const RbcdConfig& cfg, Network& net);

}  // namespace dgnc

#endif  // DGNC_RBCD_HPP
