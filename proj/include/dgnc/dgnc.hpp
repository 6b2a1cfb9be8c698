// Distributed GNC: robust frame initialization, then interleaved RBCD
// variable updates, distributed TLS weight updates and synchronized µ
// updates. Every cross-robot exchange goes through a Network.

#ifndef DGNC_DGNC_HPP
#define DGNC_DGNC_HPP

#include "dgnc/gnc.hpp"
#include "dgnc/netsim.hpp"
#include "dgnc/rbcd.hpp"
#include "dgnc/robust_init.hpp"

#include <functional>
#include <optional>

namespace dgnc {

enum class InitMode { Robust, Naive };

struct DgncConfig {
  TlsConfig tls = TlsConfig::from_probability(0.5, 6);
  RbcdConfig rbcd;
  RobustInitConfig init;
  /// Total block-update budget across the whole run.
  std::optional<int> early_stop_total_iters;
  /// Run each variable update until RBCD stalls instead of a fixed T.
  bool full_variable_updates = false;
  /// After the weights settle, run RBCD on the final weights until it stalls.
  bool final_refine = true;
  int full_max_rounds = 400;
  double full_rel_tol = 1e-12;
  /// Seed for the naive initialization's edge sampling.
  std::uint64_t seed = 0;

  std::function<void(const std::vector<RbcdAgent>&)> before_update;
  std::function<void(const UpdateEvent&, const std::vector<RbcdAgent>&)> after_update;

  void validate() const;
};

struct InitResult {
  std::map<RobotId, Pose3d> frames;  // each robot's frame in the root's
  std::map<RobotPair, FrameAlignment> alignments;
  PoseMap poses;
};

struct DgncResult {
  PoseMap poses;                 // root robot's first pose at the identity
  std::vector<double> weights;   // by EdgeId; odometry stays 1
  InitResult init;
  double mu = 0.0;
  int outer_iters = 0;
  std::size_t block_updates = 0;
  bool converged = false;
  bool early_stopped = false;
  /// WeightUpdate messages sent in each weight round.
  std::vector<std::size_t> weight_round_messages;
  Ledger ledger;
};

class DgncError : public std::runtime_error {
 public:
  DgncError(const std::string& what, PoseMap last_iterate)
      : std::runtime_error(what), last_iterate_(std::move(last_iterate)) {}
  [[nodiscard]] const PoseMap& last_iterate() const { return last_iterate_; }

 private:
  PoseMap last_iterate_;
};

/// Initialization stage: pairwise alignment along a BFS tree of the robot
/// dependency graph, then frame propagation from the root. The lower-id
/// robot of each tree edge computes the alignment and sends it across.
InitResult distributed_initialization(const MultiRobotPoseGraph& graph,
                                      const std::map<RobotId, PoseMap>& local_odometry, InitMode mode,
                                      const DgncConfig& cfg, Network& net);

/// One weight round: higher-id robots send their public poses to lower-id
/// neighbors, then every loop weight is set by tls_weight on its lifted
/// residual. Inter-robot weights are computed by the lower-id endpoint and
/// sent as one WeightUpdate message per edge. Returns that message count.
std::size_t distributed_weight_update(std::vector<RbcdAgent>& agents, const MultiRobotPoseGraph& graph,
                                      double mu, double c_bar_sq, Network& net);

/// Lifted blocks of all agents.
[[nodiscard]] BlockMap collect_blocks(const std::vector<RbcdAgent>& agents);
/// Weight of every edge as held by its source robot.
[[nodiscard]] std::vector<double> collect_weights(const std::vector<RbcdAgent>& agents,
                                                  const MultiRobotPoseGraph& graph);

DgncResult run_dgnc(const MultiRobotPoseGraph& graph, const std::map<RobotId, PoseMap>& local_odometry,
                    const DgncConfig& cfg, Network& net);
DgncResult run_dgnc(const MultiRobotPoseGraph& graph, const std::map<RobotId, PoseMap>& local_odometry,
                    const DgncConfig& cfg);

/// As run_dgnc, with each tree-edge alignment taken from one uniformly
/// sampled inter-robot loop closure.
DgncResult run_naive_init_dgnc(const MultiRobotPoseGraph& graph,
                               const std::map<RobotId, PoseMap>& local_odometry, const DgncConfig& cfg,
                               Network& net);
DgncResult run_naive_init_dgnc(const MultiRobotPoseGraph& graph,
                               const std::map<RobotId, PoseMap>& local_odometry, const DgncConfig& cfg);

}  // namespace dgnc

#endif  // DGNC_DGNC_HPP
