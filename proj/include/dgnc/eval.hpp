// Trajectory and classification metrics.

#ifndef DGNC_EVAL_HPP
#define DGNC_EVAL_HPP

#include "dgnc/pgo_solver.hpp"
#include "dgnc/pose_graph.hpp"

#include <map>
#include <span>
#include <stdexcept>

namespace dgnc {

enum class AteAlignment { Joint, PerRobot };

struct AteReport {
  double rmse = 0.0;
  std::map<RobotId, double> per_robot;
  Pose3d alignment;  // applied to `est` (joint mode)
};

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Rigid transform T minimizing Σ ‖T·src_k − dst_k‖² (no scale).
[[nodiscard]] Pose3d rigid_alignment(std::span<const Vector3d> src, std::span<const Vector3d> dst);

/// Translation RMSE after rigid alignment of est onto ref.
[[nodiscard]] AteReport ate(const PoseMap& est, const PoseMap& ref, AteAlignment mode = AteAlignment::Joint);

/// Weighted least squares on truth=Inlier loops plus odometry.
[[nodiscard]] PoseMap ml_reference(const MultiRobotPoseGraph& graph, const LmOptions& opts = {});

/// ‖t_first − t_last‖ per robot.
[[nodiscard]] std::map<RobotId, double> end_to_end_error(const PoseMap& est);

struct ClassificationReport {
  double precision = 1.0;  // 1.0 when nothing is accepted
  double recall = 1.0;     // 1.0 when there are no inliers
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
};

/// Loop edges with weight > threshold count as accepted.
[[nodiscard]] ClassificationReport classification_report(const MultiRobotPoseGraph& graph,
                                                         std::span<const double> weights,
                                                         double threshold = 0.5);

/// Largest distance between any two positions.
[[nodiscard]] double trajectory_diameter(const PoseMap& poses);

}  // namespace dgnc

#endif  // DGNC_EVAL_HPP
