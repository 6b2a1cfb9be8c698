// Multi-robot pose graph: data model, g2o IO, partitioning, outlier
// injection and synthetic grid datasets.

#ifndef DGNC_POSE_GRAPH_HPP
#define DGNC_POSE_GRAPH_HPP

#include "dgnc/geometry.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgnc {

using RobotId = std::uint8_t;
using EdgeId = std::size_t;

/// Vertex ids in g2o files encode (robot, index) as robot * kRobotIdStride + index.
inline constexpr std::uint64_t kRobotIdStride = 100'000'000;

struct NodeId {
  RobotId robot = 0;
  std::uint32_t index = 0;

  auto operator<=>(const NodeId&) const = default;

  [[nodiscard]] std::uint64_t g2o_id() const {
    return static_cast<std::uint64_t>(robot) * kRobotIdStride + index;
  }
  static NodeId from_g2o_id(std::uint64_t id) {
    return {static_cast<RobotId>(id / kRobotIdStride), static_cast<std::uint32_t>(id % kRobotIdStride)};
  }
  /// 8-byte wire key.
  [[nodiscard]] std::uint64_t key() const {
    return (static_cast<std::uint64_t>(robot) << 32) | index;
  }
  static NodeId from_key(std::uint64_t k) {
    return {static_cast<RobotId>(k >> 32), static_cast<std::uint32_t>(k & 0xffffffffu)};
  }
};

enum class EdgeKind { Odometry, IntraLoop, InterLoop };
enum class Truth { Inlier, Outlier };

struct Edge {
  NodeId src;
  NodeId dst;
  Pose3d meas;
  double w_rot = 1.0;
  double w_tr = 1.0;
  EdgeKind kind = EdgeKind::Odometry;
  double gnc_weight = 1.0;
  std::optional<Truth> truth;

  [[nodiscard]] bool is_loop() const { return kind != EdgeKind::Odometry; }
};

struct Node {
  std::optional<Pose3d> initial;
  std::optional<Pose3d> ground_truth;
};

using PoseMap = std::map<NodeId, Pose3d>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MultiRobotPoseGraph {
 public:
  std::map<NodeId, Node> nodes;
  std::vector<Edge> edges;

  [[nodiscard]] std::vector<RobotId> robots() const;
  [[nodiscard]] std::size_t num_poses(RobotId robot) const;
  [[nodiscard]] std::size_t num_loops() const;
  [[nodiscard]] bool has_node(NodeId id) const { return nodes.contains(id); }
  [[nodiscard]] bool has_edge_between(NodeId a, NodeId b) const;

  /// Adds node if missing; returns reference to it.
  Node& node(NodeId id) { return nodes[id]; }

  /// Throws GraphError if any invariant is broken.
  void validate() const;

  [[nodiscard]] PoseMap ground_truth() const;
  [[nodiscard]] bool has_ground_truth() const;

  /// Copy keeping only edges that are odometry or tagged Inlier.
  [[nodiscard]] MultiRobotPoseGraph inlier_subgraph() const;

  /// Per-robot trajectory obtained by chaining odometry from identity.
  [[nodiscard]] PoseMap odometry_chain(RobotId robot) const;
};

// ---- g2o IO -----------------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

MultiRobotPoseGraph read_g2o(const std::filesystem::path& path);
MultiRobotPoseGraph parse_g2o(const std::string& text);
void write_g2o(const MultiRobotPoseGraph& graph, const std::filesystem::path& path);
std::string format_g2o(const MultiRobotPoseGraph& graph);

/// Vertex lines only; used for ground-truth sidecars and trajectory files.
PoseMap read_g2o_vertices(const std::filesystem::path& path);
void write_g2o_vertices(const PoseMap& poses, const std::filesystem::path& path);

/// `foo.g2o` → `foo.gt.g2o`.
std::filesystem::path ground_truth_sidecar(const std::filesystem::path& path);

/// read_g2o plus the ground-truth sidecar when it exists.
MultiRobotPoseGraph load_dataset(const std::filesystem::path& path);
void save_dataset(const MultiRobotPoseGraph& graph, const std::filesystem::path& path);

// ---- dataset manipulation ---------------------------------------------------

MultiRobotPoseGraph partition(const MultiRobotPoseGraph& graph, std::size_t robots);

struct OutlierOptions {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  double translation_range = 10.0;
  /// Sample only yaw rotations and zero z (keeps planar datasets planar).
  bool planar = false;
};

MultiRobotPoseGraph inject_outliers(const MultiRobotPoseGraph& graph, const OutlierOptions& opts);

struct GridOptions {
  std::size_t rows = 10;
  std::size_t cols = 10;
  std::size_t robots = 1;
  double spacing = 1.0;
  double noise_rot = 0.01;
  double noise_tr = 0.1;
  double loop_prob = 0.3;
  std::uint64_t seed = 0;
  /// Std-devs the edge precisions are built from, independent of the noise.
  double sigma_rot = 0.01;
  double sigma_tr = 0.1;
};

/// Planar boustrophedon trajectory over a rows×cols lattice with loop
/// closures between lattice neighbours in consecutive rows.
MultiRobotPoseGraph synth_grid(const GridOptions& opts);

/// Rotation precision matching the chordal cost for angle std-dev sigma.
[[nodiscard]] inline double rot_precision(double sigma) { return 0.5 / (sigma * sigma); }
[[nodiscard]] inline double tr_precision(double sigma) { return 1.0 / (sigma * sigma); }

}  // namespace dgnc

#endif  // DGNC_POSE_GRAPH_HPP
