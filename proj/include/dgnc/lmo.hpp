// Local mesh optimization: vertex-clustering simplification, a deformation
// graph of mesh nodes and keyframes, the anchored rigidity solve, and
// re-interpolation of the full-resolution mesh.

#ifndef DGNC_LMO_HPP
#define DGNC_LMO_HPP

#include "dgnc/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dgnc {

using Face = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Vector3d> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<std::int32_t>> labels;  // one per face

  /// Throws std::invalid_argument on out-of-range or repeated indices.
  void validate() const;
};

struct Simplified {
  TriMesh mesh;
  std::vector<std::size_t> vertex_map;  // original vertex → simplified vertex
};

/// One centroid per occupied voxel; faces remapped, collapsed faces dropped.
[[nodiscard]] Simplified simplify(const TriMesh& mesh, double voxel);

struct MeshNode {
  Vector3d g;  // undeformed position
  Pose3d m;    // local frame, starts at (I, g)
};

struct KeyframeNode {
  Pose3d x;
  std::vector<std::size_t> observed;
  std::map<std::size_t, Vector3d> g_rel;  // node position in the keyframe's frame
};

struct Keyframe {
  Pose3d pose;
  std::vector<std::size_t> observed;
};

struct DeformationGraph {
  std::vector<MeshNode> mesh_nodes;
  std::vector<KeyframeNode> keyframes;
  std::vector<std::pair<std::size_t, std::size_t>> mesh_edges;      // i < j
  std::vector<std::pair<std::size_t, std::size_t>> keyframe_edges;  // (keyframe, node)

  /// Mesh neighbours of every node, ascending.
  [[nodiscard]] std::vector<std::vector<std::size_t>> neighbors() const;
};

[[nodiscard]] DeformationGraph build_graph(const TriMesh& simplified, const std::vector<Keyframe>& keyframes);

/// Nodes within `range` of the keyframe position.
[[nodiscard]] std::vector<std::size_t> visible_nodes(const TriMesh& simplified, const Pose3d& keyframe,
                                                     double range);

struct DeformConfig {
  double sigma_anchor_rot = 0.01;
  double sigma_anchor_tr = 0.01;
  double sigma_rigid = 0.1;
  int max_iters = 200;
  double grad_tol = 1e-6;
  double lambda_init = 1e-4;
};

/// Local coordinates: every node is perturbed as X ⊞ d, mesh nodes first,
/// then keyframes, 6 entries each.
[[nodiscard]] double deformation_cost(const DeformationGraph& graph, const std::vector<Pose3d>& anchors,
                                      const DeformConfig& cfg);
[[nodiscard]] Eigen::VectorXd deformation_gradient(const DeformationGraph& graph,
                                                   const std::vector<Pose3d>& anchors,
                                                   const DeformConfig& cfg);
[[nodiscard]] DeformationGraph perturb(const DeformationGraph& graph, const Eigen::VectorXd& delta);

struct DeformResult {
  DeformationGraph graph;
  double cost = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

class DeformError : public std::runtime_error {
 public:
  DeformError(const std::string& what, DeformationGraph last)
      : std::runtime_error(what), last_(std::move(last)) {}
  [[nodiscard]] const DeformationGraph& last_iterate() const { return last_; }

 private:
  DeformationGraph last_;
};

/// Levenberg-Marquardt on anchor, mesh-rigidity and keyframe-rigidity terms.
[[nodiscard]] DeformResult deform(const DeformationGraph& graph, const std::vector<Pose3d>& anchors,
                                  const DeformConfig& cfg = {});

struct VertexWeights {
  std::vector<std::size_t> nodes;
  std::vector<double> weights;  // sum to one
};

[[nodiscard]] VertexWeights interpolation_weights(const Vector3d& v, const DeformationGraph& graph, int k_nn);

/// Moves every vertex by the blended node transforms; faces and labels copied.
[[nodiscard]] TriMesh interpolate(const TriMesh& mesh, const DeformationGraph& graph, int k_nn = 4);

// ---- IO --------------------------------------------------------------------

[[nodiscard]] TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);

/// `mesh.obj` → `mesh.labels.csv`.
[[nodiscard]] std::filesystem::path label_sidecar(const std::filesystem::path& obj);
[[nodiscard]] std::vector<std::int32_t> read_labels(const std::filesystem::path& csv, std::size_t faces);
void write_labels(const std::vector<std::int32_t>& labels, const std::filesystem::path& csv);

/// OBJ plus the label sidecar when present.
[[nodiscard]] TriMesh load_mesh(const std::filesystem::path& obj);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& obj);

/// Wavy rows×cols height field with a label per quadrant.
[[nodiscard]] TriMesh grid_mesh(std::size_t rows, std::size_t cols, double spacing);

}  // namespace dgnc

#endif  // DGNC_LMO_HPP
