#include "dgnc/lmo.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

namespace dgnc {

void TriMesh::validate() const {
  const std::size_t n = vertices.size();
  for (const Face& f : faces) {
    for (std::uint32_t i : f) {
      if (i >= n) throw std::invalid_argument("mesh: face index out of range");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) throw std::invalid_argument("mesh: degenerate face");
  }
  if (labels && labels->size() != faces.size()) throw std::invalid_argument("mesh: one label per face required");
}

Simplified simplify(const TriMesh& mesh, double voxel) {
  if (!(voxel > 0.0)) throw std::invalid_argument("simplify: voxel must be positive");
  mesh.validate();
  Simplified out;
  out.vertex_map.resize(mesh.vertices.size());
  std::map<std::tuple<long long, long long, long long>, std::size_t> cells;
  std::vector<Vector3d> sums;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vector3d& v = mesh.vertices[i];
    const auto key = std::make_tuple(static_cast<long long>(std::floor(v.x() / voxel)),
                                     static_cast<long long>(std::floor(v.y() / voxel)),
                                     static_cast<long long>(std::floor(v.z() / voxel)));
    auto [it, fresh] = cells.try_emplace(key, sums.size());
    if (fresh) {
      sums.push_back(Vector3d::Zero());
      counts.push_back(0);
    }
    sums[it->second] += v;
    ++counts[it->second];
    out.vertex_map[i] = it->second;
  }
  out.mesh.vertices.resize(sums.size());
  for (std::size_t c = 0; c < sums.size(); ++c) out.mesh.vertices[c] = sums[c] / static_cast<double>(counts[c]);

  std::set<std::array<std::uint32_t, 3>> seen;
  std::vector<std::int32_t> labels;
  for (std::size_t k = 0; k < mesh.faces.size(); ++k) {
    Face f;
    for (int j = 0; j < 3; ++j) f[j] = static_cast<std::uint32_t>(out.vertex_map[mesh.faces[k][j]]);
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    Face sorted = f;
    std::sort(sorted.begin(), sorted.end());
    if (!seen.insert(sorted).second) continue;
    out.mesh.faces.push_back(f);
    if (mesh.labels) labels.push_back((*mesh.labels)[k]);
  }
  if (mesh.labels) out.mesh.labels = std::move(labels);
  return out;
}

std::vector<std::vector<std::size_t>> DeformationGraph::neighbors() const {
  std::vector<std::vector<std::size_t>> nb(mesh_nodes.size());
  for (const auto& [a, b] : mesh_edges) {
    nb[a].push_back(b);
    nb[b].push_back(a);
  }
  for (auto& v : nb) std::sort(v.begin(), v.end());
  return nb;
}

DeformationGraph build_graph(const TriMesh& simplified, const std::vector<Keyframe>& keyframes) {
  simplified.validate();
  DeformationGraph g;
  for (const Vector3d& v : simplified.vertices) g.mesh_nodes.push_back({v, Pose3d(Rot3d::identity(), v)});
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (const Face& f : simplified.faces) {
    for (int j = 0; j < 3; ++j) {
      const std::size_t a = f[j], b = f[(j + 1) % 3];
      edges.insert(std::minmax(a, b));
    }
  }
  g.mesh_edges.assign(edges.begin(), edges.end());
  for (std::size_t i = 0; i < keyframes.size(); ++i) {
    const Keyframe& kf = keyframes[i];
    KeyframeNode node;
    node.x = kf.pose;
    std::set<std::size_t> obs(kf.observed.begin(), kf.observed.end());
    const Pose3d inv = kf.pose.inverse();
    for (std::size_t l : obs) {
      if (l >= g.mesh_nodes.size()) throw std::invalid_argument("build_graph: observed node out of range");
      node.observed.push_back(l);
      node.g_rel[l] = inv * g.mesh_nodes[l].g;
      g.keyframe_edges.emplace_back(i, l);
    }
    g.keyframes.push_back(std::move(node));
  }
  return g;
}

std::vector<std::size_t> visible_nodes(const TriMesh& simplified, const Pose3d& keyframe, double range) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < simplified.vertices.size(); ++l) {
    if ((simplified.vertices[l] - keyframe.trans()).norm() <= range) out.push_back(l);
  }
  return out;
}

namespace {

struct Problem {
  std::vector<Eigen::Triplet<double>> jac;
  Eigen::VectorXd r;
};

std::size_t num_vars(const DeformationGraph& g) { return 6 * (g.mesh_nodes.size() + g.keyframes.size()); }

void check_anchors(const DeformationGraph& g, const std::vector<Pose3d>& anchors) {
  if (anchors.size() != g.keyframes.size()) throw std::invalid_argument("deform: one anchor per keyframe required");
}

// Whitened residuals, and the Jacobian when `with_jac`.
Problem linearize(const DeformationGraph& g, const std::vector<Pose3d>& anchors, const DeformConfig& cfg,
                  bool with_jac) {
  const std::size_t n = g.mesh_nodes.size();
  const auto nb = g.neighbors();
  std::size_t rows = 6 * g.keyframes.size() + 3 * g.keyframe_edges.size();
  for (const auto& v : nb) rows += 3 * v.size();
  Problem p;
  p.r.resize(static_cast<Eigen::Index>(rows));
  Eigen::Index row = 0;
  auto put = [&](Eigen::Index r0, std::size_t col0, const Matrix3d& m) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        if (m(a, b) != 0.0) p.jac.emplace_back(r0 + a, static_cast<int>(col0) + b, m(a, b));
      }
    }
  };
  const double wr = 1.0 / cfg.sigma_anchor_rot;
  const double wt = 1.0 / cfg.sigma_anchor_tr;
  const double wg = 1.0 / cfg.sigma_rigid;

  for (std::size_t i = 0; i < g.keyframes.size(); ++i) {
    const Pose3d& x = g.keyframes[i].x;
    const Vector6d d = boxminus(x, anchors[i]);
    p.r.segment<3>(row) = wr * d.head<3>();
    p.r.segment<3>(row + 3) = wt * d.tail<3>();
    if (with_jac) {
      const std::size_t col = 6 * (n + i);
      put(row, col, wr * so3_right_jacobian_inverse<double>(d.head<3>()));
      put(row + 3, col + 3, wt * (anchors[i].rot().matrix().transpose() * x.rot().matrix()));
    }
    row += 6;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const Pose3d& mk = g.mesh_nodes[k].m;
    for (std::size_t l : nb[k]) {
      const Pose3d& ml = g.mesh_nodes[l].m;
      const Vector3d d = g.mesh_nodes[l].g - g.mesh_nodes[k].g;
      p.r.segment<3>(row) = wg * (mk.rot() * d + mk.trans() - ml.trans());
      if (with_jac) {
        put(row, 6 * k, -wg * mk.rot().matrix() * skew(d));
        put(row, 6 * k + 3, wg * mk.rot().matrix());
        put(row, 6 * l + 3, -wg * ml.rot().matrix());
      }
      row += 3;
    }
  }
  for (const auto& [i, l] : g.keyframe_edges) {
    const Pose3d& x = g.keyframes[i].x;
    const Pose3d& ml = g.mesh_nodes[l].m;
    const Vector3d& gr = g.keyframes[i].g_rel.at(l);
    p.r.segment<3>(row) = wg * (x.rot() * gr + x.trans() - ml.trans());
    if (with_jac) {
      const std::size_t col = 6 * (n + i);
      put(row, col, -wg * x.rot().matrix() * skew(gr));
      put(row, col + 3, wg * x.rot().matrix());
      put(row, 6 * l + 3, -wg * ml.rot().matrix());
    }
    row += 3;
  }
  return p;
}

Eigen::SparseMatrix<double> assemble(const Problem& p, std::size_t cols) {
  Eigen::SparseMatrix<double> j(p.r.size(), static_cast<Eigen::Index>(cols));
  j.setFromTriplets(p.jac.begin(), p.jac.end());
  return j;
}

}  // namespace

double deformation_cost(const DeformationGraph& graph, const std::vector<Pose3d>& anchors,
                        const DeformConfig& cfg) {
  check_anchors(graph, anchors);
  return linearize(graph, anchors, cfg, false).r.squaredNorm();
}

Eigen::VectorXd deformation_gradient(const DeformationGraph& graph, const std::vector<Pose3d>& anchors,
                                     const DeformConfig& cfg) {
  check_anchors(graph, anchors);
  const Problem p = linearize(graph, anchors, cfg, true);
  return 2.0 * (assemble(p, num_vars(graph)).transpose() * p.r);
}

DeformationGraph perturb(const DeformationGraph& graph, const Eigen::VectorXd& delta) {
  if (static_cast<std::size_t>(delta.size()) != num_vars(graph)) throw std::invalid_argument("perturb: size mismatch");
  DeformationGraph out = graph;
  const std::size_t n = graph.mesh_nodes.size();
  for (std::size_t k = 0; k < n; ++k) {
    out.mesh_nodes[k].m = boxplus(graph.mesh_nodes[k].m, Vector6d(delta.segment<6>(static_cast<Eigen::Index>(6 * k))));
  }
  for (std::size_t i = 0; i < graph.keyframes.size(); ++i) {
    out.keyframes[i].x =
        boxplus(graph.keyframes[i].x, Vector6d(delta.segment<6>(static_cast<Eigen::Index>(6 * (n + i)))));
  }
  return out;
}

DeformResult deform(const DeformationGraph& graph, const std::vector<Pose3d>& anchors, const DeformConfig& cfg) {
  check_anchors(graph, anchors);
  if (!(cfg.sigma_anchor_rot > 0.0 && cfg.sigma_anchor_tr > 0.0 && cfg.sigma_rigid > 0.0)) {
    throw std::invalid_argument("deform: sigmas must be positive");
  }
  DeformResult res;
  res.graph = graph;
  const std::size_t nv = num_vars(graph);
  double lambda = cfg.lambda_init;
  Problem p = linearize(res.graph, anchors, cfg, true);
  res.cost = p.r.squaredNorm();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;

  for (res.iterations = 0; res.iterations < cfg.max_iters; ++res.iterations) {
    const Eigen::SparseMatrix<double> j = assemble(p, nv);
    const Eigen::SparseMatrix<double> h = j.transpose() * j;
    const Eigen::VectorXd b = j.transpose() * p.r;
    res.grad_norm = 2.0 * b.norm();
    if (res.grad_norm < cfg.grad_tol || res.cost == 0.0) return res;

    Eigen::VectorXd diag = h.diagonal().cwiseMax(1e-9);
    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = h;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) damped.coeffRef(k, k) += lambda * diag(k);
      ldlt.compute(damped);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd step = ldlt.solve(-b);
        DeformationGraph cand = perturb(res.graph, step);
        Problem pc = linearize(cand, anchors, cfg, true);
        const double c = pc.r.squaredNorm();
        if (std::isfinite(c) && c < res.cost) {
          res.graph = std::move(cand);
          res.cost = c;
          p = std::move(pc);
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          continue;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        // no descent left at the finest step: a stationary point in floating point
        if (res.grad_norm < 1e3 * cfg.grad_tol) return res;
        throw DeformError("deform: cost increase at maximum damping", res.graph);
      }
    }
  }
  const Problem last = linearize(res.graph, anchors, cfg, true);
  res.grad_norm = 2.0 * (assemble(last, nv).transpose() * last.r).norm();
  return res;
}

VertexWeights interpolation_weights(const Vector3d& v, const DeformationGraph& graph, int k_nn) {
  if (k_nn <= 0) throw std::invalid_argument("interpolate: k_nn must be positive");
  const auto k = static_cast<std::size_t>(k_nn);
  const std::size_t n = graph.mesh_nodes.size();
  if (n < k + 1) throw std::invalid_argument("interpolate: need at least k_nn + 1 mesh nodes");
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t j = 0; j < n; ++j) dist[j] = {(v - graph.mesh_nodes[j].g).norm(), j};
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k + 1), dist.end());
  const double d_max = dist[k].first;

  VertexWeights out;
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double s = d_max > 0.0 && dist[j].first < d_max ? std::pow(1.0 - dist[j].first / d_max, 2) : 0.0;
    out.nodes.push_back(dist[j].second);
    out.weights.push_back(s);
    sum += s;
  }
  if (sum == 0.0) {
    // every neighbour sits at d_max
    for (std::size_t j = 0; j < k; ++j) out.weights[j] = dist[j].first > 0.0 ? 1.0 / dist[j].first : 1.0;
    sum = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  }
  for (double& w : out.weights) w /= sum;
  return out;
}

TriMesh interpolate(const TriMesh& mesh, const DeformationGraph& graph, int k_nn) {
  TriMesh out = mesh;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vector3d& v = mesh.vertices[i];
    const VertexWeights w = interpolation_weights(v, graph, k_nn);
    Vector3d acc = Vector3d::Zero();
    for (std::size_t j = 0; j < w.nodes.size(); ++j) {
      const MeshNode& node = graph.mesh_nodes[w.nodes[j]];
      acc += w.weights[j] * (node.m.rot() * (v - node.g) + node.m.trans());
    }
    out.vertices[i] = acc;
  }
  return out;
}

// ---- IO --------------------------------------------------------------------

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  TriMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vector3d v;
      if (!(ss >> v.x() >> v.y() >> v.z())) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ss >> tok) {
        const long long raw = std::stoll(tok.substr(0, tok.find('/')));
        const long long n = static_cast<long long>(mesh.vertices.size());
        const long long i = raw > 0 ? raw - 1 : n + raw;
        if (raw == 0 || i < 0 || i >= n) {
          throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad face index");
        }
        idx.push_back(static_cast<std::uint32_t>(i));
      }
      if (idx.size() < 3) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": short face");
      for (std::size_t j = 1; j + 1 < idx.size(); ++j) mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
    }
  }
  mesh.validate();
  return mesh;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  for (const Vector3d& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::filesystem::path label_sidecar(const std::filesystem::path& obj) {
  std::filesystem::path p = obj;
  p.replace_extension(".labels.csv");
  return p;
}

std::vector<std::int32_t> read_labels(const std::filesystem::path& csv, std::size_t faces) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open " + csv.string());
  std::vector<std::int32_t> labels(faces, 0);
  std::vector<bool> set(faces, false);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(csv.string() + ": malformed row");
    const std::size_t face = std::stoull(line.substr(0, comma));
    if (face >= faces) throw std::runtime_error(csv.string() + ": face index out of range");
    labels[face] = static_cast<std::int32_t>(std::stol(line.substr(comma + 1)));
    set[face] = true;
  }
  if (std::find(set.begin(), set.end(), false) != set.end()) {
    throw std::runtime_error(csv.string() + ": missing labels");
  }
  return labels;
}

void write_labels(const std::vector<std::int32_t>& labels, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "face,label\n";
  for (std::size_t k = 0; k < labels.size(); ++k) out << k << ',' << labels[k] << '\n';
}

TriMesh load_mesh(const std::filesystem::path& obj) {
  TriMesh mesh = read_obj(obj);
  const auto side = label_sidecar(obj);
  if (std::filesystem::exists(side)) mesh.labels = read_labels(side, mesh.faces.size());
  return mesh;
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& obj) {
  write_obj(mesh, obj);
  if (mesh.labels) write_labels(*mesh.labels, label_sidecar(obj));
}

TriMesh grid_mesh(std::size_t rows, std::size_t cols, double spacing) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("grid_mesh: need at least 2x2 vertices");
  TriMesh m;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = static_cast<double>(c) * spacing;
      const double y = static_cast<double>(r) * spacing;
      m.vertices.emplace_back(x, y, 0.3 * std::sin(0.7 * x) * std::cos(0.5 * y));
    }
  }
  std::vector<std::int32_t> labels;
  auto id = [&](std::size_t r, std::size_t c) { return static_cast<std::uint32_t>(r * cols + c); };
  for (std::size_t r = 0; r + 1 < rows; ++r) {
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      const std::int32_t label = static_cast<std::int32_t>((r < rows / 2 ? 0 : 2) + (c < cols / 2 ? 0 : 1));
      m.faces.push_back({id(r, c), id(r, c + 1), id(r + 1, c + 1)});
      m.faces.push_back({id(r, c), id(r + 1, c + 1), id(r + 1, c)});
      labels.push_back(label);
      labels.push_back(label);
    }
  }
  m.labels = std::move(labels);
  return m;
}

}  // namespace dgnc
