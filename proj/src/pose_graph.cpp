#include "dgnc/pose_graph.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace dgnc {

std::vector<RobotId> MultiRobotPoseGraph::robots() const {
  std::vector<RobotId> out;
  for (const auto& [id, node] : nodes) {
    if (out.empty() || out.back() != id.robot) out.push_back(id.robot);
  }
  return out;
}

std::size_t MultiRobotPoseGraph::num_poses(RobotId robot) const {
  return static_cast<std::size_t>(std::count_if(
      nodes.begin(), nodes.end(), [robot](const auto& kv) { return kv.first.robot == robot; }));
}

std::size_t MultiRobotPoseGraph::num_loops() const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [](const Edge& e) { return e.is_loop(); }));
}

bool MultiRobotPoseGraph::has_edge_between(NodeId a, NodeId b) const {
  return std::any_of(edges.begin(), edges.end(), [&](const Edge& e) {
    return (e.src == a && e.dst == b) || (e.src == b && e.dst == a);
  });
}

void MultiRobotPoseGraph::validate() const {
  for (RobotId r : robots()) {
    std::uint32_t expected = 0;
    for (auto it = nodes.lower_bound({r, 0}); it != nodes.end() && it->first.robot == r; ++it) {
      if (it->first.index != expected) {
        throw GraphError("robot " + std::to_string(r) + ": pose indices are not contiguous at " +
                         std::to_string(expected));
      }
      ++expected;
    }
  }
  std::set<NodeId> odom_sources;
  for (const Edge& e : edges) {
    if (!has_node(e.src) || !has_node(e.dst)) throw GraphError("edge references a missing node");
    if (!(e.gnc_weight >= 0.0 && e.gnc_weight <= 1.0)) throw GraphError("gnc weight outside [0,1]");
    if (!(e.w_rot > 0.0) || !(e.w_tr > 0.0)) throw GraphError("edge precisions must be positive");
    switch (e.kind) {
      case EdgeKind::Odometry:
        if (e.src.robot != e.dst.robot || e.dst.index != e.src.index + 1) {
          throw GraphError("odometry edge must connect consecutive poses of one robot");
        }
        odom_sources.insert(e.src);
        break;
      case EdgeKind::IntraLoop:
        if (e.src.robot != e.dst.robot) throw GraphError("intra-robot loop spans two robots");
        break;
      case EdgeKind::InterLoop:
        if (e.src.robot == e.dst.robot) throw GraphError("inter-robot loop within one robot");
        break;
    }
  }
  for (RobotId r : robots()) {
    const std::size_t n = num_poses(r);
    for (std::uint32_t i = 0; i + 1 < n; ++i) {
      if (!odom_sources.contains({r, i})) {
        throw GraphError("robot " + std::to_string(r) + ": odometry chain broken after pose " +
                         std::to_string(i));
      }
    }
  }
}

PoseMap MultiRobotPoseGraph::ground_truth() const {
  PoseMap out;
  for (const auto& [id, node] : nodes) {
    if (node.ground_truth) out.emplace(id, *node.ground_truth);
  }
  return out;
}

bool MultiRobotPoseGraph::has_ground_truth() const {
  return !nodes.empty() && std::all_of(nodes.begin(), nodes.end(), [](const auto& kv) {
    return kv.second.ground_truth.has_value();
  });
}

MultiRobotPoseGraph MultiRobotPoseGraph::inlier_subgraph() const {
  MultiRobotPoseGraph out;
  out.nodes = nodes;
  for (const Edge& e : edges) {
    if (!e.is_loop() || e.truth.value_or(Truth::Inlier) == Truth::Inlier) out.edges.push_back(e);
  }
  return out;
}

PoseMap MultiRobotPoseGraph::odometry_chain(RobotId robot) const {
  const std::size_t n = num_poses(robot);
  std::vector<const Edge*> step(n, nullptr);
  for (const Edge& e : edges) {
    if (e.kind == EdgeKind::Odometry && e.src.robot == robot && e.src.index + 1 < n &&
        step[e.src.index] == nullptr) {
      step[e.src.index] = &e;
    }
  }
  PoseMap out;
  if (n == 0) return out;
  Pose3d cur = Pose3d::identity();
  out.emplace(NodeId{robot, 0}, cur);
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    if (step[i] == nullptr) throw GraphError("odometry chain broken");
    cur = cur * step[i]->meas;
    out.emplace(NodeId{robot, i + 1}, cur);
  }
  return out;
}

// ---- g2o --------------------------------------------------------------------

namespace {

void assign_edge_kinds(MultiRobotPoseGraph& g) {
  std::set<NodeId> has_odom;
  for (Edge& e : g.edges) {
    if (e.src.robot != e.dst.robot) {
      e.kind = EdgeKind::InterLoop;
    } else if (e.dst.index == e.src.index + 1 && !has_odom.contains(e.src)) {
      e.kind = EdgeKind::Odometry;
      has_odom.insert(e.src);
    } else {
      e.kind = EdgeKind::IntraLoop;
    }
  }
}

void check_psd(const Eigen::MatrixXd& info, std::size_t line) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  const double scale = std::max(1.0, info.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale) {
    throw ParseError("information matrix is not positive semidefinite", line);
  }
}

template <typename... T>
void read_fields(std::istringstream& in, std::size_t line, T&... out) {
  ((in >> out) && ...);
  if (in.fail()) throw ParseError("malformed or truncated record", line);
}

Pose3d pose_from_quat(double x, double y, double z, double qx, double qy, double qz, double qw,
                      std::size_t line) {
  Eigen::Quaterniond q(qw, qx, qy, qz);
  if (!(q.norm() > 1e-12)) throw ParseError("zero quaternion", line);
  return {Rot3d::from_quaternion(q), Vector3d(x, y, z)};
}

Pose3d pose_from_se2(double x, double y, double theta) {
  return {Rot3d::about_z(theta), Vector3d(x, y, 0.0)};
}

// Components are snapped to a 1e-15 grid with a fixed sign, so a pose read
// back from the text and written again reproduces it byte for byte.
Eigen::Vector4d stable_quaternion(const Rot3d& r) {
  const Eigen::Quaterniond q = r.quaternion();
  Eigen::Vector4d c(q.x(), q.y(), q.z(), q.w());
  for (int i = 0; i < 4; ++i) c(i) = std::round(c(i) * 1e15) / 1e15 + 0.0;
  for (int i : {3, 0, 1, 2}) {
    if (c(i) != 0.0) {
      if (c(i) < 0.0) c = -c;
      break;
    }
  }
  return c;
}

void format_pose(std::ostream& out, const Pose3d& p) {
  const Eigen::Vector4d q = stable_quaternion(p.rot());
  out << p.trans().x() << ' ' << p.trans().y() << ' ' << p.trans().z() << ' ' << q(0) << ' ' << q(1)
      << ' ' << q(2) << ' ' << q(3);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct ParsedG2o {
  MultiRobotPoseGraph graph;
  std::map<EdgeId, Truth> truth;
};

ParsedG2o parse(const std::string& text) {
  ParsedG2o parsed;
  auto& g = parsed.graph;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::istringstream in(line);
    std::string tag;
    if (!(in >> tag)) continue;
    if (tag == "#") {
      std::string kw;
      if (in >> kw && kw == "TRUTH") {
        EdgeId idx = 0;
        std::string label;
        read_fields(in, lineno, idx, label);
        if (label != "inlier" && label != "outlier") throw ParseError("bad truth label", lineno);
        parsed.truth[idx] = label == "inlier" ? Truth::Inlier : Truth::Outlier;
      }
      continue;
    }
    if (tag.front() == '#' || tag == "FIX") continue;
    if (tag == "VERTEX_SE3:QUAT") {
      std::uint64_t id = 0;
      double x, y, z, qx, qy, qz, qw;
      read_fields(in, lineno, id, x, y, z, qx, qy, qz, qw);
      g.node(NodeId::from_g2o_id(id)).initial = pose_from_quat(x, y, z, qx, qy, qz, qw, lineno);
    } else if (tag == "VERTEX_SE2") {
      std::uint64_t id = 0;
      double x, y, th;
      read_fields(in, lineno, id, x, y, th);
      g.node(NodeId::from_g2o_id(id)).initial = pose_from_se2(x, y, th);
    } else if (tag == "EDGE_SE3:QUAT") {
      std::uint64_t i = 0, j = 0;
      double x, y, z, qx, qy, qz, qw;
      read_fields(in, lineno, i, j, x, y, z, qx, qy, qz, qw);
      Eigen::MatrixXd info(6, 6);
      for (int r = 0; r < 6; ++r) {
        for (int c = r; c < 6; ++c) {
          read_fields(in, lineno, info(r, c));
          info(c, r) = info(r, c);
        }
      }
      check_psd(info, lineno);
      Edge e;
      e.src = NodeId::from_g2o_id(i);
      e.dst = NodeId::from_g2o_id(j);
      e.meas = pose_from_quat(x, y, z, qx, qy, qz, qw, lineno);
      e.w_tr = info.diagonal().head<3>().mean();
      e.w_rot = 0.5 * info.diagonal().tail<3>().mean();
      if (!(e.w_tr > 0.0) || !(e.w_rot > 0.0)) throw ParseError("zero information", lineno);
      g.node(e.src);
      g.node(e.dst);
      g.edges.push_back(e);
    } else if (tag == "EDGE_SE2") {
      std::uint64_t i = 0, j = 0;
      double dx, dy, dth, i11, i12, i13, i22, i23, i33;
      read_fields(in, lineno, i, j, dx, dy, dth, i11, i12, i13, i22, i23, i33);
      Eigen::MatrixXd info(3, 3);
      info << i11, i12, i13, i12, i22, i23, i13, i23, i33;
      check_psd(info, lineno);
      Edge e;
      e.src = NodeId::from_g2o_id(i);
      e.dst = NodeId::from_g2o_id(j);
      e.meas = pose_from_se2(dx, dy, dth);
      e.w_tr = 0.5 * (i11 + i22);
      e.w_rot = 0.5 * i33;
      if (!(e.w_tr > 0.0) || !(e.w_rot > 0.0)) throw ParseError("zero information", lineno);
      g.node(e.src);
      g.node(e.dst);
      g.edges.push_back(e);
    } else {
      throw ParseError("unknown record type '" + tag + "'", lineno);
    }
  }
  assign_edge_kinds(g);
  for (const auto& [idx, t] : parsed.truth) {
    if (idx >= g.edges.size()) throw ParseError("truth tag for unknown edge", lineno);
    g.edges[idx].truth = t;
  }
  return parsed;
}

}  // namespace

MultiRobotPoseGraph parse_g2o(const std::string& text) {
  MultiRobotPoseGraph g = parse(text).graph;
  g.validate();
  return g;
}

MultiRobotPoseGraph read_g2o(const std::filesystem::path& path) { return parse_g2o(read_file(path)); }

std::string format_g2o(const MultiRobotPoseGraph& graph) {
  std::ostringstream out;
  out << std::setprecision(17);
  std::map<RobotId, PoseMap> chains;
  for (const auto& [id, node] : graph.nodes) {
    Pose3d p;
    if (node.initial) {
      p = *node.initial;
    } else {
      if (!chains.contains(id.robot)) chains[id.robot] = graph.odometry_chain(id.robot);
      p = chains[id.robot].at(id);
    }
    out << "VERTEX_SE3:QUAT " << id.g2o_id() << ' ';
    format_pose(out, p);
    out << '\n';
  }
  for (const Edge& e : graph.edges) {
    out << "EDGE_SE3:QUAT " << e.src.g2o_id() << ' ' << e.dst.g2o_id() << ' ';
    format_pose(out, e.meas);
    const double diag[6] = {e.w_tr, e.w_tr, e.w_tr, 2 * e.w_rot, 2 * e.w_rot, 2 * e.w_rot};
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) out << ' ' << (r == c ? diag[r] : 0.0);
    }
    out << '\n';
  }
  for (EdgeId i = 0; i < graph.edges.size(); ++i) {
    if (graph.edges[i].truth) {
      out << "# TRUTH " << i << ' '
          << (*graph.edges[i].truth == Truth::Inlier ? "inlier" : "outlier") << '\n';
    }
  }
  return out.str();
}

void write_g2o(const MultiRobotPoseGraph& graph, const std::filesystem::path& path) {
  write_file(path, format_g2o(graph));
}

PoseMap read_g2o_vertices(const std::filesystem::path& path) {
  const ParsedG2o parsed = parse(read_file(path));
  PoseMap out;
  for (const auto& [id, node] : parsed.graph.nodes) {
    if (node.initial) out.emplace(id, *node.initial);
  }
  return out;
}

void write_g2o_vertices(const PoseMap& poses, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& [id, p] : poses) {
    out << "VERTEX_SE3:QUAT " << id.g2o_id() << ' ';
    format_pose(out, p);
    out << '\n';
  }
  write_file(path, out.str());
}

std::filesystem::path ground_truth_sidecar(const std::filesystem::path& path) {
  std::filesystem::path out = path;
  out.replace_extension(".gt.g2o");
  return out;
}

MultiRobotPoseGraph load_dataset(const std::filesystem::path& path) {
  MultiRobotPoseGraph g = read_g2o(path);
  const auto gt_path = ground_truth_sidecar(path);
  if (std::filesystem::exists(gt_path)) {
    for (const auto& [id, pose] : read_g2o_vertices(gt_path)) {
      if (!g.has_node(id)) throw GraphError("ground truth for unknown vertex");
      g.nodes[id].ground_truth = pose;
    }
  }
  return g;
}

void save_dataset(const MultiRobotPoseGraph& graph, const std::filesystem::path& path) {
  write_g2o(graph, path);
  if (graph.has_ground_truth()) write_g2o_vertices(graph.ground_truth(), ground_truth_sidecar(path));
}

// ---- manipulation -----------------------------------------------------------

MultiRobotPoseGraph partition(const MultiRobotPoseGraph& graph, std::size_t robots) {
  const auto ids = graph.robots();
  if (ids.size() > 1) throw GraphError("partition expects a single-robot graph");
  if (robots == 0) throw GraphError("partition: robot count must be >= 1");
  const std::size_t n = graph.nodes.size();
  if (robots > n) throw GraphError("partition: more robots than poses");
  if (robots == 1) return graph;

  const std::size_t base = n / robots;
  const std::size_t extra = n % robots;
  std::vector<NodeId> remap(n);
  std::size_t k = 0;
  for (std::size_t r = 0; r < robots; ++r) {
    const std::size_t len = base + (r < extra ? 1 : 0);
    for (std::size_t i = 0; i < len; ++i, ++k) {
      remap[k] = {static_cast<RobotId>(r), static_cast<std::uint32_t>(i)};
    }
  }
  MultiRobotPoseGraph out;
  for (const auto& [id, node] : graph.nodes) out.nodes[remap[id.index]] = node;
  for (Edge e : graph.edges) {
    const EdgeKind old = e.kind;
    e.src = remap[e.src.index];
    e.dst = remap[e.dst.index];
    if (e.src.robot != e.dst.robot) {
      e.kind = EdgeKind::InterLoop;
      if (old == EdgeKind::Odometry && !e.truth) e.truth = Truth::Inlier;
    } else {
      e.kind = old == EdgeKind::Odometry ? EdgeKind::Odometry : EdgeKind::IntraLoop;
    }
    out.edges.push_back(e);
  }
  out.validate();
  return out;
}

MultiRobotPoseGraph inject_outliers(const MultiRobotPoseGraph& graph, const OutlierOptions& opts) {
  if (!(opts.ratio >= 0.0) || opts.ratio >= 1.0) throw GraphError("outlier ratio must be in [0,1)");
  if (graph.nodes.size() < 3) throw GraphError("inject_outliers needs at least 3 poses");
  MultiRobotPoseGraph out = graph;
  const std::size_t true_loops = graph.num_loops();
  const auto k = static_cast<std::size_t>(
      std::llround(opts.ratio * static_cast<double>(true_loops) / (1.0 - opts.ratio)));
  if (k == 0) return out;

  double w_rot = 1.0, w_tr = 1.0;
  const auto ref = std::find_if(graph.edges.begin(), graph.edges.end(),
                                [](const Edge& e) { return e.is_loop(); });
  if (ref != graph.edges.end()) {
    w_rot = ref->w_rot;
    w_tr = ref->w_tr;
  } else if (!graph.edges.empty()) {
    w_rot = graph.edges.front().w_rot;
    w_tr = graph.edges.front().w_tr;
  }

  std::vector<NodeId> node_ids;
  for (const auto& [id, node] : graph.nodes) node_ids.push_back(id);
  std::set<std::pair<NodeId, NodeId>> taken;
  for (const Edge& e : graph.edges) {
    taken.insert(std::minmax(e.src, e.dst));
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, node_ids.size() - 1);
  std::uniform_real_distribution<double> coord(-opts.translation_range, opts.translation_range);
  std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::size_t added = 0;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * (k + 10);
  while (added < k) {
    if (++attempts > max_attempts) throw GraphError("not enough non-adjacent pose pairs for outliers");
    const NodeId a = node_ids[pick(rng)];
    const NodeId b = node_ids[pick(rng)];
    if (a == b) continue;
    if (a.robot == b.robot && (a.index > b.index ? a.index - b.index : b.index - a.index) <= 1) continue;
    if (!taken.insert(std::minmax(a, b)).second) continue;

    Edge e;
    e.src = a;
    e.dst = b;
    e.kind = a.robot == b.robot ? EdgeKind::IntraLoop : EdgeKind::InterLoop;
    e.w_rot = w_rot;
    e.w_tr = w_tr;
    e.truth = Truth::Outlier;
    Rot3d rot;
    Vector3d t;
    if (opts.planar) {
      rot = Rot3d::about_z(yaw(rng));
      const double x = coord(rng);
      const double y = coord(rng);
      t = Vector3d(x, y, 0.0);
    } else {
      const double qw = gauss(rng), qx = gauss(rng), qy = gauss(rng), qz = gauss(rng);
      rot = Rot3d::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz));
      const double x = coord(rng), y = coord(rng), z = coord(rng);
      t = Vector3d(x, y, z);
    }
    e.meas = Pose3d(rot, t);
    out.edges.push_back(e);
    ++added;
  }
  return out;
}

MultiRobotPoseGraph synth_grid(const GridOptions& opts) {
  const std::size_t n = opts.rows * opts.cols;
  if (n < std::max<std::size_t>(opts.robots, 1)) throw GraphError("synth_grid: rows*cols < robots");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto cell_of = [&](std::size_t k) {
    const std::size_t r = k / opts.cols;
    const std::size_t c = r % 2 == 0 ? k % opts.cols : opts.cols - 1 - k % opts.cols;
    return std::pair{r, c};
  };
  auto index_of = [&](std::size_t r, std::size_t c) {
    return r * opts.cols + (r % 2 == 0 ? c : opts.cols - 1 - c);
  };

  std::vector<Pose3d> truth(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto [r, c] = cell_of(k);
    const double heading = r % 2 == 0 ? 0.0 : std::numbers::pi;
    truth[k] = Pose3d(Rot3d::about_z(heading),
                      Vector3d(static_cast<double>(c) * opts.spacing,
                               static_cast<double>(r) * opts.spacing, 0.0));
  }

  const double w_rot = rot_precision(opts.sigma_rot);
  const double w_tr = tr_precision(opts.sigma_tr);
  auto measure = [&](std::size_t i, std::size_t j) {
    const Pose3d rel = truth[i].inverse() * truth[j];
    Vector6d d = Vector6d::Zero();
    d(2) = opts.noise_rot * gauss(rng);
    d(3) = opts.noise_tr * gauss(rng);
    d(4) = opts.noise_tr * gauss(rng);
    return boxplus(rel, d);
  };

  MultiRobotPoseGraph g;
  for (std::size_t k = 0; k < n; ++k) {
    g.node({0, static_cast<std::uint32_t>(k)}).ground_truth = truth[k];
  }
  auto add_edge = [&](std::size_t i, std::size_t j, EdgeKind kind) {
    Edge e;
    e.src = {0, static_cast<std::uint32_t>(i)};
    e.dst = {0, static_cast<std::uint32_t>(j)};
    e.meas = measure(i, j);
    e.w_rot = w_rot;
    e.w_tr = w_tr;
    e.kind = kind;
    e.truth = Truth::Inlier;
    g.edges.push_back(e);
  };
  for (std::size_t k = 0; k + 1 < n; ++k) add_edge(k, k + 1, EdgeKind::Odometry);
  for (std::size_t k = 0; k < n; ++k) {
    const auto [r, c] = cell_of(k);
    if (r == 0) continue;
    const std::size_t partner = index_of(r - 1, c);
    if (k - partner <= 1) continue;
    if (unif(rng) < opts.loop_prob) add_edge(partner, k, EdgeKind::IntraLoop);
  }
  for (const auto& [id, pose] : g.odometry_chain(0)) g.node(id).initial = pose;
  g.validate();
  return opts.robots > 1 ? partition(g, opts.robots) : g;
}

}  // namespace dgnc
