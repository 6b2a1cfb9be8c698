#include "dgnc/robust_init.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace dgnc {

RobotDependencyGraph RobotDependencyGraph::from_graph(const MultiRobotPoseGraph& graph) {
  RobotDependencyGraph dep;
  dep.vertices = graph.robots();
  for (const Edge& e : graph.edges) {
    if (e.kind == EdgeKind::InterLoop) dep.edges.insert(std::minmax(e.src.robot, e.dst.robot));
  }
  return dep;
}

std::vector<RobotId> RobotDependencyGraph::neighbors(RobotId r) const {
  std::vector<RobotId> out;
  for (const auto& [a, b] : edges) {
    if (a == r) out.push_back(b);
    if (b == r) out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Pose3d candidate_alignment(const Edge& edge, const PoseMap& odom_src, const PoseMap& odom_dst) {
  const auto si = odom_src.find(edge.src);
  const auto dj = odom_dst.find(edge.dst);
  if (si == odom_src.end() || dj == odom_dst.end()) {
    throw std::invalid_argument("candidate_alignment: edge endpoint missing from odometry");
  }
  return si->second * edge.meas * dj->second.inverse();
}

namespace {

double average_cost(const Pose3d& x, std::span<const Pose3d> cands, std::span<const double> w,
                    const Matrix6d& whiten) {
  double c = 0.0;
  for (std::size_t k = 0; k < cands.size(); ++k) {
    if (w[k] == 0.0) continue;
    c += w[k] * (whiten * boxminus(x, cands[k])).squaredNorm();
  }
  return c;
}

Pose3d lm_average(Pose3d x, std::span<const Pose3d> cands, std::span<const double> w,
                  const Matrix6d& whiten, int max_iters, double grad_tol) {
  double lambda = 1e-4;
  double cost = average_cost(x, cands, w, whiten);
  for (int it = 0; it < max_iters; ++it) {
    Matrix6d h = Matrix6d::Zero();
    Vector6d g = Vector6d::Zero();
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (w[k] == 0.0) continue;
      const Vector6d d = boxminus(x, cands[k]);
      Matrix6d j = Matrix6d::Zero();
      j.topLeftCorner<3, 3>() = so3_right_jacobian_inverse<double>(d.head<3>());
      j.bottomRightCorner<3, 3>() = cands[k].rot().matrix().transpose();
      const Matrix6d wj = whiten * j;
      const Vector6d e = whiten * d;
      h += w[k] * wj.transpose() * wj;
      g += w[k] * wj.transpose() * e;
    }
    if (2.0 * g.lpNorm<Eigen::Infinity>() < grad_tol) break;
    bool accepted = false;
    while (!accepted && lambda < 1e12) {
      Matrix6d damped = h;
      damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-9);
      const Vector6d delta = damped.ldlt().solve(-g);
      const Pose3d cand(x.rot() * Rot3d::exp(delta.head<3>()), x.trans() + delta.tail<3>());
      const double c = average_cost(cand, cands, w, whiten);
      if (c < cost) {
        x = cand;
        cost = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return x;
}

[[noreturn]] void throw_disconnected(const RobotDependencyGraph& dep) {
  std::set<RobotId> left(dep.vertices.begin(), dep.vertices.end());
  std::ostringstream msg;
  msg << "robot dependency graph is disconnected; components:";
  while (!left.empty()) {
    std::deque<RobotId> q{*left.begin()};
    left.erase(left.begin());
    msg << " {";
    bool first = true;
    while (!q.empty()) {
      const RobotId c = q.front();
      q.pop_front();
      msg << (first ? "" : ",") << static_cast<int>(c);
      first = false;
      for (RobotId nb : dep.neighbors(c)) {
        if (left.erase(nb)) q.push_back(nb);
      }
    }
    msg << "}";
  }
  throw std::runtime_error(msg.str());
}
}  // namespace

PoseAverage robust_pose_average(std::span<const Pose3d> candidates, const RobustInitConfig& cfg) {
  if (candidates.empty()) throw std::invalid_argument("robust_pose_average: no candidates");
  cfg.tls.validate();
  const Matrix6d whiten = whitening_from_covariance(cfg.cov);
  const std::size_t n = candidates.size();
  auto residuals = [&](const Pose3d& x) {
    std::vector<double> r2(n);
    for (std::size_t k = 0; k < n; ++k) r2[k] = (whiten * boxminus(x, candidates[k])).squaredNorm();
    return r2;
  };

  PoseAverage out;
  out.weights.assign(n, 1.0);
  out.pose = lm_average(Pose3d::identity(), candidates, out.weights, whiten, cfg.lm_max_iters,
                        cfg.lm_grad_tol);
  std::vector<double> r2 = residuals(out.pose);
  const double max_r2 = *std::max_element(r2.begin(), r2.end());
  if (max_r2 > 0.0) {
    GncState state;
    state.mu = init_mu(max_r2, cfg.tls.c_bar_sq);
    state.weights = out.weights;
    while (true) {
      const std::vector<double> prev = state.weights;
      for (std::size_t k = 0; k < n; ++k) state.weights[k] = tls_weight(r2[k], state.mu, cfg.tls.c_bar_sq);
      out.pose = lm_average(out.pose, candidates, state.weights, whiten, cfg.lm_max_iters,
                            cfg.lm_grad_tol);
      ++state.outer_iter;
      if (std::isinf(state.mu) || gnc_converged(state, prev, cfg.tls)) break;
      state.mu *= cfg.tls.mu_update_factor;
      r2 = residuals(out.pose);
    }
    out.weights = state.weights;
  }

  auto tls_cost = [&](const std::vector<double>& r) {
    double c = 0.0;
    for (double v : r) c += std::min(v, cfg.tls.c_bar_sq);
    return c;
  };
  double best_cost = tls_cost(residuals(out.pose));
  // hard TLS refinement seeded at each candidate; keeps the lowest objective
  for (std::size_t s = 0; s < n; ++s) {
    Pose3d x = candidates[s];
    std::vector<double> w(n, 0.0);
    for (int it = 0; it < cfg.lm_max_iters; ++it) {
      const std::vector<double> r = residuals(x);
      std::vector<double> next(n);
      for (std::size_t k = 0; k < n; ++k) next[k] = r[k] <= cfg.tls.c_bar_sq ? 1.0 : 0.0;
      if (next == w) break;
      w = std::move(next);
      if (std::count(w.begin(), w.end(), 1.0) == 0) break;
      x = lm_average(x, candidates, w, whiten, cfg.lm_max_iters, cfg.lm_grad_tol);
    }
    const std::vector<double> r = residuals(x);
    const double c = tls_cost(r);
    if (c < best_cost - 1e-9 * (1.0 + best_cost)) {
      best_cost = c;
      out.pose = x;
      for (std::size_t k = 0; k < n; ++k) out.weights[k] = r[k] <= cfg.tls.c_bar_sq ? 1.0 : 0.0;
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    if (out.weights[k] > 0.5) out.inliers.push_back(k);
  }
  if (out.inliers.empty()) {
    r2 = residuals(out.pose);
    const auto best = static_cast<std::size_t>(std::min_element(r2.begin(), r2.end()) - r2.begin());
    out.pose = candidates[best];
    out.inliers = {best};
    out.low_confidence = true;
  }
  return out;
}

SpanningTree build_spanning_tree(const RobotDependencyGraph& dep, RobotId root) {
  if (std::find(dep.vertices.begin(), dep.vertices.end(), root) == dep.vertices.end()) {
    throw std::invalid_argument("build_spanning_tree: root not in graph");
  }
  SpanningTree tree;
  tree.root = root;
  std::set<RobotId> seen{root};
  std::deque<RobotId> queue{root};
  while (!queue.empty()) {
    const RobotId cur = queue.front();
    queue.pop_front();
    tree.bfs_order.push_back(cur);
    for (RobotId nb : dep.neighbors(cur)) {
      if (seen.insert(nb).second) {
        tree.parent[nb] = cur;
        queue.push_back(nb);
      }
    }
  }
  if (seen.size() != dep.vertices.size()) throw_disconnected(dep);
  return tree;
}

SpanningTree build_spanning_tree(const RobotDependencyGraph& dep, RobotId root,
                                 const std::map<RobotPair, double>& support) {
  if (std::find(dep.vertices.begin(), dep.vertices.end(), root) == dep.vertices.end()) {
    throw std::invalid_argument("build_spanning_tree: root not in graph");
  }
  SpanningTree tree;
  tree.root = root;
  tree.bfs_order.push_back(root);
  std::set<RobotId> in{root};
  while (in.size() < dep.vertices.size()) {
    std::optional<std::pair<RobotId, RobotId>> best;
    double best_support = -std::numeric_limits<double>::infinity();
    for (const RobotPair& pr : dep.edges) {
      const bool a_in = in.count(pr.first) > 0;
      const bool b_in = in.count(pr.second) > 0;
      if (a_in == b_in) continue;
      const RobotId parent = a_in ? pr.first : pr.second;
      const RobotId child = a_in ? pr.second : pr.first;
      const auto it = support.find(pr);
      const double s = it == support.end() ? 0.0 : it->second;
      if (s > best_support || (s == best_support && std::pair(parent, child) < *best)) {
        best_support = s;
        best = std::pair(parent, child);
      }
    }
    if (!best) throw_disconnected(dep);
    tree.parent[best->second] = best->first;
    tree.bfs_order.push_back(best->second);
    in.insert(best->second);
  }
  return tree;
}


std::map<RobotId, Pose3d> assemble_global_frames(const SpanningTree& tree,
                                                 const std::map<RobotPair, FrameAlignment>& pairwise) {
  std::map<RobotId, Pose3d> frames;
  frames[tree.root] = Pose3d::identity();
  for (RobotId r : tree.bfs_order) {
    if (r == tree.root) continue;
    const RobotId p = tree.parent.at(r);
    Pose3d parent_to_child;
    if (auto it = pairwise.find({p, r}); it != pairwise.end()) {
      parent_to_child = it->second.transform;
    } else if (auto jt = pairwise.find({r, p}); jt != pairwise.end()) {
      parent_to_child = jt->second.transform.inverse();
    } else {
      throw std::invalid_argument("assemble_global_frames: missing alignment for tree edge");
    }
    frames[r] = frames.at(p) * parent_to_child;
  }
  return frames;
}

PairCandidates pair_candidates(const MultiRobotPoseGraph& graph, RobotId a, RobotId b,
                               const std::map<RobotId, PoseMap>& odometry) {
  PairCandidates out;
  const PoseMap& oa = odometry.at(a);
  const PoseMap& ob = odometry.at(b);
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    if (e.kind != EdgeKind::InterLoop) continue;
    if (e.src.robot == a && e.dst.robot == b) {
      out.candidates.push_back(candidate_alignment(e, oa, ob));
    } else if (e.src.robot == b && e.dst.robot == a) {
      out.candidates.push_back(candidate_alignment(e, ob, oa).inverse());
    } else {
      continue;
    }
    out.edges.push_back(k);
  }
  return out;
}

FrameAlignment align_pair(const MultiRobotPoseGraph& graph, RobotId a, RobotId b,
                          const std::map<RobotId, PoseMap>& odometry, const RobustInitConfig& cfg) {
  const PairCandidates pc = pair_candidates(graph, a, b, odometry);
  if (pc.candidates.empty()) throw std::invalid_argument("align_pair: robots share no loop closure");
  const PoseAverage avg = robust_pose_average(pc.candidates, cfg);
  FrameAlignment fa;
  fa.from_robot = a;
  fa.to_robot = b;
  fa.transform = avg.pose;
  fa.low_confidence = avg.low_confidence;
  for (std::size_t k : avg.inliers) fa.inlier_edges.push_back(pc.edges[k]);
  return fa;
}

std::map<RobotId, PoseMap> local_odometry(const MultiRobotPoseGraph& graph) {
  std::map<RobotId, PoseMap> out;
  for (RobotId r : graph.robots()) out[r] = graph.odometry_chain(r);
  return out;
}

PoseMap apply_frames(const std::map<RobotId, PoseMap>& odometry,
                     const std::map<RobotId, Pose3d>& frames) {
  PoseMap out;
  for (const auto& [r, traj] : odometry) {
    const Pose3d& f = frames.at(r);
    for (const auto& [id, p] : traj) out.emplace(id, f * p);
  }
  return out;
}

}  // namespace dgnc
