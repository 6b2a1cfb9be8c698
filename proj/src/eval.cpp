#include "dgnc/eval.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace dgnc {

Pose3d rigid_alignment(std::span<const Vector3d> src, std::span<const Vector3d> dst) {
  if (src.size() != dst.size()) throw EvalError("rigid_alignment: size mismatch");
  if (src.size() < 3) throw EvalError("rigid_alignment: need at least 3 points");
  Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
  for (std::size_t k = 0; k < src.size(); ++k) {
    a.col(k) = src[k];
    b.col(k) = dst[k];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
  return Pose3d(Rot3d(t.topLeftCorner<3, 3>()), t.topRightCorner<3, 1>());
}

namespace {

struct Aligned {
  Pose3d transform;
  std::vector<double> sq_errors;
};

Aligned align(const std::vector<Vector3d>& e, const std::vector<Vector3d>& r) {
  Aligned out;
  out.transform = rigid_alignment(e, r);
  for (std::size_t k = 0; k < e.size(); ++k) out.sq_errors.push_back((out.transform * e[k] - r[k]).squaredNorm());
  return out;
}

double rms(const std::vector<double>& sq) {
  double s = 0.0;
  for (double v : sq) s += v;
  return std::sqrt(s / static_cast<double>(sq.size()));
}

}  // namespace

AteReport ate(const PoseMap& est, const PoseMap& ref, AteAlignment mode) {
  if (est.size() != ref.size()) throw EvalError("ate: key sets differ");
  if (est.size() < 3) throw EvalError("ate: need at least 3 poses");
  std::map<RobotId, std::vector<Vector3d>> e_by, r_by;
  std::vector<Vector3d> e_all, r_all;
  for (const auto& [id, p] : est) {
    const auto it = ref.find(id);
    if (it == ref.end()) throw EvalError("ate: key sets differ");
    e_by[id.robot].push_back(p.trans());
    r_by[id.robot].push_back(it->second.trans());
    e_all.push_back(p.trans());
    r_all.push_back(it->second.trans());
  }
  AteReport rep;
  if (mode == AteAlignment::Joint) {
    const Aligned a = align(e_all, r_all);
    rep.alignment = a.transform;
    rep.rmse = rms(a.sq_errors);
    for (const auto& [robot, pts] : e_by) {
      std::vector<double> sq;
      for (std::size_t k = 0; k < pts.size(); ++k) sq.push_back((a.transform * pts[k] - r_by[robot][k]).squaredNorm());
      rep.per_robot[robot] = rms(sq);
    }
    return rep;
  }
  std::vector<double> all_sq;
  for (const auto& [robot, pts] : e_by) {
    const Aligned a = align(pts, r_by[robot]);
    rep.per_robot[robot] = rms(a.sq_errors);
    all_sq.insert(all_sq.end(), a.sq_errors.begin(), a.sq_errors.end());
  }
  rep.rmse = rms(all_sq);
  return rep;
}

PoseMap ml_reference(const MultiRobotPoseGraph& graph, const LmOptions& opts) {
  for (const Edge& e : graph.edges) {
    if (e.is_loop() && !e.truth) throw EvalError("ml_reference: loop edge without truth tag");
  }
  const MultiRobotPoseGraph inliers = graph.inlier_subgraph();
  const PoseMap init = spanning_tree_guess(inliers, [](const Edge&) { return true; });
  const std::vector<double> w(inliers.edges.size(), 1.0);
  return solve_weighted_pgo(inliers, w, init, opts).poses;
}

std::map<RobotId, double> end_to_end_error(const PoseMap& est) {
  std::map<RobotId, std::pair<Vector3d, Vector3d>> ends;
  std::map<RobotId, std::size_t> counts;
  for (const auto& [id, p] : est) {
    auto [it, fresh] = ends.try_emplace(id.robot, p.trans(), p.trans());
    if (!fresh) it->second.second = p.trans();
    ++counts[id.robot];
  }
  std::map<RobotId, double> out;
  for (const auto& [robot, fl] : ends) {
    if (counts[robot] < 2) throw EvalError("end_to_end_error: need at least 2 poses per robot");
    out[robot] = (fl.first - fl.second).norm();
  }
  return out;
}

ClassificationReport classification_report(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                                           double threshold) {
  if (weights.size() != graph.edges.size()) throw EvalError("classification_report: weight count mismatch");
  ClassificationReport rep;
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    if (!e.is_loop()) continue;
    if (!e.truth) throw EvalError("classification_report: untagged loop edge");
    const bool accepted = weights[k] > threshold;
    const bool inlier = *e.truth == Truth::Inlier;
    if (accepted && inlier) ++rep.true_positive;
    if (accepted && !inlier) ++rep.false_positive;
    if (!accepted && inlier) ++rep.false_negative;
    if (!accepted && !inlier) ++rep.true_negative;
  }
  const std::size_t acc = rep.true_positive + rep.false_positive;
  const std::size_t pos = rep.true_positive + rep.false_negative;
  rep.precision = acc == 0 ? 1.0 : static_cast<double>(rep.true_positive) / static_cast<double>(acc);
  rep.recall = pos == 0 ? 1.0 : static_cast<double>(rep.true_positive) / static_cast<double>(pos);
  return rep;
}

double trajectory_diameter(const PoseMap& poses) {
  std::vector<Vector3d> pts;
  for (const auto& [id, p] : poses) pts.push_back(p.trans());
  double d = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
  }
  return d;
}

}  // namespace dgnc
