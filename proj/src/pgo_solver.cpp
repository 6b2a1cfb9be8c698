#include "dgnc/pgo_solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>

namespace dgnc {

double pgo_cost(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                const PoseMap& poses) {
  double cost = 0.0;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const Edge& e = graph.edges[k];
    if (weights[k] == 0.0) continue;
    cost += weights[k] * chordal_residual_sq(poses.at(e.src), poses.at(e.dst), e.meas, e.w_rot, e.w_tr);
  }
  return cost;
}

double pgo_cost(const MultiRobotPoseGraph& graph, const PoseMap& poses) {
  const std::vector<double> ones(graph.edges.size(), 1.0);
  return pgo_cost(graph, ones, poses);
}

std::vector<double> graph_weights(const MultiRobotPoseGraph& graph) {
  std::vector<double> w;
  w.reserve(graph.edges.size());
  for (const Edge& e : graph.edges) w.push_back(e.gnc_weight);
  return w;
}

PoseMap transform_poses(const Pose3d& g, const PoseMap& poses) {
  PoseMap out;
  for (const auto& [id, p] : poses) out.emplace(id, g * p);
  return out;
}

PoseMap anchor_poses(const PoseMap& poses, NodeId anchor) {
  return transform_poses(poses.at(anchor).inverse(), poses);
}

namespace {

using Triplet = Eigen::Triplet<double>;
using Mat12x6 = Eigen::Matrix<double, 12, 6>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

struct Linearization {
  Eigen::SparseMatrix<double> hessian;
  Eigen::VectorXd gradient;  // Jᵀ r
  double cost = 0.0;
};

void edge_jacobians(const Pose3d& xi, const Pose3d& xj, const Edge& e, double w, Vec12& r,
                    Mat12x6& ji, Mat12x6& jj) {
  const double sr = std::sqrt(w * e.w_rot);
  const double st = std::sqrt(w * e.w_tr);
  const Matrix3d& ri = xi.rot().matrix();
  const Matrix3d& rj = xj.rot().matrix();
  const Matrix3d& rm = e.meas.rot().matrix();
  const Vector3d& tm = e.meas.trans();

  const Matrix3d rot_err = rj - ri * rm;
  r.head<9>() = sr * Eigen::Map<const Eigen::Matrix<double, 9, 1>>(rot_err.data());
  r.tail<3>() = st * (xj.trans() - xi.trans() - ri * tm);

  ji.setZero();
  jj.setZero();
  for (int k = 0; k < 3; ++k) {
    const Vector3d ek = Vector3d::Unit(k);
    const Matrix3d di = -sr * ri * skew(ek) * rm;
    const Matrix3d dj = sr * rj * skew(ek);
    ji.block<9, 1>(0, k) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(di.data());
    jj.block<9, 1>(0, k) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(dj.data());
  }
  ji.block<3, 3>(9, 0) = st * ri * skew(tm);
  ji.block<3, 3>(9, 3) = -st * Matrix3d::Identity();
  jj.block<3, 3>(9, 3) = st * Matrix3d::Identity();
}

Linearization linearize(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                        const PoseMap& poses, const std::map<NodeId, int>& var) {
  const int n = static_cast<int>(var.size()) * 6;
  Linearization lin;
  lin.gradient = Eigen::VectorXd::Zero(n);
  std::vector<Triplet> trip;
  trip.reserve(graph.edges.size() * 4 * 36);
  // keep the diagonal in the pattern so damping never inserts entries
  for (int k = 0; k < n; ++k) trip.emplace_back(k, k, 0.0);
  Vec12 r;
  Mat12x6 ji, jj;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    const double w = weights[k];
    if (w == 0.0) continue;
    const Edge& e = graph.edges[k];
    edge_jacobians(poses.at(e.src), poses.at(e.dst), e, w, r, ji, jj);
    lin.cost += r.squaredNorm();
    const int vi = var.at(e.src);
    const int vj = var.at(e.dst);
    const Mat12x6* jac[2] = {&ji, &jj};
    const int idx[2] = {vi, vj};
    for (int a = 0; a < 2; ++a) {
      if (idx[a] < 0) continue;
      lin.gradient.segment<6>(idx[a] * 6) += jac[a]->transpose() * r;
      for (int b = 0; b < 2; ++b) {
        if (idx[b] < 0) continue;
        const Eigen::Matrix<double, 6, 6> blk = jac[a]->transpose() * *jac[b];
        for (int p = 0; p < 6; ++p) {
          for (int q = 0; q < 6; ++q) trip.emplace_back(idx[a] * 6 + p, idx[b] * 6 + q, blk(p, q));
        }
      }
    }
  }
  lin.hessian.resize(n, n);
  lin.hessian.setFromTriplets(trip.begin(), trip.end());
  return lin;
}

PoseMap retract(const PoseMap& poses, const Eigen::VectorXd& delta, const std::map<NodeId, int>& var) {
  PoseMap out = poses;
  for (auto& [id, p] : out) {
    const int v = var.at(id);
    if (v < 0) continue;
    const Vector3d dw = delta.segment<3>(v * 6);
    const Vector3d dt = delta.segment<3>(v * 6 + 3);
    p = Pose3d(p.rot() * Rot3d::exp(dw), p.trans() + dt);
  }
  return out;
}

}  // namespace

LmResult solve_weighted_pgo(const MultiRobotPoseGraph& graph, std::span<const double> weights,
                            const PoseMap& init, const LmOptions& opts) {
  if (weights.size() != graph.edges.size()) throw std::invalid_argument("weights/edges size mismatch");
  LmResult res;
  res.poses = init;
  if (graph.nodes.empty()) {
    res.converged = true;
    return res;
  }
  for (const auto& [id, node] : graph.nodes) {
    if (!init.contains(id)) throw std::invalid_argument("initial guess does not cover every node");
  }

  std::map<NodeId, int> var;
  int next = 0;
  const NodeId anchor = graph.nodes.begin()->first;
  for (const auto& [id, node] : graph.nodes) var[id] = id == anchor ? -1 : next++;
  if (next == 0) {
    res.converged = true;
    return res;
  }

  double lambda = opts.initial_lambda;
  Linearization lin = linearize(graph, weights, res.poses, var);
  res.cost = lin.cost;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool pattern_ready = false;

  for (int it = 0; it < opts.max_iters; ++it) {
    res.grad_norm = 2.0 * lin.gradient.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(res.cost)) throw SolverError("non-finite cost", res.poses);
    if (res.grad_norm < opts.grad_tol) {
      res.converged = true;
      return res;
    }
    const Eigen::VectorXd diag = lin.hessian.diagonal().cwiseMax(1e-9);
    bool accepted = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = lin.hessian;
      for (int k = 0; k < damped.rows(); ++k) damped.coeffRef(k, k) += lambda * diag(k);
      if (!pattern_ready) {
        ldlt.analyzePattern(damped);
        pattern_ready = true;
      }
      ldlt.factorize(damped);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 10.0;
        if (lambda > opts.max_lambda) throw SolverError("normal equations not solvable", res.poses);
        continue;
      }
      const Eigen::VectorXd delta = ldlt.solve(-lin.gradient);
      PoseMap cand = retract(res.poses, delta, var);
      const double cand_cost = pgo_cost(graph, weights, cand);
      if (std::isfinite(cand_cost) && cand_cost < res.cost) {
        const double rel = (res.cost - cand_cost) / std::max(res.cost, 1e-300);
        res.poses = std::move(cand);
        lin = linearize(graph, weights, res.poses, var);
        res.cost = lin.cost;
        res.iterations = it + 1;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < opts.rel_cost_tol) {
          res.grad_norm = 2.0 * lin.gradient.lpNorm<Eigen::Infinity>();
          res.converged = true;
          return res;
        }
      } else {
        lambda *= 10.0;
        if (lambda > opts.max_lambda) {
          // No descent direction left at machine precision.
          res.converged = true;
          return res;
        }
      }
    }
  }
  res.grad_norm = 2.0 * lin.gradient.lpNorm<Eigen::Infinity>();
  res.converged = res.grad_norm < opts.grad_tol;
  return res;
}

}  // namespace dgnc
