#include "dgnc/rbcd.hpp"

#include "dgnc/pgo_solver.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dgnc {

void RbcdConfig::validate() const {
  if (rank < 3) throw std::invalid_argument("rbcd: rank must be >= 3");
  if (iters_per_round <= 0) throw std::invalid_argument("rbcd: iters_per_round must be positive");
  if (local_iters <= 0) throw std::invalid_argument("rbcd: local_iters must be positive");
  if (encoding == PoseEncoding::Pose3 && rank != 3) {
    throw std::invalid_argument("rbcd: Pose3 wire encoding requires rank 3");
  }
  if (!(initial_radius > 0.0)) throw std::invalid_argument("rbcd: initial_radius must be positive");
}

PoseEncoding RbcdConfig::wire_encoding() const {
  if (encoding != PoseEncoding::Auto) return encoding;
  return rank == 3 ? PoseEncoding::Pose3 : PoseEncoding::Lifted;
}

int RobotBlock::rank() const { return lifted.empty() ? 0 : lifted.begin()->second.rank(); }

std::set<std::uint32_t> public_indices(const MultiRobotPoseGraph& graph, RobotId robot) {
  std::set<std::uint32_t> out;
  for (const Edge& e : graph.edges) {
    if (e.src.robot == e.dst.robot) continue;
    if (e.src.robot == robot) out.insert(e.src.index);
    if (e.dst.robot == robot) out.insert(e.dst.index);
  }
  return out;
}

std::vector<EdgeId> local_edges(const MultiRobotPoseGraph& graph, RobotId robot) {
  std::vector<EdgeId> out;
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    if (graph.edges[k].src.robot == robot || graph.edges[k].dst.robot == robot) out.push_back(k);
  }
  return out;
}

std::vector<RobotId> neighbor_robots(const MultiRobotPoseGraph& graph, RobotId robot) {
  std::set<RobotId> out;
  for (const Edge& e : graph.edges) {
    if (e.src.robot == robot && e.dst.robot != robot) out.insert(e.dst.robot);
    if (e.dst.robot == robot && e.src.robot != robot) out.insert(e.src.robot);
  }
  return {out.begin(), out.end()};
}

BlockMap lift(const MultiRobotPoseGraph& graph, const PoseMap& poses, int rank) {
  if (rank < 3) throw std::invalid_argument("lift: rank must be >= 3");
  BlockMap blocks;
  for (RobotId r : graph.robots()) {
    RobotBlock& b = blocks[r];
    b.robot = r;
    b.public_indices = public_indices(graph, r);
  }
  for (const auto& [id, node] : graph.nodes) {
    blocks[id.robot].lifted[id.index] = LiftedPosed::lift(poses.at(id), rank);
  }
  return blocks;
}

namespace {

const LiftedPosed& lifted_at(const BlockMap& blocks, NodeId id) {
  return blocks.at(id.robot).lifted.at(id.index);
}

}  // namespace

double lifted_cost(const MultiRobotPoseGraph& graph, std::span<const double> weights, const BlockMap& blocks) {
  double c = 0.0;
  for (EdgeId k = 0; k < graph.edges.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Edge& e = graph.edges[k];
    c += weights[k] * lifted_residual_sq(lifted_at(blocks, e.src), lifted_at(blocks, e.dst), e.meas, e.w_rot, e.w_tr);
  }
  return c;
}

PoseMap round_solution(const BlockMap& blocks) {
  std::vector<std::pair<NodeId, const LiftedPosed*>> all;
  for (const auto& [r, b] : blocks) {
    for (const auto& [idx, lp] : b.lifted) all.emplace_back(NodeId{r, idx}, &lp);
  }
  if (all.empty()) throw RbcdError("round_solution: no poses");
  const int rank = all.front().second->rank();
  Eigen::MatrixXd stack(rank, 3 * all.size());
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (all[k].second->rank() != rank) throw RbcdError("round_solution: mixed ranks");
    stack.middleCols<3>(3 * k) = all[k].second->y_rot;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(2) > 1e-10 * sv(0))) throw RbcdError("round_solution: degenerate rotation stack");
  Eigen::Matrix<double, Eigen::Dynamic, 3> basis = svd.matrixU().leftCols<3>();

  // rotate the basis toward the canonical embedding [I; 0]
  const Matrix3d a = basis.topRows<3>().transpose();
  Eigen::JacobiSVD<Matrix3d> pa(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  basis = basis * (pa.matrixU() * pa.matrixV().transpose());

  std::size_t negative = 0;
  for (const auto& [id, lp] : all) {
    if ((basis.transpose() * lp->y_rot).determinant() < 0.0) ++negative;
  }
  if (2 * negative > all.size()) basis.col(2) *= -1.0;

  PoseMap out;
  for (const auto& [id, lp] : all) {
    out.emplace(id, Pose3d(project_to_so3<double>(basis.transpose() * lp->y_rot),
                           basis.transpose() * lp->y_trans));
  }
  return out;
}

PoseMap fix_gauge(const PoseMap& poses, RobotId root) {
  for (const auto& [id, p] : poses) {
    if (id.robot == root) return anchor_poses(poses, id);
  }
  throw std::invalid_argument("fix_gauge: root robot has no poses");
}


namespace {

using Triplet = Eigen::Triplet<double>;

void add_block(std::vector<Triplet>& t, int row, int col, const Eigen::Matrix4d& blk) {
  for (int p = 0; p < 4; ++p) {
    for (int q = 0; q < 4; ++q) {
      if (blk(p, q) != 0.0) t.emplace_back(4 * row + p, 4 * col + q, blk(p, q));
    }
  }
}

double dot(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return a.cwiseProduct(b).sum(); }

Eigen::Matrix3d sym(const Eigen::Matrix3d& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

BlockProblem::BlockProblem(const MultiRobotPoseGraph& graph, const RobotBlock& block,
                           std::span<const EdgeId> edges, std::span<const double> weights) {
  std::map<NodeId, int> owned_slot;
  for (const auto& [idx, lp] : block.lifted) {
    owned_slot[{block.robot, idx}] = static_cast<int>(owned_.size());
    owned_.push_back({block.robot, idx});
  }
  std::set<NodeId> ext;
  for (EdgeId k : edges) {
    const Edge& e = graph.edges.at(k);
    if (e.src.robot != block.robot && e.dst.robot != block.robot) {
      throw std::invalid_argument("BlockProblem: edge does not touch the block");
    }
    if (e.src.robot != block.robot) ext.insert(e.src);
    if (e.dst.robot != block.robot) ext.insert(e.dst);
  }
  external_.assign(ext.begin(), ext.end());
  std::map<NodeId, int> ext_slot;
  for (std::size_t k = 0; k < external_.size(); ++k) ext_slot[external_[k]] = static_cast<int>(k);

  auto slot = [&](NodeId id, bool& is_ext) {
    if (auto it = owned_slot.find(id); it != owned_slot.end()) {
      is_ext = false;
      return it->second;
    }
    is_ext = true;
    return ext_slot.at(id);
  };

  std::vector<Triplet> tq, tb;
  for (EdgeId k : edges) {
    const double w = weights[k];
    if (w == 0.0) continue;
    const Edge& e = graph.edges[k];
    detail::BlockEdge be;
    be.src = slot(e.src, be.src_external);
    be.dst = slot(e.dst, be.dst_external);
    be.rot = e.meas.rot().matrix();
    be.trans = e.meas.trans();
    be.kappa = w * e.w_rot;
    be.tau = w * e.w_tr;
    edges_.push_back(be);

    // 4×4 blocks of κ D Dᵀ + τ d dᵀ (see header)
    Eigen::Matrix4d aii = Eigen::Matrix4d::Zero();
    aii.topLeftCorner<3, 3>() = be.kappa * Matrix3d::Identity() + be.tau * be.trans * be.trans.transpose();
    aii.topRightCorner<3, 1>() = be.tau * be.trans;
    aii.bottomLeftCorner<1, 3>() = be.tau * be.trans.transpose();
    aii(3, 3) = be.tau;
    Eigen::Matrix4d ajj = Eigen::Matrix4d::Zero();
    ajj.topLeftCorner<3, 3>() = be.kappa * Matrix3d::Identity();
    ajj(3, 3) = be.tau;
    Eigen::Matrix4d aij = Eigen::Matrix4d::Zero();
    aij.topLeftCorner<3, 3>() = -be.kappa * be.rot;
    aij.topRightCorner<3, 1>() = -be.tau * be.trans;
    aij(3, 3) = -be.tau;

    if (!be.src_external) add_block(tq, be.src, be.src, aii);
    if (!be.dst_external) add_block(tq, be.dst, be.dst, ajj);
    if (!be.src_external && !be.dst_external) {
      add_block(tq, be.src, be.dst, aij);
      add_block(tq, be.dst, be.src, aij.transpose());
    } else if (!be.src_external) {
      add_block(tb, be.src, be.dst, aij);
    } else {
      add_block(tb, be.dst, be.src, aij.transpose());
    }
  }
  const int na = 4 * static_cast<int>(owned_.size());
  const int nb = 4 * static_cast<int>(external_.size());
  q_.resize(na, na);
  q_.setFromTriplets(tq.begin(), tq.end());
  b_.resize(na, nb);
  b_.setFromTriplets(tb.begin(), tb.end());

  Eigen::SparseMatrix<double> reg = q_;
  const double mean_diag = na > 0 ? q_.diagonal().sum() / na : 0.0;
  const double eps = mean_diag > 0.0 ? 1e-6 * mean_diag : 1e-9;
  for (int k = 0; k < na; ++k) reg.coeffRef(k, k) += eps;
  precond_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(reg);
  if (precond_->info() != Eigen::Success) throw RbcdError("BlockProblem: preconditioner factorization failed");
}

Eigen::MatrixXd BlockProblem::pack_owned(const RobotBlock& block) const {
  const int r = block.rank();
  Eigen::MatrixXd x(r, 4 * owned_.size());
  for (std::size_t k = 0; k < owned_.size(); ++k) {
    const LiftedPosed& lp = block.lifted.at(owned_[k].index);
    x.middleCols<3>(4 * k) = lp.y_rot;
    x.col(4 * k + 3) = lp.y_trans;
  }
  return x;
}

Eigen::MatrixXd BlockProblem::pack_external(const std::map<NodeId, LiftedPosed>& neighbors, int rank) const {
  Eigen::MatrixXd x(rank, 4 * external_.size());
  for (std::size_t k = 0; k < external_.size(); ++k) {
    const auto it = neighbors.find(external_[k]);
    if (it == neighbors.end()) throw std::invalid_argument("block update: missing neighbor public pose");
    if (it->second.rank() != rank) throw std::invalid_argument("block update: neighbor rank mismatch");
    x.middleCols<3>(4 * k) = it->second.y_rot;
    x.col(4 * k + 3) = it->second.y_trans;
  }
  return x;
}

void BlockProblem::unpack_owned(const Eigen::MatrixXd& x, RobotBlock& block) const {
  for (std::size_t k = 0; k < owned_.size(); ++k) {
    LiftedPosed& lp = block.lifted.at(owned_[k].index);
    lp.y_rot = x.middleCols<3>(4 * k);
    lp.y_trans = x.col(4 * k + 3);
  }
}

double BlockProblem::cost(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb) const {
  // Per-edge evaluation avoids the cancellation of the quadratic form, so
  // step acceptance compares accurate values.
  const Eigen::Index r = xa.rows();
  double c = 0.0;
  for (const detail::BlockEdge& e : edges_) {
    const Eigen::MatrixXd& xi = e.src_external ? xb : xa;
    const Eigen::MatrixXd& xj = e.dst_external ? xb : xa;
    const auto yi = xi.block(0, 4 * e.src, r, 3);
    const auto yj = xj.block(0, 4 * e.dst, r, 3);
    c += e.kappa * (yj - yi * e.rot).squaredNorm() +
         e.tau * (xj.col(4 * e.dst + 3) - xi.col(4 * e.src + 3) - yi * e.trans).squaredNorm();
  }
  return c;
}

Eigen::MatrixXd BlockProblem::euclidean_gradient(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb) const {
  Eigen::MatrixXd g = 2.0 * (xa * q_);
  if (b_.cols() > 0) g += 2.0 * (xb * Eigen::SparseMatrix<double>(b_.transpose()));
  return g;
}

Eigen::MatrixXd BlockProblem::project_tangent(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v) {
  Eigen::MatrixXd out = v;
  const Eigen::Index r = xa.rows();
  for (Eigen::Index k = 0; 4 * k < xa.cols(); ++k) {
    const auto y = xa.block(0, 4 * k, r, 3);
    const Eigen::MatrixXd vy = v.block(0, 4 * k, r, 3);
    out.block(0, 4 * k, r, 3) = vy - y * sym(y.transpose() * vy);
  }
  return out;
}

Eigen::MatrixXd BlockProblem::riemannian_gradient(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& egrad) const {
  return project_tangent(xa, egrad);
}

Eigen::MatrixXd BlockProblem::hessian_vector(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& egrad,
                                             const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd h = 2.0 * (v * q_);
  const Eigen::Index r = xa.rows();
  for (Eigen::Index k = 0; 4 * k < xa.cols(); ++k) {
    const auto y = xa.block(0, 4 * k, r, 3);
    const auto gy = egrad.block(0, 4 * k, r, 3);
    h.block(0, 4 * k, r, 3) -= v.block(0, 4 * k, r, 3) * sym(y.transpose() * gy);
  }
  return project_tangent(xa, h);
}

Eigen::MatrixXd BlockProblem::precondition(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v) const {
  const Eigen::MatrixXd z = precond_->solve(v.transpose()).transpose();
  return project_tangent(xa, z);
}

Eigen::MatrixXd BlockProblem::retract(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& v) {
  Eigen::MatrixXd out = xa + v;
  const Eigen::Index r = xa.rows();
  for (Eigen::Index k = 0; 4 * k < xa.cols(); ++k) {
    const Eigen::Matrix<double, Eigen::Dynamic, 3> m = out.block(0, 4 * k, r, 3);
    out.block(0, 4 * k, r, 3) = project_to_stiefel<double>(m);
  }
  return out;
}

namespace {

struct TcgResult {
  Eigen::MatrixXd eta;
  Eigen::MatrixXd h_eta;
  bool boundary = false;
};

// Steihaug-Toint truncated CG on the tangent space.
TcgResult truncated_cg(const BlockProblem& p, const Eigen::MatrixXd& xa, const Eigen::MatrixXd& egrad,
                       const Eigen::MatrixXd& grad, double radius, int max_iters) {
  TcgResult out;
  out.eta = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
  out.h_eta = out.eta;
  Eigen::MatrixXd res = grad;
  Eigen::MatrixXd z = p.precondition(xa, res);
  Eigen::MatrixXd d = -z;
  double rz = dot(res, z);
  const double r0 = res.norm();
  for (int j = 0; j < max_iters && rz > 0.0; ++j) {
    const Eigen::MatrixXd hd = p.hessian_vector(xa, egrad, d);
    const double dhd = dot(d, hd);
    const double alpha = rz / dhd;
    const Eigen::MatrixXd trial = out.eta + alpha * d;
    if (!(dhd > 0.0) || trial.norm() >= radius) {
      // step to the boundary along d
      const double ee = out.eta.squaredNorm();
      const double ed = dot(out.eta, d);
      const double dd = d.squaredNorm();
      const double tau = (-ed + std::sqrt(ed * ed + dd * (radius * radius - ee))) / dd;
      out.eta += tau * d;
      out.h_eta += tau * hd;
      out.boundary = true;
      break;
    }
    out.eta = trial;
    out.h_eta += alpha * hd;
    res += alpha * hd;
    const double rn = res.norm();
    if (rn <= r0 * std::min(r0, 0.1)) break;
    z = p.precondition(xa, res);
    const double rz_next = dot(res, z);
    d = -z + (rz_next / rz) * d;
    rz = rz_next;
  }
  return out;
}

}  // namespace

namespace {

struct LocalStep {
  Eigen::MatrixXd x;
  double cost = 0.0;
  double grad_norm = 0.0;
  double radius = 0.0;
  bool moved = false;
};

LocalStep local_step(const BlockProblem& problem, const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb,
                     double f0, double radius, const RbcdConfig& cfg) {
  LocalStep out{xa, f0, 0.0, radius, false};
  const Eigen::MatrixXd egrad = problem.euclidean_gradient(xa, xb);
  const Eigen::MatrixXd grad = problem.riemannian_gradient(xa, egrad);
  out.grad_norm = grad.norm();
  if (out.grad_norm < cfg.grad_tol) return out;

  if (cfg.step == BlockMethod::TrustRegion) {
    for (int attempt = 0; attempt <= cfg.max_rejections; ++attempt) {
      const TcgResult tcg = truncated_cg(problem, xa, egrad, grad, radius, cfg.tcg_max_iters);
      const double model_dec = -(dot(grad, tcg.eta) + 0.5 * dot(tcg.eta, tcg.h_eta));
      const Eigen::MatrixXd cand = BlockProblem::retract(xa, tcg.eta);
      const double f1 = problem.cost(cand, xb);
      const double rho = model_dec > 0.0 ? (f0 - f1) / model_dec : -1.0;
      if (rho < 0.25) {
        radius /= 4.0;
      } else if (rho > 0.75 && tcg.boundary) {
        radius = std::min(2.0 * radius, 1e6);
      }
      if (std::isfinite(f1) && f1 < f0 && rho > 0.0) {
        out.x = cand;
        out.cost = f1;
        out.moved = true;
        break;
      }
    }
    out.radius = radius;
  } else {
    const Eigen::MatrixXd hg = problem.hessian_vector(xa, egrad, grad);
    const double ghg = dot(grad, hg);
    const double gg = out.grad_norm * out.grad_norm;
    double alpha = ghg > 0.0 ? gg / ghg : 1.0;
    for (int h = 0; h <= cfg.armijo_max_halvings; ++h) {
      const Eigen::MatrixXd cand = BlockProblem::retract(xa, -alpha * grad);
      const double f1 = problem.cost(cand, xb);
      if (std::isfinite(f1) && f1 <= f0 - cfg.armijo_c * alpha * gg && f1 < f0) {
        out.x = cand;
        out.cost = f1;
        out.moved = true;
        break;
      }
      alpha *= 0.5;
    }
  }
  return out;
}

}  // namespace

BlockUpdateResult block_update(const BlockProblem& problem, const RobotBlock& block,
                               const std::map<NodeId, LiftedPosed>& neighbor_public, const RbcdConfig& cfg) {
  BlockUpdateResult out;
  out.block = block;
  const Eigen::MatrixXd xb = problem.pack_external(neighbor_public, block.rank());
  Eigen::MatrixXd xa = problem.pack_owned(block);
  double f = problem.cost(xa, xb);
  if (!std::isfinite(f)) throw RbcdError("block update: non-finite cost");
  out.cost_before = f;
  out.cost_after = f;

  double radius = block.trust_radius > 0.0 ? block.trust_radius : cfg.initial_radius;
  for (int it = 0; it < cfg.local_iters; ++it) {
    const LocalStep step = local_step(problem, xa, xb, f, radius, cfg);
    if (it == 0) out.grad_norm = step.grad_norm;
    radius = step.radius;
    if (!step.moved) break;
    xa = step.x;
    f = step.cost;
    out.moved = true;
  }
  if (cfg.step == BlockMethod::TrustRegion) out.block.trust_radius = radius;
  if (out.moved) {
    problem.unpack_owned(xa, out.block);
    out.cost_after = f;
  }
  return out;
}

BlockUpdateResult block_update(const MultiRobotPoseGraph& graph, const RobotBlock& block,
                               const std::map<NodeId, LiftedPosed>& neighbor_public,
                               std::span<const EdgeId> edges, std::span<const double> weights,
                               const RbcdConfig& cfg) {
  const BlockProblem problem(graph, block, edges, weights);
  return block_update(problem, block, neighbor_public, cfg);
}

// ---------------------------------------------------------------------------
// RbcdAgent

RbcdAgent::RbcdAgent(const MultiRobotPoseGraph& graph, RobotBlock block, const RbcdConfig& cfg)
    : graph_(&graph), cfg_(cfg), block_(std::move(block)) {
  cfg_.validate();
  edges_ = local_edges(graph, block_.robot);
  neighbors_ = neighbor_robots(graph, block_.robot);
  std::map<RobotId, std::set<std::uint32_t>> shared;
  for (EdgeId k : edges_) {
    const Edge& e = graph.edges[k];
    weights_[k] = e.kind == EdgeKind::Odometry ? 1.0 : e.gnc_weight;
    if (e.src.robot == e.dst.robot) continue;
    if (e.src.robot == block_.robot) shared[e.dst.robot].insert(e.src.index);
    if (e.dst.robot == block_.robot) shared[e.src.robot].insert(e.dst.index);
  }
  for (auto& [r, s] : shared) shared_with_[r].assign(s.begin(), s.end());
}

void RbcdAgent::set_weight(EdgeId e, double w) {
  auto it = weights_.find(e);
  if (it == weights_.end()) throw std::invalid_argument("set_weight: edge not local to robot");
  if (it->second != w) {
    it->second = w;
    problem_.reset();
  }
}

Message RbcdAgent::public_poses_for(RobotId to) const {
  const auto it = shared_with_.find(to);
  const std::vector<std::uint32_t> none;
  const std::vector<std::uint32_t>& idx = it == shared_with_.end() ? none : it->second;
  if (cfg_.wire_encoding() == PoseEncoding::Pose3) {
    std::vector<PoseEntry> entries;
    for (std::uint32_t i : idx) {
      const LiftedPosed& lp = block_.lifted.at(i);
      entries.push_back({NodeId{block_.robot, i}.key(),
                         Pose3d(project_to_so3<double>(lp.y_rot.topRows<3>()), lp.y_trans.head<3>())});
    }
    return encode_poses(MessageKind::PublicPoses, block_.robot, to, entries);
  }
  std::vector<LiftedEntry> entries;
  for (std::uint32_t i : idx) entries.push_back({NodeId{block_.robot, i}.key(), block_.lifted.at(i)});
  return encode_lifted(MessageKind::PublicPoses, block_.robot, to, cfg_.rank, entries);
}

void RbcdAgent::receive_public_poses(const Message& msg) {
  if (msg.kind != MessageKind::PublicPoses) throw std::invalid_argument("expected PublicPoses");
  if (reserved_field(msg) == 0) {
    for (const PoseEntry& e : decode_poses(msg)) {
      neighbor_poses_[NodeId::from_key(e.id)] = LiftedPosed::lift(e.pose, 3);
    }
  } else {
    for (LiftedEntry& e : decode_lifted(msg)) neighbor_poses_[NodeId::from_key(e.id)] = std::move(e.pose);
  }
}

void RbcdAgent::ensure_problem() const {
  if (problem_) return;
  std::vector<double> w(graph_->edges.size(), 0.0);
  for (const auto& [k, v] : weights_) w[k] = v;
  problem_ = std::make_unique<BlockProblem>(*graph_, block_, edges_, w);
}

BlockUpdateResult RbcdAgent::update() {
  ensure_problem();
  BlockUpdateResult res = block_update(*problem_, block_, neighbor_poses_, cfg_);
  block_ = res.block;
  return res;
}

double RbcdAgent::gradient_norm() const {
  ensure_problem();
  const Eigen::MatrixXd xa = problem_->pack_owned(block_);
  const Eigen::MatrixXd xb = problem_->pack_external(neighbor_poses_, block_.rank());
  return problem_->riemannian_gradient(xa, problem_->euclidean_gradient(xa, xb)).norm();
}

double RbcdAgent::block_cost() const {
  ensure_problem();
  return problem_->cost(problem_->pack_owned(block_), problem_->pack_external(neighbor_poses_, block_.rank()));
}

const LiftedPosed& RbcdAgent::pose(NodeId id) const {
  if (id.robot == block_.robot) return block_.lifted.at(id.index);
  const auto it = neighbor_poses_.find(id);
  if (it == neighbor_poses_.end()) throw std::out_of_range("no cached public pose for neighbor node");
  return it->second;
}

double RbcdAgent::residual_sq(EdgeId e) const {
  const Edge& edge = graph_->edges.at(e);
  return lifted_residual_sq(pose(edge.src), pose(edge.dst), edge.meas, edge.w_rot, edge.w_tr);
}

MessagePredicate public_poses_only(const MultiRobotPoseGraph& graph) {
  std::map<RobotId, std::set<std::uint32_t>> pub;
  for (RobotId r : graph.robots()) pub[r] = public_indices(graph, r);
  return [pub = std::move(pub)](const Message& msg) {
    if (msg.kind != MessageKind::PublicPoses) return true;
    std::vector<std::uint64_t> ids;
    if (reserved_field(msg) == 0) {
      for (const PoseEntry& e : decode_poses(msg)) ids.push_back(e.id);
    } else {
      for (const LiftedEntry& e : decode_lifted(msg)) ids.push_back(e.id);
    }
    const auto it = pub.find(msg.from);
    for (std::uint64_t k : ids) {
      const NodeId id = NodeId::from_key(k);
      if (id.robot != msg.from || it == pub.end() || !it->second.contains(id.index)) return false;
    }
    return true;
  };
}

void rbcd_updates(std::vector<RbcdAgent>& agents, int updates, std::size_t& offset, Network& net,
                  std::size_t& update_counter, const UpdateObserver& observer,
                  const std::function<void()>& before) {
  if (agents.empty()) return;
  std::map<RobotId, RbcdAgent*> by_id;
  for (RbcdAgent& a : agents) by_id[a.id()] = &a;
  std::vector<RbcdAgent*> order;
  for (auto& [id, a] : by_id) order.push_back(a);

  for (int u = 0; u < updates; ++u) {
    RbcdAgent& active = *order[offset % order.size()];
    ++offset;
    for (RobotId nb : active.neighbors()) net.send(by_id.at(nb)->public_poses_for(active.id()));
    net.barrier();
    for (const Message& m : net.take_inbox(active.id())) {
      if (m.kind != MessageKind::PublicPoses) throw std::logic_error("unexpected message during variable update");
      active.receive_public_poses(m);
    }
    if (before) before();
    const BlockUpdateResult res = active.update();
    UpdateEvent ev{update_counter++, active.id(), res.cost_before, res.cost_after, res.grad_norm};
    if (observer) observer(ev);
  }
}

RbcdRoundResult rbcd_round(const BlockMap& blocks, const MultiRobotPoseGraph& graph,
                           std::span<const double> weights, const RbcdConfig& cfg, Network& net) {
  std::vector<RbcdAgent> agents;
  for (const auto& [r, b] : blocks) {
    agents.emplace_back(graph, b, cfg);
    for (EdgeId k : agents.back().edges()) agents.back().set_weight(k, weights[k]);
  }
  RbcdRoundResult out;
  std::size_t offset = 0;
  std::size_t counter = 0;
  rbcd_updates(agents, cfg.iters_per_round, offset, net, counter,
               [&](const UpdateEvent& ev) { out.events.push_back(ev); });
  for (const RbcdAgent& a : agents) out.blocks[a.id()] = a.block();
  return out;
}

}  // namespace dgnc
