#include "dgnc/gnc.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dgnc {

double threshold_from_probability(double p, int dof) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("probability must be in (0,1)");
  if (dof <= 0) throw std::invalid_argument("dof must be positive");
  const boost::math::chi_squared_distribution<double> chi2(dof);
  return boost::math::quantile(chi2, p);
}

TlsConfig TlsConfig::from_probability(double p, int dof) {
  TlsConfig cfg;
  cfg.c_bar_sq = threshold_from_probability(p, dof);
  return cfg;
}

void TlsConfig::validate() const {
  if (!(c_bar_sq > 0.0)) throw std::invalid_argument("c_bar_sq must be positive");
  if (!(mu_update_factor > 1.0)) throw std::invalid_argument("mu_update_factor must exceed 1");
  if (max_outer_iters <= 0) throw std::invalid_argument("max_outer_iters must be positive");
}

double tls_weight(double residual_sq, double mu, double c_bar_sq) {
  if (std::isinf(mu)) return residual_sq <= c_bar_sq ? 1.0 : 0.0;
  const double upper = (mu + 1.0) / mu * c_bar_sq;
  const double lower = mu / (mu + 1.0) * c_bar_sq;
  if (residual_sq >= upper) return 0.0;
  if (residual_sq <= lower) return 1.0;
  const double w = std::sqrt(c_bar_sq / residual_sq) * std::sqrt(mu * (mu + 1.0)) - mu;
  return std::clamp(w, 0.0, 1.0);
}

double init_mu(double max_residual_sq, double c_bar_sq) {
  const double denom = 2.0 * max_residual_sq - c_bar_sq;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return std::max(c_bar_sq / denom, 1e-6);
}

bool gnc_converged(const GncState& state, std::span<const double> prev_weights, const TlsConfig& tls) {
  if (state.outer_iter >= tls.max_outer_iters) return true;
  if (prev_weights.size() != state.weights.size()) throw std::invalid_argument("weight maps differ");
  const double tol = tls.weight_convergence_tol;
  for (std::size_t k = 0; k < state.weights.size(); ++k) {
    const double w = state.weights[k];
    if (std::abs(w - prev_weights[k]) >= tol) return false;
    if (std::min(w, 1.0 - w) >= tol) return false;
  }
  return true;
}

std::vector<double> edge_residuals_sq(const MultiRobotPoseGraph& graph, const PoseMap& poses) {
  std::vector<double> r2;
  r2.reserve(graph.edges.size());
  for (const Edge& e : graph.edges) {
    r2.push_back(chordal_residual_sq(poses.at(e.src), poses.at(e.dst), e.meas, e.w_rot, e.w_tr));
  }
  return r2;
}

InnerSolver make_lm_inner_solver(LmOptions opts) {
  return [opts](const MultiRobotPoseGraph& g, std::span<const double> w, const PoseMap& init) {
    return solve_weighted_pgo(g, w, init, opts).poses;
  };
}

namespace {

void update_loop_weights(const MultiRobotPoseGraph& graph, const std::vector<double>& r2, double mu,
                         double c_bar_sq, std::vector<double>& weights) {
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (graph.edges[k].is_loop()) weights[k] = tls_weight(r2[k], mu, c_bar_sq);
  }
}

}  // namespace

GncResult centralized_gnc_pgo(const MultiRobotPoseGraph& graph, const TlsConfig& tls,
                              const PoseMap& init, const InnerSolver& inner) {
  tls.validate();
  GncResult res;
  GncState state;
  state.weights.assign(graph.edges.size(), 1.0);
  res.poses = inner(graph, state.weights, init);

  double max_r2 = 0.0;
  std::vector<double> r2 = edge_residuals_sq(graph, res.poses);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (graph.edges[k].is_loop()) max_r2 = std::max(max_r2, r2[k]);
  }
  if (graph.num_loops() == 0 || max_r2 == 0.0) {
    res.weights = state.weights;
    res.converged = true;
    return res;
  }
  state.mu = init_mu(max_r2, tls.c_bar_sq);
  if (std::isinf(state.mu)) {
    update_loop_weights(graph, r2, state.mu, tls.c_bar_sq, state.weights);
    if (std::any_of(state.weights.begin(), state.weights.end(), [](double w) { return w != 1.0; })) {
      res.poses = inner(graph, state.weights, res.poses);
    }
    res.weights = state.weights;
    res.mu = state.mu;
    res.outer_iters = 1;
    res.converged = true;
    return res;
  }

  while (true) {
    const std::vector<double> prev = state.weights;
    update_loop_weights(graph, r2, state.mu, tls.c_bar_sq, state.weights);
    res.poses = inner(graph, state.weights, res.poses);
    ++state.outer_iter;
    if (gnc_converged(state, prev, tls)) {
      res.converged = state.outer_iter < tls.max_outer_iters;
      break;
    }
    state.mu *= tls.mu_update_factor;
    r2 = edge_residuals_sq(graph, res.poses);
  }
  res.weights = state.weights;
  res.mu = state.mu;
  res.outer_iters = state.outer_iter;
  return res;
}

}  // namespace dgnc
