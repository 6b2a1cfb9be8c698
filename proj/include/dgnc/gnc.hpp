// Truncated-least-squares graduated non-convexity: threshold, µ schedule,
// closed-form weight update, convergence test and the centralized GNC-PGO
// baseline.

#ifndef DGNC_GNC_HPP
#define DGNC_GNC_HPP

#include "dgnc/pgo_solver.hpp"
#include "dgnc/pose_graph.hpp"

#include <functional>
#include <span>
#include <vector>

namespace dgnc {

struct TlsConfig {
  /// Squared TLS threshold c̄² on the precision-weighted squared residual.
  double c_bar_sq = 1.0;
  double mu_update_factor = 1.4;
  int max_outer_iters = 100;
  double weight_convergence_tol = 1e-4;

  static TlsConfig from_probability(double p, int dof);
  void validate() const;
};

struct GncState {
  double mu = 0.0;
  std::vector<double> weights;  // indexed by EdgeId
  int outer_iter = 0;
};

/// Chi-square quantile: c̄² with P(χ²_dof ≤ c̄²) = p.
[[nodiscard]] double threshold_from_probability(double p, int dof);

/// Closed-form TLS weight for squared residual r² at control parameter µ.
/// µ = +inf gives the hard 0/1 indicator.
[[nodiscard]] double tls_weight(double residual_sq, double mu, double c_bar_sq);

/// µ₀ = c̄² / (2 r²_max − c̄²), clamped to ≥ 1e-6. Returns +inf when every
/// residual already lies inside the quadratic region (denominator ≤ 0).
[[nodiscard]] double init_mu(double max_residual_sq, double c_bar_sq);

[[nodiscard]] bool gnc_converged(const GncState& state, std::span<const double> prev_weights,
                                 const TlsConfig& tls);

/// Squared chordal residual of every edge at `poses`.
[[nodiscard]] std::vector<double> edge_residuals_sq(const MultiRobotPoseGraph& graph,
                                                    const PoseMap& poses);

using InnerSolver =
    std::function<PoseMap(const MultiRobotPoseGraph&, std::span<const double>, const PoseMap&)>;

/// Levenberg-Marquardt inner solver; throws SolverError on divergence.
[[nodiscard]] InnerSolver make_lm_inner_solver(LmOptions opts = {});

struct GncResult {
  PoseMap poses;
  std::vector<double> weights;
  double mu = 0.0;
  int outer_iters = 0;
  bool converged = false;
};

/// Alternates full weighted least-squares solves with TLS weight updates and
/// µ ← µ·factor. Odometry edges keep weight one.
GncResult centralized_gnc_pgo(const MultiRobotPoseGraph& graph, const TlsConfig& tls,
                              const PoseMap& init, const InnerSolver& inner);

}  // namespace dgnc

#endif  // DGNC_GNC_HPP
