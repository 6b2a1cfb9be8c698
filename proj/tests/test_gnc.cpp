#include "dgnc/eval.hpp"
#include "dgnc/gnc.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace dgnc;

namespace {

// CDF of χ²(k) by Simpson's rule after t = u², which removes the k = 1 singularity.
double chi2_cdf_oracle(double x, int k) {
  if (x <= 0.0) return 0.0;
  const double norm = std::pow(2.0, k / 2.0) * std::tgamma(k / 2.0);
  auto f = [&](double u) { return 2.0 * std::pow(u, k - 1) * std::exp(-u * u / 2.0) / norm; };
  const int n = 20000;
  const double b = std::sqrt(x), h = b / n;
  double s = f(0.0) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return s * h / 3.0;
}

double chi2_quantile_oracle(double p, int k) {
  double lo = 0.0, hi = 200.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (chi2_cdf_oracle(mid, k) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

MultiRobotPoseGraph noisy_chain(std::size_t n, std::uint64_t seed, double noise_tr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MultiRobotPoseGraph graph;
  std::vector<Pose3d> truth;
  for (std::uint32_t i = 0; i < n; ++i) {
    truth.emplace_back(Rot3d::about_z(0.3 * i), Vector3d(std::cos(0.3 * i), std::sin(0.3 * i), 0.0) * 3.0);
    graph.node({0, i}).ground_truth = truth.back();
  }
  auto add = [&](std::uint32_t a, std::uint32_t b, EdgeKind kind) {
    Edge e;
    e.src = {0, a};
    e.dst = {0, b};
    Vector6d d = Vector6d::Zero();
    d(2) = 0.1 * noise_tr * g(rng);
    d(3) = noise_tr * g(rng);
    d(4) = noise_tr * g(rng);
    e.meas = boxplus(Pose3d(truth[a].inverse() * truth[b]), d);
    e.w_rot = rot_precision(0.01);
    e.w_tr = tr_precision(0.1);
    e.kind = kind;
    if (kind != EdgeKind::Odometry) e.truth = Truth::Inlier;
    graph.edges.push_back(e);
  };
  for (std::uint32_t i = 0; i + 1 < n; ++i) add(i, i + 1, EdgeKind::Odometry);
  for (std::uint32_t i = 0; i + 4 < n; i += 2) add(i, i + 4, EdgeKind::IntraLoop);
  for (const auto& [id, pose] : graph.odometry_chain(0)) graph.node(id).initial = pose;
  return graph;
}

PoseMap initial_of(const MultiRobotPoseGraph& g) {
  PoseMap out;
  for (const auto& [id, node] : g.nodes) out.emplace(id, *node.initial);
  return out;
}

}  // namespace

TEST_SUITE("gnc") {
  TEST_CASE("chi-square threshold against an independent oracle") {
    CHECK(threshold_from_probability(0.5, 1) == doctest::Approx(0.4549).epsilon(1e-4));
    CHECK(threshold_from_probability(0.99, 3) == doctest::Approx(11.345).epsilon(1e-4));
    CHECK(threshold_from_probability(1e-12, 3) < 1e-6);
    for (int dof : {1, 3, 6}) {
      for (double p : {0.1, 0.5, 0.9, 0.99}) {
        CHECK(threshold_from_probability(p, dof) == doctest::Approx(chi2_quantile_oracle(p, dof)).epsilon(1e-7));
      }
    }
    CHECK_THROWS((void)threshold_from_probability(1.0, 3));
    CHECK_THROWS((void)threshold_from_probability(0.0, 3));
  }

  TEST_CASE("tls weight branch boundaries") {
    CHECK(tls_weight(0.0, 0.7, 2.0) == 1.0);
    for (double mu : {1e-3, 0.3, 1.0, 4.0, 1e3}) {
      for (double c2 : {0.5, 2.0, 11.345}) {
        const double upper = (mu + 1.0) / mu * c2, lower = mu / (mu + 1.0) * c2;
        CHECK(tls_weight(upper, mu, c2) == 0.0);
        CHECK(tls_weight(lower, mu, c2) == 1.0);
        // the middle branch reaches the same values at the boundaries
        CHECK(std::sqrt(c2 / upper) * std::sqrt(mu * (mu + 1.0)) - mu == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(std::sqrt(c2 / lower) * std::sqrt(mu * (mu + 1.0)) - mu == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("tls weight is continuous and non-increasing") {
    for (double mu : {0.05, 1.0, 20.0}) {
      const double c2 = 3.0;
      const double upper = (mu + 1.0) / mu * c2, lower = mu / (mu + 1.0) * c2;
      for (double b : {lower, upper}) {
        double prev = tls_weight(b - 1e-3, mu, c2);
        for (double r2 = b - 1e-3; r2 <= b + 1e-3; r2 += 1e-6) {
          const double w = tls_weight(r2, mu, c2);
          CHECK(std::abs(w - prev) < 1e-4);
          CHECK(w <= prev + 1e-15);
          CHECK(w >= 0.0);
          CHECK(w <= 1.0);
          prev = w;
        }
      }
    }
  }

  TEST_CASE("tls weight tends to the hard indicator") {
    const double c2 = 2.0;
    for (double r2 : {0.5, 1.9, 2.1, 4.0}) {
      const double hard = r2 < c2 ? 1.0 : 0.0;
      CHECK(std::abs(tls_weight(r2, 1e8, c2) - hard) < 1e-6);
      CHECK(tls_weight(r2, std::numeric_limits<double>::infinity(), c2) == hard);
    }
  }

  TEST_CASE("initial mu") {
    CHECK(init_mu(2.0, 2.0) == doctest::Approx(1.0));
    CHECK(init_mu(3.0, 2.0) == doctest::Approx(0.5));
    CHECK(init_mu(1e12, 2.0) == 1e-6);
    CHECK(std::isinf(init_mu(0.9, 2.0)));
  }

  TEST_CASE("convergence test") {
    TlsConfig tls;
    GncState s;
    s.weights = {0.0, 1.0, 1.0};
    const std::vector<double> same = s.weights;
    CHECK(gnc_converged(s, same, tls));
    const std::vector<double> moved{0.5, 1.0, 1.0};
    CHECK_FALSE(gnc_converged(s, moved, tls));
    s.weights = {0.5, 1.0, 1.0};
    CHECK_FALSE(gnc_converged(s, moved, tls));
    s.outer_iter = tls.max_outer_iters;
    CHECK(gnc_converged(s, same, tls));
  }

  TEST_CASE("config validation") {
    TlsConfig bad;
    bad.mu_update_factor = 1.0;
    CHECK_THROWS(bad.validate());
    bad = TlsConfig{};
    bad.c_bar_sq = 0.0;
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("outlier-free graph gives the least-squares solution") {
    const MultiRobotPoseGraph g = noisy_chain(20, 1, 0.02);
    const TlsConfig tls = TlsConfig::from_probability(0.99, 3);
    const GncResult r = centralized_gnc_pgo(g, tls, initial_of(g), make_lm_inner_solver());
    for (double w : r.weights) CHECK(w == 1.0);
    const std::vector<double> ones(g.edges.size(), 1.0);
    const PoseMap ls = solve_weighted_pgo(g, ones, initial_of(g)).poses;
    CHECK(ate(r.poses, ls).rmse < 1e-6);
  }

  TEST_CASE("noise-free graph stops after one plain solve") {
    const MultiRobotPoseGraph g = noisy_chain(12, 2, 0.0);
    const GncResult r = centralized_gnc_pgo(g, TlsConfig{}, initial_of(g), make_lm_inner_solver());
    const std::vector<double> ones(g.edges.size(), 1.0);
    const PoseMap ls = solve_weighted_pgo(g, ones, initial_of(g)).poses;
    for (const auto& [id, p] : ls) CHECK(test::pose_distance(p, r.poses.at(id)) == 0.0);
  }

  TEST_CASE("a gross outlier gets weight zero") {
    MultiRobotPoseGraph g = noisy_chain(20, 3, 0.02);
    Edge bad = g.edges.back();
    bad.src = {0, 1};
    bad.dst = {0, 15};
    bad.meas = Pose3d(Rot3d::exp(Vector3d(0.5, -1.0, 2.0)), Vector3d(8, -6, 4));
    bad.truth = Truth::Outlier;
    g.edges.push_back(bad);
    const GncResult r = centralized_gnc_pgo(g, TlsConfig::from_probability(0.99, 3), g.ground_truth(),
                                            make_lm_inner_solver());
    CHECK(r.weights.back() == 0.0);
    for (std::size_t k = 0; k + 1 < g.edges.size(); ++k) CHECK(r.weights[k] == doctest::Approx(1.0));
  }

  TEST_CASE("half outliers from odometry initialization") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const MultiRobotPoseGraph clean = noisy_chain(10, 10 + seed, 0.02);
      const MultiRobotPoseGraph g = inject_outliers(clean, {0.5, seed});
      const PoseMap oracle = solve_weighted_pgo(clean, std::vector<double>(clean.edges.size(), 1.0),
                                                initial_of(clean)).poses;
      const GncResult r =
          centralized_gnc_pgo(g, TlsConfig::from_probability(0.99, 3), initial_of(g), make_lm_inner_solver());
      const ClassificationReport c = classification_report(g, r.weights);
      CHECK(c.precision == 1.0);
      CHECK(c.recall == 1.0);
      // with every outlier rejected the estimate is the oracle's
      CHECK(ate(r.poses, g.ground_truth()).rmse < ate(oracle, g.ground_truth()).rmse + 1e-6);
      for (std::size_t k = 0; k < g.edges.size(); ++k) {
        if (!g.edges[k].is_loop()) CHECK(r.weights[k] == 1.0);
      }
    }
  }
}
