#include "dgnc/eval.hpp"
#include "dgnc/pgo_solver.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

using namespace dgnc;

namespace {

// Horn's closed-form quaternion solution, independent of the SVD route.
Pose3d horn_alignment(const std::vector<Vector3d>& src, const std::vector<Vector3d>& dst) {
  Vector3d cs = Vector3d::Zero(), cd = Vector3d::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    cs += src[k];
    cd += dst[k];
  }
  cs /= double(src.size());
  cd /= double(src.size());
  Matrix3d s = Matrix3d::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) s += (src[k] - cs) * (dst[k] - cd).transpose();
  Eigen::Matrix4d n;
  n << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
      s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
      s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
      s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  const Matrix3d r = Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
  return Pose3d(project_to_so3<double>(r), cd - r * cs);
}

double ate_oracle(const PoseMap& est, const PoseMap& ref) {
  std::vector<Vector3d> a, b;
  for (const auto& [id, p] : ref) {
    a.push_back(est.at(id).trans());
    b.push_back(p.trans());
  }
  const Pose3d t = horn_alignment(a, b);
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (t * a[k] - b[k]).squaredNorm();
  return std::sqrt(s / double(a.size()));
}

PoseMap wavy(std::size_t n, RobotId robot = 0) {
  PoseMap out;
  for (std::uint32_t i = 0; i < n; ++i) {
    out.emplace(NodeId{robot, i}, Pose3d(Rot3d::about_z(0.2 * i),
                                         Vector3d(std::cos(0.5 * i) * i, std::sin(0.3 * i) * 2.0, 0.1 * i)));
  }
  return out;
}

MultiRobotPoseGraph grid(std::uint64_t seed, double noise_tr) {
  GridOptions o;
  o.rows = 5;
  o.cols = 6;
  o.robots = 2;
  o.noise_rot = noise_tr / 10.0;
  o.noise_tr = noise_tr;
  o.seed = seed;
  return synth_grid(o);
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("ATE examples") {
    const PoseMap ref = wavy(12);
    CHECK(ate(ref, ref).rmse < 1e-12);

    std::mt19937_64 rng(1);
    const Pose3d t = test::random_pose(rng, 3.0, 20.0);
    CHECK(ate(transform_poses(t, ref), ref).rmse < 1e-9);

    // half the poses one metre up: shifting by 0.5 is optimal for points that
    // all lie on a vertical line
    PoseMap line, raised;
    for (std::uint32_t i = 0; i < 10; ++i) {
      line.emplace(NodeId{0, i}, Pose3d(Rot3d::identity(), Vector3d(0, 0, i)));
      raised.emplace(NodeId{0, i}, Pose3d(Rot3d::identity(), Vector3d(0.0, 0.0, i + (i % 2 ? 1.0 : 0.0))));
    }
    CHECK(ate(raised, line).rmse == doctest::Approx(ate_oracle(raised, line)).epsilon(1e-9));
    CHECK(ate(raised, line).rmse <= 0.5 + 1e-12);

    std::normal_distribution<double> g(0.0, 0.3);
    PoseMap noisy;
    for (const auto& [id, p] : ref) noisy.emplace(id, Pose3d(p.rot(), p.trans() + Vector3d(g(rng), g(rng), g(rng))));
    CHECK(ate(noisy, ref).rmse == doctest::Approx(ate_oracle(noisy, ref)).epsilon(1e-9));
    CHECK(ate(noisy, ref).rmse == doctest::Approx(ate(ref, noisy).rmse).epsilon(1e-9));

    PoseMap two;
    two.emplace(NodeId{0, 0}, Pose3d::identity());
    two.emplace(NodeId{0, 1}, Pose3d::identity());
    CHECK_THROWS_AS((void)ate(two, two), EvalError);
    PoseMap missing = ref;
    missing.erase(missing.begin());
    CHECK_THROWS_AS((void)ate(missing, ref), EvalError);
  }

  TEST_CASE("rigid alignment against Horn") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Vector3d> src, dst;
      const Pose3d t = test::random_pose(rng, 3.0, 10.0);
      for (int k = 0; k < 15; ++k) {
        src.emplace_back(5 * g(rng), 5 * g(rng), 5 * g(rng));
        dst.push_back(t * src.back() + 0.1 * Vector3d(g(rng), g(rng), g(rng)));
      }
      CHECK(test::pose_distance(rigid_alignment(src, dst), horn_alignment(src, dst)) < 1e-9);
    }
  }

  TEST_CASE("per-robot ATE") {
    PoseMap ref = wavy(8, 0);
    for (const auto& [id, p] : wavy(8, 1)) ref.emplace(id, p);
    std::mt19937_64 rng(3);
    const Pose3d t = test::random_pose(rng, 2.0, 10.0);
    PoseMap est;
    for (const auto& [id, p] : ref) est.emplace(id, id.robot == 1 ? Pose3d(t * p) : p);
    const AteReport r = ate(est, ref, AteAlignment::PerRobot);
    CHECK(r.rmse < 1e-9);
    CHECK(r.per_robot.size() == 2);
    CHECK(ate(est, ref, AteAlignment::Joint).rmse > 0.1);
  }

  TEST_CASE("ML reference") {
    const MultiRobotPoseGraph clean = grid(1, 0.0);
    const PoseMap gt = clean.ground_truth();
    CHECK(ate(ml_reference(clean), gt).rmse < 1e-9);

    const MultiRobotPoseGraph noisy = grid(2, 0.05);
    const PoseMap ref = ml_reference(noisy);
    const MultiRobotPoseGraph dirty = inject_outliers(noisy, {0.5, 2});
    CHECK(ate(ml_reference(dirty), ref).rmse < 1e-9);
    const PoseMap again = ml_reference(noisy);
    for (const auto& [id, p] : ref) CHECK(test::pose_distance(p, again.at(id)) == 0.0);

    const MultiRobotPoseGraph inl = noisy.inlier_subgraph();
    CHECK(pgo_cost(inl, ref) <= pgo_cost(inl, noisy.ground_truth()));
  }

  TEST_CASE("end-to-end error") {
    PoseMap p;
    p.emplace(NodeId{0, 0}, Pose3d(Rot3d::identity(), Vector3d(1, 2, 3)));
    p.emplace(NodeId{0, 1}, Pose3d(Rot3d::identity(), Vector3d(5, 5, 5)));
    p.emplace(NodeId{0, 2}, Pose3d(Rot3d::identity(), Vector3d(1, 2, 12)));
    p.emplace(NodeId{1, 0}, Pose3d(Rot3d::identity(), Vector3d(7, 7, 7)));
    p.emplace(NodeId{1, 1}, Pose3d(Rot3d::identity(), Vector3d(7, 7, 7)));
    const auto e = end_to_end_error(p);
    CHECK(e.at(0) == doctest::Approx(9.0));
    CHECK(e.at(1) == 0.0);
  }

  TEST_CASE("classification conventions") {
    MultiRobotPoseGraph g = inject_outliers(grid(3, 0.01), {0.5, 3});
    std::vector<double> w(g.edges.size(), 1.0);
    std::size_t inliers = 0, outliers = 0;
    for (const Edge& e : g.edges) {
      if (!e.is_loop()) continue;
      (*e.truth == Truth::Inlier ? inliers : outliers)++;
    }
    ClassificationReport r = classification_report(g, w);
    CHECK(r.recall == 1.0);
    CHECK(r.precision == doctest::Approx(double(inliers) / double(inliers + outliers)));
    CHECK(r.false_positive == outliers);

    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      if (g.edges[k].is_loop()) w[k] = 0.0;
    }
    r = classification_report(g, w);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 0.0);
    CHECK(r.true_negative == outliers);

    for (std::size_t k = 0; k < g.edges.size(); ++k) {
      if (g.edges[k].is_loop()) w[k] = *g.edges[k].truth == Truth::Inlier ? 0.9 : 0.1;
    }
    r = classification_report(g, w);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK_THROWS_AS((void)classification_report(g, std::vector<double>(3, 1.0)), EvalError);
  }

  TEST_CASE("trajectory diameter") {
    PoseMap p;
    p.emplace(NodeId{0, 0}, Pose3d(Rot3d::identity(), Vector3d(0, 0, 0)));
    p.emplace(NodeId{0, 1}, Pose3d(Rot3d::identity(), Vector3d(3, 4, 0)));
    p.emplace(NodeId{0, 2}, Pose3d(Rot3d::identity(), Vector3d(1, 1, 0)));
    CHECK(trajectory_diameter(p) == doctest::Approx(5.0));
  }
}
