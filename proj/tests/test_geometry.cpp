#include "dgnc/geometry.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace dgnc;

TEST_SUITE("geometry") {
  TEST_CASE("compose and inverse") {
    CHECK(test::pose_distance(Pose3d::identity() * Pose3d::identity(), Pose3d::identity()) == 0.0);
    std::mt19937_64 rng(1);
    const Pose3d a = test::random_pose(rng);
    CHECK(test::pose_distance(a * a.inverse(), Pose3d::identity()) < 1e-12);

    // Rz(90°) applied to [1,0,0] gives [0,1,0], plus the translation [1,0,0]
    const Pose3d r(Rot3d::about_z(std::numbers::pi / 2), Vector3d(1, 0, 0));
    const Pose3d c = compose(r, Pose3d(Rot3d::identity(), Vector3d(1, 0, 0)));
    CHECK(test::pose_distance(c, Pose3d(Rot3d::about_z(std::numbers::pi / 2), Vector3d(1, 1, 0))) < 1e-12);
  }

  TEST_CASE("composition is associative") {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 50; ++k) {
      const Pose3d a = test::random_pose(rng, 3.0), b = test::random_pose(rng, 3.0), c = test::random_pose(rng, 3.0);
      const Eigen::Matrix4d lhs = ((a * b) * c).matrix(), rhs = (a * (b * c)).matrix();
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("boxminus examples") {
    std::mt19937_64 rng(3);
    const Pose3d x = test::random_pose(rng);
    CHECK(boxminus(x, x).norm() < 1e-12);

    Vector6d e;
    e << 0, 0, 0, 1, 0, 0;
    CHECK((boxminus(Pose3d(Rot3d::identity(), Vector3d(1, 0, 0)), Pose3d::identity()) - e).norm() == 0.0);

    e << 0, 0, 0.3, 0, 0, 0;
    CHECK((boxminus(Pose3d(Rot3d::about_z(0.3), Vector3d::Zero()), Pose3d::identity()) - e).norm() < 1e-12);
  }

  TEST_CASE("boxplus inverts boxminus") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 200; ++k) {
      const Pose3d a = test::random_pose(rng, std::numbers::pi - 0.1);
      const Pose3d b = test::random_pose(rng, std::numbers::pi - 0.1);
      // relative angle must stay below π − 0.1 as well
      if (boxminus(a, b).head<3>().norm() > std::numbers::pi - 0.1) continue;
      CHECK(test::pose_distance(boxplus(b, boxminus(a, b)), a) < 1e-9);
    }
  }

  TEST_CASE("log near pi") {
    const Vector3d axis = Vector3d(1, 2, -1).normalized();
    for (double theta : {std::numbers::pi - 1e-3, std::numbers::pi - 1e-7, std::numbers::pi}) {
      const Rot3d r = Rot3d::exp(axis * theta);
      CHECK((Rot3d::exp(r.log()).matrix() - r.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("chordal residual") {
    const Pose3d i = Pose3d::identity();
    CHECK(chordal_residual(i, i, i, 1.0, 1.0) == 0.0);
    std::mt19937_64 rng(5);
    const Pose3d xi = test::random_pose(rng), meas = test::random_pose(rng);
    CHECK(chordal_residual(xi, Pose3d(xi * meas), meas, 3.0, 7.0) < 1e-6);
    CHECK(chordal_residual(i, Pose3d(Rot3d::identity(), Vector3d(1, 0, 0)), i, 1.0, 1.0) ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS((void)chordal_residual(i, i, i, 0.0, 1.0), GeometryError);
  }

  TEST_CASE("chordal residual is gauge invariant") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 50; ++k) {
      const Pose3d xi = test::random_pose(rng, 3.0), xj = test::random_pose(rng, 3.0);
      const Pose3d meas = test::random_pose(rng, 3.0), g = test::random_pose(rng, 3.0, 50.0);
      CHECK(std::abs(chordal_residual(xi, xj, meas, 50.0, 100.0) - chordal_residual(g * xi, g * xj, meas, 50.0, 100.0)) <
            1e-9);
    }
  }

  TEST_CASE("geodesic residual") {
    const Matrix6d cov = diagonal_covariance(0.1, 0.5);
    std::mt19937_64 rng(7);
    const Pose3d x = test::random_pose(rng);
    CHECK(geodesic_residual(x, x, cov) < 1e-12);
    CHECK(geodesic_residual(Pose3d(Rot3d::identity(), Vector3d(1, 0, 0)), Pose3d::identity(), cov) ==
          doctest::Approx(2.0));
    CHECK(geodesic_residual(Pose3d(Rot3d::exp(Vector3d(0, 0.1, 0)), Vector3d::Zero()), Pose3d::identity(), cov) ==
          doctest::Approx(1.0));
    Matrix6d bad = cov;
    bad(0, 0) = -1.0;
    CHECK_THROWS_AS((void)geodesic_residual(x, x, bad), GeometryError);
  }

  TEST_CASE("project to SO(3)") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    const Rot3d r = test::random_pose(rng, 3.0).rot();
    CHECK((project_to_so3<double>(r.matrix()).matrix() - r.matrix()).norm() < 1e-12);
    CHECK((project_to_so3<double>(1.7 * r.matrix()).matrix() - r.matrix()).norm() < 1e-12);
    Matrix3d n;
    for (int i = 0; i < 9; ++i) n(i / 3, i % 3) = g(rng);
    n /= n.norm();
    const Rot3d p = project_to_so3<double>(r.matrix() + 1e-3 * n);
    CHECK((p.matrix() - r.matrix()).norm() < 2e-3);
    CHECK(p.is_valid());
    CHECK_THROWS_AS((void)project_to_so3<double>(Matrix3d::Zero()), GeometryError);

    // reflections come back as proper rotations
    Matrix3d refl = Matrix3d::Identity();
    refl(2, 2) = -1;
    CHECK(project_to_so3<double>(refl).is_valid());
    for (int k = 0; k < 20; ++k) {
      Matrix3d m;
      for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = g(rng);
      CHECK(project_to_so3<double>(m).is_valid());
    }
  }

  TEST_CASE("right Jacobian inverse matches finite differences of log") {
    // d/dε Log(Exp(w) Exp(ε)) at ε = 0 is J_r⁻¹(w)
    for (const Vector3d& w : {Vector3d(0.3, -0.2, 0.5), Vector3d(1e-8, 0, 0), Vector3d(2.0, 1.0, -0.5)}) {
      Matrix3d num;
      const double h = 1e-6;
      for (int j = 0; j < 3; ++j) {
        Vector3d e = Vector3d::Zero();
        e(j) = h;
        num.col(j) = ((Rot3d::exp(w) * Rot3d::exp(e)).log() - (Rot3d::exp(w) * Rot3d::exp(-e)).log()) / (2 * h);
      }
      CHECK((num - so3_right_jacobian_inverse(w)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("lifted residual equals chordal residual at a lift point") {
    std::mt19937_64 rng(9);
    const Pose3d xi = test::random_pose(rng), xj = test::random_pose(rng), meas = test::random_pose(rng);
    for (int r : {3, 5, 7}) {
      const LiftedPosed li = LiftedPosed::lift(xi, r), lj = LiftedPosed::lift(xj, r);
      CHECK(li.is_valid());
      CHECK(lifted_residual_sq(li, lj, meas, 2.0, 3.0) ==
            doctest::Approx(chordal_residual_sq(xi, xj, meas, 2.0, 3.0)).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)LiftedPosed::lift(xi, 2), GeometryError);
  }

  TEST_CASE("templated on scalar") {
    const Pose3<float> a(Rot3<float>::about_z(0.5f), Vector3<float>(1, 2, 3));
    CHECK(boxminus(a, a).norm() == 0.0f);
  }
}
