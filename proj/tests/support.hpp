// Shared fixtures for the unit tests.

#ifndef DGNC_TESTS_SUPPORT_HPP
#define DGNC_TESTS_SUPPORT_HPP

#include "dgnc/geometry.hpp"

#include <random>

namespace dgnc::test {

inline Pose3d random_pose(std::mt19937_64& rng, double angle = 1.0, double dist = 5.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector3d axis(g(rng), g(rng), g(rng));
  axis.normalize();
  return Pose3d(Rot3d::exp(axis * angle * u(rng)), Vector3d(dist * u(rng), dist * u(rng), dist * u(rng)));
}

inline double pose_distance(const Pose3d& a, const Pose3d& b) {
  return (a.rot().matrix() - b.rot().matrix()).cwiseAbs().maxCoeff() +
         (a.trans() - b.trans()).cwiseAbs().maxCoeff();
}

}  // namespace dgnc::test

#endif  // DGNC_TESTS_SUPPORT_HPP
