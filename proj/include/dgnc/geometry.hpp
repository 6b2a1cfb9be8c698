// Manifold types used throughout the solver: SO(3), SE(3), and rank-lifted
// (Stiefel) poses, plus the residual functions defined on them.
//
// Tangent convention: right perturbation with rotation-vector coordinates.
// A pose increment d = (w, v) acts as  x ⊞ d = x · (Exp(w), v)  and
// a ⊟ b = (Log(Rbᵀ Ra), Rbᵀ (ta − tb)), so boxplus(b, boxminus(a, b)) == a.

#ifndef DGNC_GEOMETRY_HPP
#define DGNC_GEOMETRY_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dgnc {

template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector6 = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Matrix6 = Eigen::Matrix<Scalar, 6, 6>;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
[[nodiscard]] Matrix3<Scalar> skew(const Vector3<Scalar>& v) {
  Matrix3<Scalar> s;
  // clang-format off
  s << Scalar(0), -v.z(),     v.y(),
       v.z(),     Scalar(0), -v.x(),
      -v.y(),     v.x(),      Scalar(0);
  // clang-format on
  return s;
}

/// Rotation matrix with det = +1.
template <typename Scalar>
class Rot3 {
 public:
  Rot3() : m_(Matrix3<Scalar>::Identity()) {}
  // Unchecked; use project_to_so3 for arbitrary matrices.
  explicit Rot3(const Matrix3<Scalar>& m) : m_(m) {}

  static Rot3 identity() { return Rot3(); }

  static Rot3 exp(const Vector3<Scalar>& w) {
    const Scalar theta = w.norm();
    if (theta < Scalar(1e-12)) {
      // second order is exact to machine precision here
      const Matrix3<Scalar> W = skew(w);
      return Rot3(Matrix3<Scalar>::Identity() + W + Scalar(0.5) * W * W);
    }
    return Rot3(Eigen::AngleAxis<Scalar>(theta, w / theta).toRotationMatrix());
  }

  static Rot3 about_z(Scalar angle) { return exp(Vector3<Scalar>(0, 0, angle)); }

  /// Rotation vector in [0, π].
  [[nodiscard]] Vector3<Scalar> log() const {
    const Scalar tr = m_.trace();
    const Scalar cos_theta = std::clamp((tr - Scalar(1)) / Scalar(2), Scalar(-1), Scalar(1));
    const Vector3<Scalar> vee(m_(2, 1) - m_(1, 2), m_(0, 2) - m_(2, 0), m_(1, 0) - m_(0, 1));
    const Scalar small = std::max(Scalar(1e-10), Scalar(100) * std::numeric_limits<Scalar>::epsilon());
    if (cos_theta >= Scalar(1) - small) {
      // theta ~ 0: sin(theta)/theta ~ 1
      return Scalar(0.5) * vee;
    }
    const Scalar theta = std::acos(cos_theta);
    if (cos_theta > Scalar(-0.99)) {
      return theta / (Scalar(2) * std::sin(theta)) * vee;
    }
    // Near π the antisymmetric part vanishes; AngleAxis extracts the axis from
    // the symmetric part.
    Eigen::AngleAxis<Scalar> aa(m_);
    return aa.angle() * aa.axis();
  }

  [[nodiscard]] const Matrix3<Scalar>& matrix() const { return m_; }
  [[nodiscard]] Rot3 inverse() const { return Rot3(m_.transpose()); }
  [[nodiscard]] Rot3 operator*(const Rot3& o) const { return Rot3(m_ * o.m_); }
  [[nodiscard]] Vector3<Scalar> operator*(const Vector3<Scalar>& v) const { return m_ * v; }

  [[nodiscard]] Eigen::Quaternion<Scalar> quaternion() const {
    return Eigen::Quaternion<Scalar>(m_).normalized();
  }
  static Rot3 from_quaternion(const Eigen::Quaternion<Scalar>& q) {
    return Rot3(q.normalized().toRotationMatrix());
  }

  [[nodiscard]] bool is_valid(Scalar tol = Scalar(1e-9)) const {
    return (m_.transpose() * m_ - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(m_.determinant() - Scalar(1)) <= tol;
  }

 private:
  Matrix3<Scalar> m_;
};

/// Inverse of the SO(3) right Jacobian, J_r⁻¹(w).
template <typename Scalar>
[[nodiscard]] Matrix3<Scalar> so3_right_jacobian_inverse(const Vector3<Scalar>& w) {
  const Scalar theta = w.norm();
  const Matrix3<Scalar> W = skew(w);
  if (theta < Scalar(1e-6)) {
    return Matrix3<Scalar>::Identity() + Scalar(0.5) * W + W * W / Scalar(12);
  }
  const Scalar sin_theta = std::sin(theta);
  // (1 + cos θ) / sin θ → 0 as θ → π
  const Scalar ratio = std::abs(sin_theta) < Scalar(1e-12)
                           ? Scalar(0)
                           : (Scalar(1) + std::cos(theta)) / (Scalar(2) * theta * sin_theta);
  const Scalar coeff = Scalar(1) / (theta * theta) - ratio;
  return Matrix3<Scalar>::Identity() + Scalar(0.5) * W + coeff * W * W;
}

/// Nearest rotation in Frobenius norm (Kabsch with determinant correction).
template <typename Scalar>
[[nodiscard]] Rot3<Scalar> project_to_so3(const Matrix3<Scalar>& m) {
  if (!m.allFinite()) throw GeometryError("project_to_so3: non-finite input");
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(0) > Scalar(0)) || s(1) <= Scalar(1e-12) * s(0)) {
    throw GeometryError("project_to_so3: rank-deficient matrix");
  }
  Matrix3<Scalar> u = svd.matrixU();
  const Matrix3<Scalar>& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < Scalar(0)) u.col(2) *= Scalar(-1);
  return Rot3<Scalar>(u * v.transpose());
}

template <typename Scalar>
class Pose3 {
 public:
  Pose3() : trans_(Vector3<Scalar>::Zero()) {}
  Pose3(const Rot3<Scalar>& rot, const Vector3<Scalar>& trans) : rot_(rot), trans_(trans) {}

  static Pose3 identity() { return Pose3(); }

  [[nodiscard]] const Rot3<Scalar>& rot() const { return rot_; }
  [[nodiscard]] const Vector3<Scalar>& trans() const { return trans_; }
  [[nodiscard]] Rot3<Scalar>& rot() { return rot_; }
  [[nodiscard]] Vector3<Scalar>& trans() { return trans_; }

  [[nodiscard]] Pose3 operator*(const Pose3& o) const {
    return Pose3(rot_ * o.rot_, rot_ * o.trans_ + trans_);
  }
  [[nodiscard]] Vector3<Scalar> operator*(const Vector3<Scalar>& p) const { return rot_ * p + trans_; }
  [[nodiscard]] Pose3 inverse() const {
    const Rot3<Scalar> rt = rot_.inverse();
    return Pose3(rt, -(rt * trans_));
  }

  [[nodiscard]] Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> h = Eigen::Matrix<Scalar, 4, 4>::Identity();
    h.template topLeftCorner<3, 3>() = rot_.matrix();
    h.template topRightCorner<3, 1>() = trans_;
    return h;
  }

 private:
  Rot3<Scalar> rot_;
  Vector3<Scalar> trans_;
};

template <typename Scalar>
[[nodiscard]] Pose3<Scalar> compose(const Pose3<Scalar>& a, const Pose3<Scalar>& b) {
  return a * b;
}

template <typename Scalar>
[[nodiscard]] Pose3<Scalar> inverse(const Pose3<Scalar>& a) {
  return a.inverse();
}

/// (rotation vector, translation) of b⁻¹·a.
template <typename Scalar>
[[nodiscard]] Vector6<Scalar> boxminus(const Pose3<Scalar>& a, const Pose3<Scalar>& b) {
  const Matrix3<Scalar> rbt = b.rot().matrix().transpose();
  Vector6<Scalar> d;
  d.template head<3>() = Rot3<Scalar>(rbt * a.rot().matrix()).log();
  d.template tail<3>() = rbt * (a.trans() - b.trans());
  return d;
}

template <typename Scalar>
[[nodiscard]] Pose3<Scalar> boxplus(const Pose3<Scalar>& b, const Vector6<Scalar>& d) {
  return b * Pose3<Scalar>(Rot3<Scalar>::exp(d.template head<3>()), d.template tail<3>());
}

/// Squared chordal residual w_rot‖Rj − Ri R̃‖²_F + w_tr‖tj − ti − Ri t̃‖².
template <typename Scalar>
[[nodiscard]] Scalar chordal_residual_sq(const Pose3<Scalar>& xi, const Pose3<Scalar>& xj,
                                         const Pose3<Scalar>& meas, Scalar w_rot, Scalar w_tr) {
  const Matrix3<Scalar>& ri = xi.rot().matrix();
  const Scalar rot_err = (xj.rot().matrix() - ri * meas.rot().matrix()).squaredNorm();
  const Scalar tr_err = (xj.trans() - xi.trans() - ri * meas.trans()).squaredNorm();
  return w_rot * rot_err + w_tr * tr_err;
}

template <typename Scalar>
[[nodiscard]] Scalar chordal_residual(const Pose3<Scalar>& xi, const Pose3<Scalar>& xj,
                                      const Pose3<Scalar>& meas, Scalar w_rot, Scalar w_tr) {
  if (!(w_rot > Scalar(0)) || !(w_tr > Scalar(0))) {
    throw GeometryError("chordal_residual: precisions must be positive");
  }
  return std::sqrt(chordal_residual_sq(xi, xj, meas, w_rot, w_tr));
}

/// W with ‖W e‖ equal to the Mahalanobis norm of e under Σ (W = L⁻¹, Σ = L Lᵀ).
template <typename Scalar>
[[nodiscard]] Matrix6<Scalar> whitening_from_covariance(const Matrix6<Scalar>& cov) {
  const Scalar scale = std::max(Scalar(1), cov.cwiseAbs().maxCoeff());
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * scale) {
    throw GeometryError("covariance must be finite and symmetric");
  }
  Eigen::LLT<Matrix6<Scalar>> llt(cov);
  if (llt.info() != Eigen::Success) throw GeometryError("covariance is not positive definite");
  return llt.matrixL().solve(Matrix6<Scalar>::Identity());
}

/// ‖x ⊟ meas‖_Σ.
template <typename Scalar>
[[nodiscard]] Scalar geodesic_residual(const Pose3<Scalar>& x, const Pose3<Scalar>& meas,
                                       const Matrix6<Scalar>& cov) {
  return (whitening_from_covariance(cov) * boxminus(x, meas)).norm();
}

template <typename Scalar>
[[nodiscard]] Matrix6<Scalar> diagonal_covariance(Scalar sigma_rot, Scalar sigma_tr) {
  Vector6<Scalar> d;
  d << sigma_rot * sigma_rot, sigma_rot * sigma_rot, sigma_rot * sigma_rot, sigma_tr * sigma_tr,
      sigma_tr * sigma_tr, sigma_tr * sigma_tr;
  return d.asDiagonal();
}

/// Pose lifted to rank r: rotation block r×3 with orthonormal columns,
/// translation in R^r.
template <typename Scalar>
struct LiftedPose {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> y_rot;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> y_trans;

  [[nodiscard]] int rank() const { return static_cast<int>(y_rot.rows()); }

  static LiftedPose lift(const Pose3<Scalar>& x, int rank) {
    if (rank < 3) throw GeometryError("lift: rank must be >= 3");
    LiftedPose l;
    l.y_rot = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>::Zero(rank, 3);
    l.y_rot.template topRows<3>() = x.rot().matrix();
    l.y_trans = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(rank);
    l.y_trans.template head<3>() = x.trans();
    return l;
  }

  [[nodiscard]] bool is_valid(Scalar tol = Scalar(1e-9)) const {
    return (y_rot.transpose() * y_rot - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol;
  }
};

/// Polar factor of an r×3 matrix; nearest point on St(3, r).
template <typename Scalar>
[[nodiscard]] Eigen::Matrix<Scalar, Eigen::Dynamic, 3> project_to_stiefel(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& m) {
  using Dyn = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::JacobiSVD<Dyn> svd(Dyn(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Lifted analogue of chordal_residual_sq; equal to it at a lift point.
template <typename Scalar>
[[nodiscard]] Scalar lifted_residual_sq(const LiftedPose<Scalar>& xi, const LiftedPose<Scalar>& xj,
                                        const Pose3<Scalar>& meas, Scalar w_rot, Scalar w_tr) {
  const Scalar rot_err = (xj.y_rot - xi.y_rot * meas.rot().matrix()).squaredNorm();
  const Scalar tr_err = (xj.y_trans - xi.y_trans - xi.y_rot * meas.trans()).squaredNorm();
  return w_rot * rot_err + w_tr * tr_err;
}

using Rot3d = Rot3<double>;
using Pose3d = Pose3<double>;
using LiftedPosed = LiftedPose<double>;
using Vector3d = Vector3<double>;
using Vector6d = Vector6<double>;
using Matrix3d = Matrix3<double>;
using Matrix6d = Matrix6<double>;

}  // namespace dgnc

#endif  // DGNC_GEOMETRY_HPP
