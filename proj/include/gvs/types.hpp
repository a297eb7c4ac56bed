#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gvs {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;
using Mat6X = Eigen::Matrix<double, 6, Eigen::Dynamic>;

enum class ErrorCode {
  DomainError,
  AngleNearPi,
  NearSingularTangent,
  ZeroTangent,
  SingularMass,
  SingularSaddle,
  NewtonDiverged,
  DegenerateRadial,
  ZeroAverage,
  SchemaError,
  DimensionMismatch,
  NumericalFailure,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

/// Element of SE(3) stored as rotation matrix + translation.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Mat3& R_, const Vec3& p_) : R(R_), p(p_) {}

  static RigidTransform Identity() { return {}; }

  RigidTransform operator*(const RigidTransform& o) const { return {R * o.R, R * o.p + p}; }

  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * p)}; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = p;
    return m;
  }

  // R'R = I and det R = +1, both within tol
  bool isValid(double tol = 1e-12) const {
    return ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol) &&
           (std::abs(R.determinant() - 1.0) <= tol);
  }
};

}  // namespace gvs
