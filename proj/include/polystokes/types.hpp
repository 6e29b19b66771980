// Shared linear-algebra aliases and small helpers for symmetric 2x2 tensors.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <numbers>

namespace polystokes {

inline constexpr int dimspace = 2;

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Symmetric part of a 2x2 matrix.
inline Mat2 sym(const Mat2& m) {
  return 0.5 * (m + m.transpose());
}

/// Orthonormal coordinates of a symmetric 2x2 matrix: (t11, t22, sqrt(2) t12).
/// The Euclidean inner product of two coordinate vectors equals the Frobenius
/// inner product of the matrices, so tangent matrices stay symmetric in these
/// coordinates.
inline Vec3 sym_to_vec(const Mat2& t) {
  const double t12 = 0.5 * (t(0, 1) + t(1, 0));
  return {t(0, 0), t(1, 1), std::numbers::sqrt2 * t12};
}

inline Mat2 vec_to_sym(const Vec3& v) {
  const double off = v(2) / std::numbers::sqrt2;
  Mat2 m;
  m << v(0), off, off, v(1);
  return m;
}

/// Frobenius norm of the symmetric matrix with coordinates v (= |vec|_2).
inline double sym_norm(const Mat2& t) {
  return sym_to_vec(t).norm();
}

}  // namespace polystokes
