// Scaled monomial bases on cells and faces and the L2-orthogonal projectors.
//
// Cell basis: ((x - x_T)/h_T)^alpha ordered by total degree; size (l+1)(l+2)/2.
// Face basis: powers of the arclength coordinate centered at the face midpoint
// and scaled by h_F; size l+1. Projections solve the SPD Gram system by dense
// Cholesky. BasisForm::orthonormal switches a basis to its Gram-Cholesky
// orthonormalization (useful for high degrees).

#pragma once

#include <polystokes/mesh.hpp>
#include <polystokes/quadrature.hpp>
#include <polystokes/types.hpp>

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace polystokes {

inline constexpr std::size_t cell_basis_size(int degree) {
  return static_cast<std::size_t>((degree + 1) * (degree + 2) / 2);
}

enum class BasisForm { monomial, orthonormal };

class CellBasis {
 public:
  CellBasis(const Mesh& mesh, std::size_t cell_id, int degree,
            BasisForm form = BasisForm::monomial)
      : m_cell(cell_id),
        m_degree(degree),
        m_center(mesh.cell(cell_id).centroid),
        m_h(mesh.cell(cell_id).diameter) {
    for (int total = 0; total <= degree; total++) {
      for (int ax = total; ax >= 0; ax--) {
        m_powers.emplace_back(ax, total - ax);
      }
    }
    if (form == BasisForm::orthonormal) orthonormalize(mesh);
  }

  std::size_t size() const { return m_powers.size(); }
  int degree() const { return m_degree; }
  std::size_t cell_id() const { return m_cell; }

  /// Values of all basis functions at x.
  VecX eval(const Vec2& x) const {
    VecX phi(size());
    const double X = (x.x() - m_center.x()) / m_h;
    const double Y = (x.y() - m_center.y()) / m_h;
    for (std::size_t i = 0; i < m_powers.size(); i++) {
      phi(i) = ipow(X, m_powers[i].first) * ipow(Y, m_powers[i].second);
    }
    return apply_transform(phi);
  }

  /// Gradients of all basis functions at x; row i is grad(phi_i).
  MatX eval_grad(const Vec2& x) const {
    MatX dphi(size(), 2);
    const double X = (x.x() - m_center.x()) / m_h;
    const double Y = (x.y() - m_center.y()) / m_h;
    for (std::size_t i = 0; i < m_powers.size(); i++) {
      const auto [ax, ay] = m_powers[i];
      dphi(i, 0) = ax == 0 ? 0.0 : ax * ipow(X, ax - 1) * ipow(Y, ay) / m_h;
      dphi(i, 1) = ay == 0 ? 0.0 : ay * ipow(X, ax) * ipow(Y, ay - 1) / m_h;
    }
    return apply_transform(dphi);
  }

 private:
  static double ipow(double base, int e) {
    double out = 1.0;
    for (int i = 0; i < e; i++) out *= base;
    return out;
  }

  template <typename M>
  M apply_transform(const M& values) const {
    if (m_transform.size() == 0) return values;
    return m_transform * values;
  }

  void orthonormalize(const Mesh& mesh) {
    const QuadratureRule rule = quad_cell(mesh, m_cell, 2 * m_degree);
    MatX gram = MatX::Zero(size(), size());
    for (std::size_t q = 0; q < rule.size(); q++) {
      const VecX phi = eval(rule.points[q]);
      gram += rule.weights(q) * phi * phi.transpose();
    }
    // Rows become orthonormal: transform = L^{-1} with gram = L L^T.
    m_transform = Eigen::LLT<MatX>(gram).matrixL().solve(MatX::Identity(size(), size()));
  }

  std::size_t m_cell;
  int m_degree;
  Vec2 m_center;
  double m_h;
  std::vector<std::pair<int, int>> m_powers;
  MatX m_transform;  // empty unless orthonormalized
};

class FaceBasis {
 public:
  FaceBasis(const Mesh& mesh, std::size_t face_id, int degree,
            BasisForm form = BasisForm::monomial)
      : m_face(face_id),
        m_degree(degree),
        m_midpoint(mesh.face(face_id).midpoint),
        m_tangent(mesh.face(face_id).tangent),
        m_h(mesh.face(face_id).length) {
    if (form == BasisForm::orthonormal) orthonormalize(mesh);
  }

  std::size_t size() const { return static_cast<std::size_t>(m_degree) + 1; }
  int degree() const { return m_degree; }
  std::size_t face_id() const { return m_face; }

  VecX eval(const Vec2& x) const {
    VecX psi(size());
    const double s = m_tangent.dot(x - m_midpoint) / m_h;
    double power = 1.0;
    for (std::size_t i = 0; i < size(); i++) {
      psi(i) = power;
      power *= s;
    }
    if (m_transform.size() != 0) psi = m_transform * psi;
    return psi;
  }

 private:
  void orthonormalize(const Mesh& mesh) {
    const QuadratureRule rule = quad_face(mesh, m_face, 2 * m_degree);
    MatX gram = MatX::Zero(size(), size());
    for (std::size_t q = 0; q < rule.size(); q++) {
      const VecX psi = eval(rule.points[q]);
      gram += rule.weights(q) * psi * psi.transpose();
    }
    m_transform = Eigen::LLT<MatX>(gram).matrixL().solve(MatX::Identity(size(), size()));
  }

  std::size_t m_face;
  int m_degree;
  Vec2 m_midpoint;
  Vec2 m_tangent;
  double m_h;
  MatX m_transform;
};

namespace detail {

inline MatX gram_matrix(const CellBasis& basis, const QuadratureRule& rule) {
  MatX gram = MatX::Zero(basis.size(), basis.size());
  for (std::size_t q = 0; q < rule.size(); q++) {
    const VecX phi = basis.eval(rule.points[q]);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(phi, rule.weights(q));
  }
  return MatX(gram.selfadjointView<Eigen::Lower>());
}

inline MatX gram_matrix(const FaceBasis& basis, const QuadratureRule& rule) {
  MatX gram = MatX::Zero(basis.size(), basis.size());
  for (std::size_t q = 0; q < rule.size(); q++) {
    const VecX psi = basis.eval(rule.points[q]);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(psi, rule.weights(q));
  }
  return MatX(gram.selfadjointView<Eigen::Lower>());
}

template <typename MatT>
Eigen::LLT<MatX> checked_llt(const MatT& gram, const char* where) {
  Eigen::LLT<MatX> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(std::string(where) + ": Gram matrix not positive definite (degenerate geometry)");
  }
  return llt;
}

}  // namespace detail

/// L2-orthogonal projection of a scalar field onto P^l(T). The Gram matrix is
/// integrated exactly; the right-hand side uses `rhs_exactness` (default
/// 2l + 4) since f is generally not polynomial.
inline VecX l2_project_cell(const std::function<double(const Vec2&)>& f, const Mesh& mesh,
                            std::size_t cell_id, int degree, int rhs_exactness = -1) {
  const CellBasis basis(mesh, cell_id, degree);
  const QuadratureRule gram_rule = quad_cell(mesh, cell_id, 2 * degree);
  const QuadratureRule rhs_rule =
      quad_cell(mesh, cell_id, rhs_exactness < 0 ? 2 * degree + 4 : rhs_exactness);
  VecX rhs = VecX::Zero(basis.size());
  for (std::size_t q = 0; q < rhs_rule.size(); q++) {
    rhs += rhs_rule.weights(q) * f(rhs_rule.points[q]) * basis.eval(rhs_rule.points[q]);
  }
  return detail::checked_llt(detail::gram_matrix(basis, gram_rule), "l2_project_cell").solve(rhs);
}

/// L2-orthogonal projection of a scalar field onto P^l(F).
inline VecX l2_project_face(const std::function<double(const Vec2&)>& f, const Mesh& mesh,
                            std::size_t face_id, int degree, int rhs_exactness = -1) {
  const FaceBasis basis(mesh, face_id, degree);
  const QuadratureRule gram_rule = quad_face(mesh, face_id, 2 * degree);
  const QuadratureRule rhs_rule =
      quad_face(mesh, face_id, rhs_exactness < 0 ? 2 * degree + 4 : rhs_exactness);
  VecX rhs = VecX::Zero(basis.size());
  for (std::size_t q = 0; q < rhs_rule.size(); q++) {
    rhs += rhs_rule.weights(q) * f(rhs_rule.points[q]) * basis.eval(rhs_rule.points[q]);
  }
  return detail::checked_llt(detail::gram_matrix(basis, gram_rule), "l2_project_face").solve(rhs);
}

}  // namespace polystokes
