// Per-cell operators of the hybrid discretization: symmetric gradient,
// divergence, and velocity reconstructions, face residual operators, the
// local energy seminorm, and the local viscous/coupling forms with their
// Newton tangents.
//
// Tensor-valued quantities use orthonormal Voigt coordinates (types.hpp), so
// a field in P^k(T, sym) is a coefficient vector of size 3 N_k laid out
// component-major: [c_11 | c_22 | sqrt2-weighted c_12]. Velocity coefficient
// blocks are component-major [x | y] as in dofs.hpp.

#pragma once

#include <polystokes/basis.hpp>
#include <polystokes/dofs.hpp>
#include <polystokes/mesh.hpp>
#include <polystokes/quadrature.hpp>
#include <polystokes/rheology.hpp>
#include <polystokes/types.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace polystokes {

struct ElementOperators {
  std::size_t cell_id = 0;
  int k = 1;
  double r = 2.0;
  int quad_boost = 0;
  std::size_t n_faces = 0;

  std::size_t n_k = 0;        // scalar P^k basis size
  std::size_t n_k1 = 0;       // scalar P^{k+1} basis size
  std::size_t face_scalar = 0;  // k + 1
  std::size_t cell_block = 0;
  std::size_t face_block = 0;
  std::size_t local_size = 0;

  CellBasis basis_k;
  CellBasis basis_k1;
  std::vector<FaceBasis> face_bases;

  QuadratureRule cell_rule;     // exact for the polynomial integrands
  QuadratureRule cell_rule_nl;  // boosted rule for nonlinear integrands
  std::vector<QuadratureRule> face_rules;
  std::vector<QuadratureRule> face_rules_nl;

  std::vector<Vec2> normals;   // outward, per local face
  std::vector<double> face_h;  // face diameters
  double h_cell = 0.0;

  MatX mass;  // scalar P^k mass matrix on the cell
  MatX grad_sym;                // 3 n_k x local_size
  MatX divergence;              // n_k x local_size
  MatX reconstruction;          // 2 n_k1 x local_size
  std::vector<MatX> face_residual;  // per face: 2 (k+1) x local_size, h_F^{-1/r'} included
  MatX coupling;                // n_k x local_size: q^T coupling v = integral_T D(v) q

  /// Voigt value of the reconstructed gradient at a point, given the
  /// precomputed coefficients g = grad_sym * v.
  Vec3 grad_value(const VecX& g, const VecX& phi) const {
    return {phi.dot(g.segment(0, n_k)), phi.dot(g.segment(n_k, n_k)),
            phi.dot(g.segment(2 * n_k, n_k))};
  }
};

namespace detail {

/// Rows of the Voigt representation of grad_s(e_x phi_j) and grad_s(e_y phi_j)
/// assembled into a 3 x 2N block evaluator at one point.
inline MatX sym_grad_rows(const MatX& dphi) {
  const auto n = dphi.rows();
  MatX out = MatX::Zero(3, 2 * n);
  out.block(0, 0, 1, n) = dphi.col(0).transpose();
  out.block(1, n, 1, n) = dphi.col(1).transpose();
  out.block(2, 0, 1, n) = dphi.col(1).transpose() / std::numbers::sqrt2;
  out.block(2, n, 1, n) = dphi.col(0).transpose() / std::numbers::sqrt2;
  return out;
}

}  // namespace detail

/// Builds and caches every per-cell operator. `r` enters only through the
/// h_F^{-1/r'} scaling of the face residual operators; `quad_boost` raises the
/// exactness degree of the rules used for non-polynomial integrands.
inline ElementOperators build_element_operators(const Mesh& mesh, std::size_t cell_id, int k,
                                                double r, int quad_boost = 0) {
  if (k < 1) throw std::invalid_argument("build_element_operators: k must be >= 1");
  if (!(r > 1.0)) throw std::invalid_argument("build_element_operators: r must exceed 1");
  const Cell& cell = mesh.cell(cell_id);

  ElementOperators ops{.cell_id = cell_id,
                       .k = k,
                       .r = r,
                       .quad_boost = quad_boost,
                       .n_faces = cell.faces.size(),
                       .n_k = cell_basis_size(k),
                       .n_k1 = cell_basis_size(k + 1),
                       .face_scalar = static_cast<std::size_t>(k + 1),
                       .cell_block = 2 * cell_basis_size(k),
                       .face_block = 2 * static_cast<std::size_t>(k + 1),
                       .local_size = 0,
                       .basis_k = CellBasis(mesh, cell_id, k),
                       .basis_k1 = CellBasis(mesh, cell_id, k + 1)};
  ops.local_size = ops.cell_block + ops.n_faces * ops.face_block;
  ops.h_cell = cell.diameter;

  const int exact_deg = 2 * (k + 1);
  const int nl_deg = 2 * (k + 1) + 2 + quad_boost;
  // On faces, the boost also subdivides the rule into panels: degree elevation
  // alone converges slowly when |delta|^{r-2} has a near-zero inside a face.
  const int face_nl_deg = 2 * (k + 1) + 2 + std::min(quad_boost, 10);
  const int face_nl_panels = 1 + quad_boost / 2;
  ops.cell_rule = quad_cell(mesh, cell_id, exact_deg);
  ops.cell_rule_nl = quad_cell(mesh, cell_id, nl_deg);
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const std::size_t face_id = cell.faces[f];
    ops.face_bases.emplace_back(mesh, face_id, k);
    ops.face_rules.push_back(quad_face(mesh, face_id, exact_deg));
    ops.face_rules_nl.push_back(quad_face(mesh, face_id, face_nl_deg, face_nl_panels));
    ops.normals.push_back(cell.normals[f]);
    ops.face_h.push_back(mesh.face(face_id).length);
  }

  const std::size_t n_k = ops.n_k, n_k1 = ops.n_k1, nfs = ops.face_scalar, L = ops.local_size;
  const double s2 = std::numbers::sqrt2;

  ops.mass = detail::gram_matrix(ops.basis_k, ops.cell_rule);
  const Eigen::LLT<MatX> mass_llt = detail::checked_llt(ops.mass, "build_element_operators");

  // --- Symmetric gradient and divergence: variational right-hand sides.
  MatX bg = MatX::Zero(3 * n_k, L);
  MatX bd = MatX::Zero(n_k, L);
  MatX mixed_k1 = MatX::Zero(n_k, n_k1);  // cell mass between P^k and P^{k+1}
  for (std::size_t q = 0; q < ops.cell_rule.size(); q++) {
    const double w = ops.cell_rule.weights(q);
    const Vec2& x = ops.cell_rule.points[q];
    const VecX phi = ops.basis_k.eval(x);
    const MatX dphi = ops.basis_k.eval_grad(x);
    const VecX phi1 = ops.basis_k1.eval(x);
    bg.block(0, 0, n_k, n_k) += w * phi * dphi.col(0).transpose();
    bg.block(n_k, n_k, n_k, n_k) += w * phi * dphi.col(1).transpose();
    bg.block(2 * n_k, 0, n_k, n_k) += (w / s2) * phi * dphi.col(1).transpose();
    bg.block(2 * n_k, n_k, n_k, n_k) += (w / s2) * phi * dphi.col(0).transpose();
    bd.block(0, 0, n_k, n_k) += w * phi * dphi.col(0).transpose();
    bd.block(0, n_k, n_k, n_k) += w * phi * dphi.col(1).transpose();
    mixed_k1 += w * phi * phi1.transpose();
  }
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const Vec2 n = ops.normals[f];
    const std::size_t cf = ops.cell_block + f * ops.face_block;
    for (std::size_t q = 0; q < ops.face_rules[f].size(); q++) {
      const double w = ops.face_rules[f].weights(q);
      const Vec2& x = ops.face_rules[f].points[q];
      const VecX phi = ops.basis_k.eval(x);
      const VecX psi = ops.face_bases[f].eval(x);
      const MatX face_x = phi * psi.transpose();  // n_k x nfs
      const MatX cell_x = phi * phi.transpose();  // n_k x n_k
      bg.block(0, cf, n_k, nfs) += w * n.x() * face_x;
      bg.block(0, 0, n_k, n_k) -= w * n.x() * cell_x;
      bg.block(n_k, cf + nfs, n_k, nfs) += w * n.y() * face_x;
      bg.block(n_k, n_k, n_k, n_k) -= w * n.y() * cell_x;
      bg.block(2 * n_k, cf, n_k, nfs) += (w * n.y() / s2) * face_x;
      bg.block(2 * n_k, 0, n_k, n_k) -= (w * n.y() / s2) * cell_x;
      bg.block(2 * n_k, cf + nfs, n_k, nfs) += (w * n.x() / s2) * face_x;
      bg.block(2 * n_k, n_k, n_k, n_k) -= (w * n.x() / s2) * cell_x;
      bd.block(0, cf, n_k, nfs) += w * n.x() * face_x;
      bd.block(0, 0, n_k, n_k) -= w * n.x() * cell_x;
      bd.block(0, cf + nfs, n_k, nfs) += w * n.y() * face_x;
      bd.block(0, n_k, n_k, n_k) -= w * n.y() * cell_x;
    }
  }
  ops.grad_sym.resize(3 * n_k, L);
  for (int m = 0; m < 3; m++) {
    ops.grad_sym.block(m * n_k, 0, n_k, L) = mass_llt.solve(bg.block(m * n_k, 0, n_k, L));
  }
  ops.divergence = mass_llt.solve(bd);
  ops.coupling = bd;  // equals mass * divergence by construction, computed exactly

  // --- Velocity reconstruction: elasticity problem driven by grad_sym, with
  // mean-value and skew-gradient closures appended as extra rows (the system
  // is consistent, so the least-squares solution satisfies all rows exactly).
  MatX stiff = MatX::Zero(2 * n_k1, 2 * n_k1);
  MatX rhs_r = MatX::Zero(2 * n_k1, L);
  MatX closure = MatX::Zero(3, 2 * n_k1);
  MatX closure_rhs = MatX::Zero(3, L);
  for (std::size_t q = 0; q < ops.cell_rule.size(); q++) {
    const double w = ops.cell_rule.weights(q);
    const Vec2& x = ops.cell_rule.points[q];
    const VecX phi = ops.basis_k.eval(x);
    const VecX phi1 = ops.basis_k1.eval(x);
    const MatX dphi1 = ops.basis_k1.eval_grad(x);
    const MatX vq = detail::sym_grad_rows(dphi1);  // 3 x 2 n_k1
    MatX gq(3, L);                                 // Voigt value of grad_sym at x
    for (int m = 0; m < 3; m++) {
      gq.row(m) = phi.transpose() * ops.grad_sym.block(m * n_k, 0, n_k, L);
    }
    stiff += w * vq.transpose() * vq;
    rhs_r += w * vq.transpose() * gq;
    closure.block(0, 0, 1, n_k1) += w * phi1.transpose();
    closure.block(1, n_k1, 1, n_k1) += w * phi1.transpose();
    closure.block(2, 0, 1, n_k1) += 0.5 * w * dphi1.col(1).transpose();
    closure.block(2, n_k1, 1, n_k1) -= 0.5 * w * dphi1.col(0).transpose();
    closure_rhs.block(0, 0, 1, n_k) += w * phi.transpose();
    closure_rhs.block(1, n_k, 1, n_k) += w * phi.transpose();
  }
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const Vec2 n = ops.normals[f];
    const std::size_t cf = ops.cell_block + f * ops.face_block;
    for (std::size_t q = 0; q < ops.face_rules[f].size(); q++) {
      const double w = ops.face_rules[f].weights(q);
      const VecX psi = ops.face_bases[f].eval(ops.face_rules[f].points[q]);
      closure_rhs.block(2, cf, 1, nfs) += 0.5 * w * n.y() * psi.transpose();
      closure_rhs.block(2, cf + nfs, 1, nfs) -= 0.5 * w * n.x() * psi.transpose();
    }
  }
  MatX augmented(2 * n_k1 + 3, 2 * n_k1);
  augmented << stiff, closure;
  MatX augmented_rhs(2 * n_k1 + 3, L);
  augmented_rhs << rhs_r, closure_rhs;
  const Eigen::ColPivHouseholderQR<MatX> qr(augmented);
  if (qr.rank() < static_cast<Eigen::Index>(2 * n_k1)) {
    throw std::runtime_error("build_element_operators: singular reconstruction system (degenerate cell)");
  }
  ops.reconstruction = qr.solve(augmented_rhs);

  // --- Face residual operators delta_F, including the h_F^{-1/r'} scaling.
  const MatX proj_k1_to_k = mass_llt.solve(mixed_k1);  // pi_T^k on P^{k+1}
  const double r_conj = r / (r - 1.0);
  const MatX rec_x = ops.reconstruction.topRows(n_k1);
  const MatX rec_y = ops.reconstruction.bottomRows(n_k1);
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    MatX face_mass = MatX::Zero(nfs, nfs);
    MatX trace_k_rhs = MatX::Zero(nfs, n_k);
    MatX trace_k1_rhs = MatX::Zero(nfs, n_k1);
    for (std::size_t q = 0; q < ops.face_rules[f].size(); q++) {
      const double w = ops.face_rules[f].weights(q);
      const Vec2& x = ops.face_rules[f].points[q];
      const VecX psi = ops.face_bases[f].eval(x);
      face_mass += w * psi * psi.transpose();
      trace_k_rhs += w * psi * ops.basis_k.eval(x).transpose();
      trace_k1_rhs += w * psi * ops.basis_k1.eval(x).transpose();
    }
    const Eigen::LLT<MatX> face_llt = detail::checked_llt(face_mass, "build_element_operators");
    const MatX trace_k = face_llt.solve(trace_k_rhs);    // pi_F^k of P^k(T)
    const MatX trace_k1 = face_llt.solve(trace_k1_rhs);  // pi_F^k of P^{k+1}(T)
    const MatX core = trace_k1 - trace_k * proj_k1_to_k;
    const double scale = std::pow(ops.face_h[f], -1.0 / r_conj);
    const std::size_t cf = ops.cell_block + f * ops.face_block;
    MatX dmat = MatX::Zero(2 * nfs, L);
    dmat.topRows(nfs) = core * rec_x;
    dmat.block(0, 0, nfs, n_k) += trace_k;
    dmat.block(0, cf, nfs, nfs) -= MatX::Identity(nfs, nfs);
    dmat.bottomRows(nfs) = core * rec_y;
    dmat.block(nfs, n_k, nfs, n_k) += trace_k;
    dmat.block(nfs, cf + nfs, nfs, nfs) -= MatX::Identity(nfs, nfs);
    ops.face_residual.push_back(scale * dmat);
  }
  return ops;
}

/// Interpolator: cell block = componentwise L2 projection onto P^k(T), face
/// blocks = componentwise L2 projections onto P^k(F).
inline LocalVector interpolate(const std::function<Vec2(const Vec2&)>& v, const Mesh& mesh,
                               std::size_t cell_id, int k, int rhs_exactness = -1) {
  const Cell& cell = mesh.cell(cell_id);
  LocalVector out = LocalVector::zero(k, cell.faces.size());
  const std::size_t n_k = cell_basis_size(k), nfs = static_cast<std::size_t>(k + 1);
  const auto component = [&v](int c) {
    return [&v, c](const Vec2& x) { return v(x)(c); };
  };
  out.data.segment(0, n_k) = l2_project_cell(component(0), mesh, cell_id, k, rhs_exactness);
  out.data.segment(n_k, n_k) = l2_project_cell(component(1), mesh, cell_id, k, rhs_exactness);
  for (std::size_t f = 0; f < cell.faces.size(); f++) {
    const std::size_t cf = out.cell_block() + f * out.face_block();
    out.data.segment(cf, nfs) =
        l2_project_face(component(0), mesh, cell.faces[f], k, rhs_exactness);
    out.data.segment(cf + nfs, nfs) =
        l2_project_face(component(1), mesh, cell.faces[f], k, rhs_exactness);
  }
  return out;
}

/// (|grad_s v_T|^r_{L^r(T)} + sum_F h_F^{1-r} |v_F - v_T|^r_{L^r(F)})^{1/r}.
inline double local_energy_seminorm(const ElementOperators& ops, const LocalVector& v, double r) {
  if (v.data.size() != static_cast<Eigen::Index>(ops.local_size)) {
    throw std::invalid_argument("local_energy_seminorm: size mismatch");
  }
  const std::size_t n_k = ops.n_k, nfs = ops.face_scalar;
  double acc = 0.0;
  for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
    const MatX dphi = ops.basis_k.eval_grad(ops.cell_rule_nl.points[q]);
    const Vec3 eps = detail::sym_grad_rows(dphi) * v.data.head(2 * n_k);
    acc += ops.cell_rule_nl.weights(q) * std::pow(eps.norm(), r);
  }
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const std::size_t cf = ops.cell_block + f * ops.face_block;
    double face_acc = 0.0;
    for (std::size_t q = 0; q < ops.face_rules_nl[f].size(); q++) {
      const Vec2& x = ops.face_rules_nl[f].points[q];
      const VecX phi = ops.basis_k.eval(x);
      const VecX psi = ops.face_bases[f].eval(x);
      const Vec2 diff(psi.dot(v.data.segment(cf, nfs)) - phi.dot(v.data.segment(0, n_k)),
                      psi.dot(v.data.segment(cf + nfs, nfs)) - phi.dot(v.data.segment(n_k, n_k)));
      face_acc += ops.face_rules_nl[f].weights(q) * std::pow(diff.norm(), r);
    }
    acc += std::pow(ops.face_h[f], 1.0 - r) * face_acc;
  }
  return std::pow(acc, 1.0 / r);
}

/// sum_F integral_F |delta_F(v)|^r: the stabilization residual energy.
inline double stab_residual_energy(const ElementOperators& ops, const LocalVector& v, double r) {
  const std::size_t nfs = ops.face_scalar;
  double acc = 0.0;
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const VecX d = ops.face_residual[f] * v.data;
    for (std::size_t q = 0; q < ops.face_rules_nl[f].size(); q++) {
      const VecX psi = ops.face_bases[f].eval(ops.face_rules_nl[f].points[q]);
      const Vec2 val(psi.dot(d.head(nfs)), psi.dot(d.tail(nfs)));
      acc += ops.face_rules_nl[f].weights(q) * std::pow(val.norm(), r);
    }
  }
  return acc;
}

namespace detail {

inline void check_gamma(const FlowLaw& law, double gamma) {
  const LawConstants constants = law_constants(law);
  if (!(gamma >= constants.sigma_sm && gamma <= constants.sigma_hc)) {
    throw std::invalid_argument(
        "stabilization parameter gamma = " + std::to_string(gamma) +
        " outside the admissible interval [sigma_sm, sigma_hc] = [" +
        std::to_string(constants.sigma_sm) + ", " + std::to_string(constants.sigma_hc) + "]");
  }
}

}  // namespace detail

/// Residual vector of the stabilization function alone:
/// v |-> sum_F integral_F |delta_F w|^{r-2} delta_F w . delta_F v.
inline VecX local_stabilization_residual_vector(const ElementOperators& ops, double r,
                                                const LocalVector& w) {
  const std::size_t nfs = ops.face_scalar;
  VecX out = VecX::Zero(ops.local_size);
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const VecX d = ops.face_residual[f] * w.data;
    VecX face_acc = VecX::Zero(2 * nfs);
    for (std::size_t q = 0; q < ops.face_rules_nl[f].size(); q++) {
      const double wq = ops.face_rules_nl[f].weights(q);
      const VecX psi = ops.face_bases[f].eval(ops.face_rules_nl[f].points[q]);
      const Vec2 val(psi.dot(d.head(nfs)), psi.dot(d.tail(nfs)));
      const double norm = val.norm();
      if (norm == 0.0) continue;
      const Vec2 rho = std::pow(norm, r - 2.0) * val;
      face_acc.head(nfs) += (wq * rho.x()) * psi;
      face_acc.tail(nfs) += (wq * rho.y()) * psi;
    }
    out += ops.face_residual[f].transpose() * face_acc;
  }
  return out;
}

/// s_T(w, v): the stabilization function, linear in v.
inline double local_stabilization_form(const ElementOperators& ops, double r, const LocalVector& w,
                                       const LocalVector& v) {
  return local_stabilization_residual_vector(ops, r, w).dot(v.data);
}

/// Viscous residual functional at w: v |-> integral_T sigma(G w) : G v
/// + gamma sum_F integral_F |delta_F w|^{r-2} delta_F w . delta_F v.
inline VecX local_viscous_residual_vector(const ElementOperators& ops, const FlowLaw& law,
                                          double gamma, const LocalVector& w) {
  detail::check_gamma(law, gamma);
  const std::size_t n_k = ops.n_k;
  VecX out = gamma * local_stabilization_residual_vector(ops, law.r, w);

  const VecX gw = ops.grad_sym * w.data;
  VecX acc = VecX::Zero(3 * n_k);
  for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
    const double wq = ops.cell_rule_nl.weights(q);
    const VecX phi = ops.basis_k.eval(ops.cell_rule_nl.points[q]);
    const Vec3 sig = sym_to_vec(stress(law, vec_to_sym(ops.grad_value(gw, phi))));
    for (int m = 0; m < 3; m++) acc.segment(m * n_k, n_k) += (wq * sig(m)) * phi;
  }
  out += ops.grad_sym.transpose() * acc;
  return out;
}

/// a_T(w, v): linear in v.
inline double local_viscous_residual(const ElementOperators& ops, const FlowLaw& law, double gamma,
                                     const LocalVector& w, const LocalVector& v) {
  return local_viscous_residual_vector(ops, law, gamma, w).dot(v.data);
}

/// Newton tangent of the viscous residual at w; symmetric by construction.
/// The stabilization modulus is evaluated at max(|delta_F w|, eps_tangent).
inline MatX local_viscous_tangent(const ElementOperators& ops, const FlowLaw& law, double gamma,
                                  const LocalVector& w) {
  detail::check_gamma(law, gamma);
  const std::size_t n_k = ops.n_k, nfs = ops.face_scalar, L = ops.local_size;
  const double r = law.r;
  MatX tangent = MatX::Zero(L, L);

  const VecX gw = ops.grad_sym * w.data;
  for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
    const double wq = ops.cell_rule_nl.weights(q);
    const VecX phi = ops.basis_k.eval(ops.cell_rule_nl.points[q]);
    const Mat3 dsig = stress_tangent(law, vec_to_sym(ops.grad_value(gw, phi)));
    MatX pq(3, L);
    for (int m = 0; m < 3; m++) {
      pq.row(m) = phi.transpose() * ops.grad_sym.block(m * n_k, 0, n_k, L);
    }
    tangent += wq * pq.transpose() * dsig * pq;
  }

  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const VecX d = ops.face_residual[f] * w.data;
    for (std::size_t q = 0; q < ops.face_rules_nl[f].size(); q++) {
      const double wq = ops.face_rules_nl[f].weights(q);
      const VecX psi = ops.face_bases[f].eval(ops.face_rules_nl[f].points[q]);
      const Vec2 val(psi.dot(d.head(nfs)), psi.dot(d.tail(nfs)));
      const double alpha = std::max(val.norm(), eps_tangent);
      const Mat2 smat = std::pow(alpha, r - 2.0) * Mat2::Identity() +
                        (r - 2.0) * std::pow(alpha, r - 4.0) * (val * val.transpose());
      MatX wqm(2, L);
      wqm.row(0) = psi.transpose() * ops.face_residual[f].topRows(nfs);
      wqm.row(1) = psi.transpose() * ops.face_residual[f].bottomRows(nfs);
      tangent += (gamma * wq) * wqm.transpose() * smat * wqm;
    }
  }
  return tangent;
}

/// -integral_T D(v) q_T, the local pressure-velocity coupling (bilinear).
inline double local_divergence_coupling(const ElementOperators& ops, const LocalVector& v,
                                        const VecX& q) {
  if (q.size() != static_cast<Eigen::Index>(ops.n_k)) {
    throw std::invalid_argument("local_divergence_coupling: pressure coefficient size mismatch");
  }
  return -q.dot(ops.coupling * v.data);
}

}  // namespace polystokes
