// Quadrature on polygonal cells and straight faces.
//
// Cells are integrated by fanning sub-triangles from the centroid (valid for
// cells star-shaped with respect to it) with a collapsed tensor-product Gauss
// rule per triangle; faces use Gauss-Legendre. All weights are positive and
// rules are exact to the requested polynomial degree.

#pragma once

#include <polystokes/mesh.hpp>
#include <polystokes/types.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace polystokes {

struct QuadratureRule {
  std::vector<Vec2> points;  // physical coordinates
  VecX weights;              // area (cell) or arclength (face) units
  int exactness = 0;

  std::size_t size() const { return points.size(); }
  double total_weight() const { return weights.sum(); }
};

namespace detail {

/// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on the Legendre
/// recurrence; machine-precision and deterministic.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; i++) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; iter++) {
      double p0 = 1.0, p1 = x;
      for (int j = 2; j <= n; j++) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

/// Rule on the triangle (a,b,c), exact for total degree <= exactness.
/// Collapsed map (u,v) in [0,1]^2 -> (u, v(1-u)) on the reference triangle;
/// the extra Jacobian factor (1-u) raises the u-degree by one.
inline void append_triangle_rule(const Vec2& a, const Vec2& b, const Vec2& c, int exactness,
                                 std::vector<Vec2>& points, std::vector<double>& weights) {
  const double twice_area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
  if (!(twice_area > 0.0)) {
    throw std::runtime_error("quad_cell: degenerate or non-star-shaped cell (fan triangle has non-positive area)");
  }
  const int nu = (exactness + 3) / 2;  // exact for u-degree exactness + 1
  const int nv = (exactness + 2) / 2;  // exact for v-degree exactness
  std::vector<double> xu, wu, xv, wv;
  gauss_legendre(nu, xu, wu);
  gauss_legendre(nv, xv, wv);
  for (int iu = 0; iu < nu; iu++) {
    const double u = 0.5 * (xu[iu] + 1.0);
    for (int iv = 0; iv < nv; iv++) {
      const double v = 0.5 * (xv[iv] + 1.0);
      const double x = u, y = v * (1.0 - u);
      points.push_back(a + x * (b - a) + y * (c - a));
      weights.push_back(0.25 * wu[iu] * wv[iv] * (1.0 - u) * twice_area);
    }
  }
}

}  // namespace detail

/// Quadrature over a cell, exact for polynomials of total degree <= exactness.
inline QuadratureRule quad_cell(const Mesh& mesh, std::size_t cell_id, int exactness) {
  const Cell& cell = mesh.cell(cell_id);
  std::vector<Vec2> points;
  std::vector<double> weights;
  const std::size_t nv = cell.vertices.size();
  for (std::size_t i = 0; i < nv; i++) {
    detail::append_triangle_rule(cell.centroid, mesh.vertex(cell.vertices[i]),
                                 mesh.vertex(cell.vertices[(i + 1) % nv]), std::max(exactness, 0),
                                 points, weights);
  }
  QuadratureRule rule;
  rule.points = std::move(points);
  rule.weights = Eigen::Map<VecX>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  rule.exactness = exactness;
  return rule;
}

/// Gauss-Legendre quadrature along a face, exact to the requested degree.
/// With panels > 1 the face is split into equal subsegments carrying the same
/// Gauss rule each; subdividing keeps polynomial exactness and restores fast
/// convergence for integrands with isolated kinks (such as |v|^{r-2} factors
/// whose argument nearly vanishes inside the face).
inline QuadratureRule quad_face(const Mesh& mesh, std::size_t face_id, int exactness,
                                int panels = 1) {
  if (panels < 1) throw std::invalid_argument("quad_face: panels must be >= 1");
  const Face& face = mesh.face(face_id);
  const int n = std::max(1, (exactness + 2) / 2);
  std::vector<double> x, w;
  detail::gauss_legendre(n, x, w);
  QuadratureRule rule;
  rule.exactness = exactness;
  rule.points.reserve(static_cast<std::size_t>(n) * panels);
  rule.weights.resize(static_cast<Eigen::Index>(n) * panels);
  const Vec2 p0 = mesh.vertex(face.vertices[0]);
  const Vec2 p1 = mesh.vertex(face.vertices[1]);
  for (int p = 0; p < panels; p++) {
    for (int i = 0; i < n; i++) {
      const double t = (p + 0.5 * (x[i] + 1.0)) / panels;
      rule.points.push_back(p0 + t * (p1 - p0));
      rule.weights(p * n + i) = 0.5 * w[i] * face.length / panels;
    }
  }
  return rule;
}

}  // namespace polystokes
