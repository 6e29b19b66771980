#include <polystokes/element_ops.hpp>
#include <polystokes/mesh.hpp>
#include <polystokes/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace ps = polystokes;
using ps::Mat2;
using ps::MatX;
using ps::Vec2;
using ps::Vec3;
using ps::VecX;

namespace {

constexpr double kPi = std::numbers::pi;

/// Random vector-valued polynomial of total degree <= deg in plain global
/// monomials, with analytic gradient. Independent of the library's bases.
struct PolyField {
  std::vector<std::pair<int, int>> powers;
  VecX cx, cy;

  static PolyField random(int deg, ps::Rng& rng) {
    PolyField p;
    for (int d = 0; d <= deg; d++) {
      for (int i = d; i >= 0; i--) p.powers.emplace_back(i, d - i);
    }
    p.cx.resize(p.powers.size());
    p.cy.resize(p.powers.size());
    for (std::size_t m = 0; m < p.powers.size(); m++) {
      p.cx(m) = rng.normal();
      p.cy(m) = rng.normal();
    }
    return p;
  }

  static double mono(double base, int e) { return e == 0 ? 1.0 : std::pow(base, e); }

  Vec2 operator()(const Vec2& x) const {
    Vec2 out = Vec2::Zero();
    for (std::size_t m = 0; m < powers.size(); m++) {
      const double v = mono(x.x(), powers[m].first) * mono(x.y(), powers[m].second);
      out.x() += cx(m) * v;
      out.y() += cy(m) * v;
    }
    return out;
  }

  Mat2 grad(const Vec2& x) const {  // grad(i, j) = d v_i / d x_j
    Mat2 out = Mat2::Zero();
    for (std::size_t m = 0; m < powers.size(); m++) {
      const auto [i, j] = powers[m];
      const double dx = i == 0 ? 0.0 : i * mono(x.x(), i - 1) * mono(x.y(), j);
      const double dy = j == 0 ? 0.0 : j * mono(x.x(), i) * mono(x.y(), j - 1);
      out(0, 0) += cx(m) * dx;
      out(0, 1) += cx(m) * dy;
      out(1, 0) += cy(m) * dx;
      out(1, 1) += cy(m) * dy;
    }
    return out;
  }
};

Vec2 smooth_velocity(const Vec2& x) {
  return {std::sin(kPi * x.x() / 2) * std::cos(kPi * x.y() / 2),
          -std::cos(kPi * x.x() / 2) * std::sin(kPi * x.y() / 2)};
}

Vec2 random_bbox_point(const ps::Mesh& mesh, std::size_t cell_id, ps::Rng& rng) {
  const ps::Cell& cell = mesh.cell(cell_id);
  Vec2 lo = mesh.vertex(cell.vertices[0]), hi = lo;
  for (std::size_t v : cell.vertices) {
    lo = lo.cwiseMin(mesh.vertex(v));
    hi = hi.cwiseMax(mesh.vertex(v));
  }
  return {rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y())};
}

ps::LocalVector random_local(const ps::ElementOperators& ops, ps::Rng& rng) {
  auto v = ps::LocalVector::zero(ops.k, ops.n_faces);
  for (Eigen::Index i = 0; i < v.data.size(); i++) v.data(i) = rng.normal();
  return v;
}

/// |G v|^r_{L^r(T)} via the boosted cell rule.
double grad_lr_energy(const ps::ElementOperators& ops, const ps::LocalVector& v, double r) {
  const VecX g = ops.grad_sym * v.data;
  double acc = 0.0;
  for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
    const VecX phi = ops.basis_k.eval(ops.cell_rule_nl.points[q]);
    acc += ops.cell_rule_nl.weights(q) * std::pow(ops.grad_value(g, phi).norm(), r);
  }
  return acc;
}

/// Composite two-point Gauss integration of f along the straight face, using
/// `panels` equal subintervals (a 2*panels-point grid). Independent oracle
/// quadrature for the face integrals.
double face_composite_gauss(const ps::Mesh& mesh, std::size_t face_id,
                            const std::function<double(const Vec2&)>& f, int panels) {
  const ps::Face& face = mesh.face(face_id);
  const Vec2 a = mesh.vertex(face.vertices[0]);
  const Vec2 b = mesh.vertex(face.vertices[1]);
  const double offset = 0.5 / std::numbers::sqrt3;
  double acc = 0.0;
  for (int p = 0; p < panels; p++) {
    for (double s : {0.5 - offset, 0.5 + offset}) {
      const double t = (p + s) / panels;
      acc += 0.5 * f(a + t * (b - a));
    }
  }
  return acc * face.length / panels;
}

}  // namespace

// ---------------------------------------------------------------------------
// build_element_operators

TEST(ElementOperatorsBuild, SizesAndValidation) {
  const ps::Mesh mesh = ps::generate_cartesian(2);
  const auto ops = ps::build_element_operators(mesh, 0, 1, 2.0);
  EXPECT_EQ(ops.n_k, 3u);
  EXPECT_EQ(ops.n_k1, 6u);
  EXPECT_EQ(ops.cell_block, 6u);
  EXPECT_EQ(ops.face_block, 4u);
  EXPECT_EQ(ops.n_faces, 4u);
  EXPECT_EQ(ops.local_size, 22u);
  EXPECT_EQ(ops.grad_sym.rows(), 9);
  EXPECT_EQ(ops.grad_sym.cols(), 22);
  EXPECT_EQ(ops.divergence.rows(), 3);
  EXPECT_EQ(ops.reconstruction.rows(), 12);
  ASSERT_EQ(ops.face_residual.size(), 4u);
  EXPECT_EQ(ops.face_residual[0].rows(), 4);
  EXPECT_EQ(ops.face_residual[0].cols(), 22);
  EXPECT_GE(ops.cell_rule.exactness, 4);
  EXPECT_GE(ops.cell_rule_nl.exactness, 6);
  const auto boosted = ps::build_element_operators(mesh, 0, 1, 2.0, 8);
  EXPECT_GE(boosted.cell_rule_nl.exactness, 14);
  EXPECT_GT(boosted.cell_rule_nl.size(), ops.cell_rule_nl.size());

  EXPECT_THROW(ps::build_element_operators(mesh, 0, 0, 2.0), std::invalid_argument);
  EXPECT_THROW(ps::build_element_operators(mesh, 0, 1, 1.0), std::invalid_argument);
}

TEST(ElementOperatorsBuild, DegenerateCellRejected) {
  // Nonconvex chevron whose centroid lies outside: quadrature construction
  // must refuse the inverted centroid-fan triangle.
  const ps::Mesh mesh = ps::Mesh::build(
      {{0.0, 0.0}, {4.0, 0.0}, {2.0, 0.4}, {2.2, 2.0}, {1.8, 2.0}}, {{0, 1, 2, 3, 4}}, "chevron");
  EXPECT_THROW(ps::build_element_operators(mesh, 0, 1, 2.0), std::runtime_error);
}

TEST(ElementOperatorsBuild, ConstantInterpolantAnnihilated) {
  for (const ps::Mesh& mesh : {ps::generate_cartesian(2), ps::generate_distorted_cartesian(2, 0.2),
                               ps::generate_distorted_triangular(2, 0.15)}) {
    for (int k : {1, 2}) {
      const std::size_t c = mesh.n_cells() / 2;
      const auto ops = ps::build_element_operators(mesh, c, k, 1.5);
      const auto v = ps::interpolate([](const Vec2&) { return Vec2(0.7, -0.3); }, mesh, c, k);
      EXPECT_LE((ops.grad_sym * v.data).norm(), 1e-11);
      EXPECT_LE((ops.divergence * v.data).norm(), 1e-11);
      for (const MatX& d : ops.face_residual) EXPECT_LE((d * v.data).norm(), 1e-11);
    }
  }
}

TEST(ElementOperatorsBuild, RigidRotationGradientFreeAndReconstructed) {
  ps::Rng rng(7);
  for (const ps::Mesh& mesh : {ps::generate_cartesian(2), ps::generate_distorted_cartesian(3, 0.2),
                               ps::generate_distorted_triangular(2, 0.15)}) {
    for (std::size_t c : {std::size_t{0}, mesh.n_cells() - 1}) {
      const auto ops = ps::build_element_operators(mesh, c, 1, 2.0);
      const auto v =
          ps::interpolate([](const Vec2& x) { return Vec2(-x.y(), x.x()); }, mesh, c, 1);
      EXPECT_LE((ops.grad_sym * v.data).norm(), 1e-12);
      const VecX rec = ops.reconstruction * v.data;
      for (int trial = 0; trial < 10; trial++) {
        const Vec2 x = random_bbox_point(mesh, c, rng);
        const VecX phi1 = ops.basis_k1.eval(x);
        EXPECT_NEAR(phi1.dot(rec.head(ops.n_k1)), -x.y(), 1e-12);
        EXPECT_NEAR(phi1.dot(rec.tail(ops.n_k1)), x.x(), 1e-12);
      }
    }
  }
}

TEST(ElementOperatorsBuild, QuadraticFieldMatchesDenseProjectionOracle) {
  // w = (x^2, x y) on the unit square, k = 1. The symmetric-gradient
  // reconstruction of the interpolant must match the L2 projection of
  // grad_s w = [[2x, y/2], [y/2, x]], computed here by an independent dense
  // least-squares fit using composite-Simpson tensor quadrature.
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const auto ops = ps::build_element_operators(mesh, 0, 1, 2.0);
  const auto v = ps::interpolate([](const Vec2& x) { return Vec2(x.x() * x.x(), x.x() * x.y()); },
                                 mesh, 0, 1);
  const VecX g = ops.grad_sym * v.data;

  // Voigt components of grad_s w.
  const auto target = [](const Vec2& x) {
    return Vec3(2 * x.x(), x.x(), x.y() / std::numbers::sqrt2);
  };
  const int n = 80;  // Simpson panels per direction; integrands are cubic, so exact
  const auto s_weight = [n](int i) {
    if (i == 0 || i == n) return 1.0;
    return i % 2 == 1 ? 4.0 : 2.0;
  };
  MatX gram = MatX::Zero(3, 3);
  MatX rhs = MatX::Zero(3, 3);  // column m: moments of target component m
  for (int i = 0; i <= n; i++) {
    for (int j = 0; j <= n; j++) {
      const Vec2 x(static_cast<double>(i) / n, static_cast<double>(j) / n);
      const double w = s_weight(i) * s_weight(j) / (9.0 * n * n);
      const VecX phi = ops.basis_k.eval(x);
      gram += w * phi * phi.transpose();
      rhs += w * phi * target(x).transpose();
    }
  }
  const MatX oracle = gram.ldlt().solve(rhs);  // column m = projection of component m
  for (int m = 0; m < 3; m++) {
    EXPECT_LE((g.segment(m * 3, 3) - oracle.col(m)).norm(), 1e-11)
        << "Voigt component " << m;
  }
  for (const MatX& d : ops.face_residual) EXPECT_LE((d * v.data).norm(), 1e-11);
}

TEST(ElementOperatorsBuild, DivergenceEqualsTraceOfGradient) {
  for (const ps::Mesh& mesh :
       {ps::generate_distorted_cartesian(3, 0.25), ps::generate_distorted_triangular(2, 0.2)}) {
    for (int k : {1, 2}) {
      const auto ops = ps::build_element_operators(mesh, 1, k, 1.75);
      const MatX trace =
          ops.grad_sym.topRows(ops.n_k) + ops.grad_sym.middleRows(ops.n_k, ops.n_k);
      EXPECT_LE((ops.divergence - trace).norm(), 1e-12 * (1 + trace.norm()));
    }
  }
}

// ---------------------------------------------------------------------------
// interpolate

TEST(Interpolate, ConstantField) {
  const ps::Mesh mesh = ps::generate_distorted_cartesian(2, 0.15);
  const Vec2 c(2.5, -1.25);
  const auto v = ps::interpolate([&](const Vec2&) { return c; }, mesh, 1, 1);
  const ps::CellBasis basis(mesh, 1, 1);
  ps::Rng rng(3);
  for (int trial = 0; trial < 5; trial++) {
    const Vec2 x = random_bbox_point(mesh, 1, rng);
    const VecX phi = basis.eval(x);
    EXPECT_NEAR(phi.dot(v.data.segment(0, 3)), c.x(), 1e-13);
    EXPECT_NEAR(phi.dot(v.data.segment(3, 3)), c.y(), 1e-13);
  }
  for (std::size_t f = 0; f < 4; f++) {
    const ps::FaceBasis fb(mesh, mesh.cell(1).faces[f], 1);
    const Vec2 x = mesh.face(mesh.cell(1).faces[f]).midpoint;
    const VecX psi = fb.eval(x);
    const auto face = v.data.segment(v.cell_block() + f * v.face_block(), v.face_block());
    EXPECT_NEAR(psi.dot(face.head(2)), c.x(), 1e-13);
    EXPECT_NEAR(psi.dot(face.tail(2)), c.y(), 1e-13);
  }
}

TEST(Interpolate, PolynomialReproductionAtRandomPoints) {
  ps::Rng rng(11);
  for (const ps::Mesh& mesh :
       {ps::generate_cartesian(2), ps::generate_distorted_triangular(2, 0.15)}) {
    for (int k : {1, 2}) {
      const std::size_t c = 0;
      const PolyField p = PolyField::random(k, rng);
      const auto v = ps::interpolate([&p](const Vec2& x) { return p(x); }, mesh, c, k);
      const ps::CellBasis basis(mesh, c, k);
      const std::size_t n_k = ps::cell_basis_size(k);
      for (int trial = 0; trial < 20; trial++) {
        const Vec2 x = random_bbox_point(mesh, c, rng);
        const VecX phi = basis.eval(x);
        const Vec2 exact = p(x);
        const double scale = 1 + exact.norm();
        EXPECT_NEAR(phi.dot(v.data.segment(0, n_k)), exact.x(), 1e-12 * scale);
        EXPECT_NEAR(phi.dot(v.data.segment(n_k, n_k)), exact.y(), 1e-12 * scale);
      }
      // Face blocks reproduce the trace along each face.
      for (std::size_t lf = 0; lf < mesh.cell(c).faces.size(); lf++) {
        const std::size_t face_id = mesh.cell(c).faces[lf];
        const ps::FaceBasis fb(mesh, face_id, k);
        const Vec2 a = mesh.vertex(mesh.face(face_id).vertices[0]);
        const Vec2 b = mesh.vertex(mesh.face(face_id).vertices[1]);
        const auto face = v.data.segment(v.cell_block() + lf * v.face_block(), v.face_block());
        for (double t : {0.2, 0.7}) {
          const Vec2 x = a + t * (b - a);
          const VecX psi = fb.eval(x);
          const Vec2 exact = p(x);
          const double scale = 1 + exact.norm();
          EXPECT_NEAR(psi.dot(face.head(k + 1)), exact.x(), 1e-12 * scale);
          EXPECT_NEAR(psi.dot(face.tail(k + 1)), exact.y(), 1e-12 * scale);
        }
      }
    }
  }
}

TEST(Interpolate, FaceBlockMatchesFineGridLeastSquares) {
  // Non-polynomial field on a cell of the n = 4 grid; the face block must
  // match a dense least-squares fit over a fine 1D grid (composite Simpson).
  const ps::Mesh mesh = ps::generate_cartesian(4);
  const std::size_t c = 5;
  const int k = 2;
  const auto v = ps::interpolate(smooth_velocity, mesh, c, k);
  for (std::size_t lf = 0; lf < mesh.cell(c).faces.size(); lf++) {
    const std::size_t face_id = mesh.cell(c).faces[lf];
    const ps::FaceBasis fb(mesh, face_id, k);
    const Vec2 a = mesh.vertex(mesh.face(face_id).vertices[0]);
    const Vec2 b = mesh.vertex(mesh.face(face_id).vertices[1]);
    const int n = 800;  // Simpson panels
    MatX gram = MatX::Zero(k + 1, k + 1);
    MatX rhs = MatX::Zero(k + 1, 2);
    for (int i = 0; i <= n; i++) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      const Vec2 x = a + (static_cast<double>(i) / n) * (b - a);
      const VecX psi = fb.eval(x);
      gram += (w / (3.0 * n)) * psi * psi.transpose();
      rhs += (w / (3.0 * n)) * psi * smooth_velocity(x).transpose();
    }
    const MatX oracle = gram.ldlt().solve(rhs);
    const auto face = v.data.segment(v.cell_block() + lf * v.face_block(), v.face_block());
    EXPECT_LE((face.head(k + 1) - oracle.col(0)).norm(), 1e-10);
    EXPECT_LE((face.tail(k + 1) - oracle.col(1)).norm(), 1e-10);
  }
}

// ---------------------------------------------------------------------------
// local_energy_seminorm

TEST(EnergySeminorm, ConstantIsZeroAndLinearFieldFrozen) {
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const auto ops = ps::build_element_operators(mesh, 0, 1, 2.0);
  const auto c = ps::interpolate([](const Vec2&) { return Vec2(1.0, 2.0); }, mesh, 0, 1);
  EXPECT_LE(ps::local_energy_seminorm(ops, c, 2.0), 1e-13);

  // v = (x, -y): grad_s = diag(1, -1), |grad_s| = sqrt(2); conforming faces.
  const auto v = ps::interpolate([](const Vec2& x) { return Vec2(x.x(), -x.y()); }, mesh, 0, 1);
  EXPECT_NEAR(ps::local_energy_seminorm(ops, v, 2.0), std::numbers::sqrt2, 1e-12);
}

TEST(EnergySeminorm, PositiveHomogeneityAndRigidMotionKernel) {
  const ps::Mesh mesh = ps::generate_distorted_triangular(2, 0.15);
  ps::Rng rng(21);
  for (double r : {1.5, 2.75}) {
    const auto ops = ps::build_element_operators(mesh, 3, 1, r);
    auto v = random_local(ops, rng);
    const double base = ps::local_energy_seminorm(ops, v, r);
    EXPECT_GT(base, 0.0);
    auto v2 = v;
    v2.data *= 2.0;
    EXPECT_NEAR(ps::local_energy_seminorm(ops, v2, r), 2.0 * base, 1e-12 * base);

    const auto rigid = ps::interpolate(
        [](const Vec2& x) { return Vec2(0.4 - 1.3 * x.y(), -0.2 + 1.3 * x.x()); }, mesh, 3, 1);
    EXPECT_LE(ps::local_energy_seminorm(ops, rigid, r), 1e-11);
  }
}

// ---------------------------------------------------------------------------
// stab_residual_energy

TEST(StabEnergy, PolynomialConsistency) {
  ps::Rng rng(31);
  for (const ps::Mesh& mesh :
       {ps::generate_cartesian(2), ps::generate_distorted_cartesian(3, 0.2),
        ps::generate_distorted_triangular(2, 0.15)}) {
    for (int k : {1, 2}) {
      for (double r : {1.5, 2.0, 2.75}) {
        const std::size_t c = mesh.n_cells() / 2;
        const auto ops = ps::build_element_operators(mesh, c, k, r);
        for (int trial = 0; trial < 3; trial++) {
          const PolyField p = PolyField::random(k + 1, rng);
          const auto v = ps::interpolate([&p](const Vec2& x) { return p(x); }, mesh, c, k);
          const double scale = 1 + std::pow(v.data.norm(), r);
          EXPECT_LE(ps::stab_residual_energy(ops, v, r), 1e-12 * scale);
        }
        const auto constant =
            ps::interpolate([](const Vec2&) { return Vec2(0.3, 0.9); }, mesh, c, k);
        EXPECT_LE(ps::stab_residual_energy(ops, constant, r), 1e-13);
      }
    }
  }
}

TEST(StabEnergy, MatchesFineGridFaceOracle) {
  // Smooth non-polynomial interpolant on the unit-square cell; compare the
  // quadrature used internally (heavily boosted: |delta| nearly vanishes
  // inside each face here, so |delta|^r has an interior kink) against an
  // independent composite two-point Gauss evaluation on a fine grid per face.
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const double r = 1.75;
  const auto ops = ps::build_element_operators(mesh, 0, 1, r, 400);
  const auto v = ps::interpolate(smooth_velocity, mesh, 0, 1);
  const double energy = ps::stab_residual_energy(ops, v, r);

  double oracle = 0.0;
  for (std::size_t f = 0; f < ops.n_faces; f++) {
    const VecX d = ops.face_residual[f] * v.data;
    const ps::FaceBasis& fb = ops.face_bases[f];
    oracle += face_composite_gauss(
        mesh, mesh.cell(0).faces[f],
        [&](const Vec2& x) {
          const VecX psi = fb.eval(x);
          return std::pow(Vec2(psi.dot(d.head(2)), psi.dot(d.tail(2))).norm(), r);
        },
        2000);
  }
  ASSERT_GT(oracle, 0.0);
  EXPECT_NEAR(energy, oracle, 1e-8 * oracle);
}

// ---------------------------------------------------------------------------
// local_viscous_residual

TEST(ViscousResidual, NewtonianSymmetricBilinear) {
  const ps::Mesh mesh = ps::generate_distorted_cartesian(3, 0.2);
  const auto ops = ps::build_element_operators(mesh, 4, 1, 2.0);
  ps::FlowLaw law;  // newtonian, mu = 1 => admissible gamma interval is {1}
  ps::Rng rng(41);
  for (int trial = 0; trial < 20; trial++) {
    const auto w = random_local(ops, rng);
    const auto v = random_local(ops, rng);
    const double awv = ps::local_viscous_residual(ops, law, 1.0, w, v);
    const double avw = ps::local_viscous_residual(ops, law, 1.0, v, w);
    EXPECT_NEAR(awv, avw, 1e-12 * (1 + std::abs(awv)));
  }
}

TEST(ViscousResidual, ZeroStateGivesZeroResidual) {
  const ps::Mesh mesh = ps::generate_distorted_triangular(2, 0.15);
  for (const ps::FlowLaw law :
       {ps::FlowLaw{}, ps::FlowLaw{.kind = ps::LawKind::power_law, .r = 1.5},
        ps::FlowLaw{.kind = ps::LawKind::carreau_yasuda, .delta = 1.0, .a = 2.0, .r = 2.5}}) {
    const auto ops = ps::build_element_operators(mesh, 2, 1, law.r);
    const auto zero = ps::LocalVector::zero(1, ops.n_faces);
    const auto constants = ps::law_constants(law);
    const double gamma = std::sqrt(constants.sigma_sm * constants.sigma_hc);
    EXPECT_LE(ps::local_viscous_residual_vector(ops, law, gamma, zero).norm(), 1e-14);
  }
}

TEST(ViscousResidual, PowerLawFrozenValue) {
  // w = interpolant of (x, -y) on the unit square: G w = diag(1, -1) exactly,
  // face residuals vanish, so a(w, w) = integral |diag(1,-1)|^r = 2^(r/2).
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const ps::FlowLaw law{.kind = ps::LawKind::power_law, .r = 1.5};
  const auto ops = ps::build_element_operators(mesh, 0, 1, law.r);
  const auto w = ps::interpolate([](const Vec2& x) { return Vec2(x.x(), -x.y()); }, mesh, 0, 1);
  const double gamma = ps::law_constants(law).sigma_sm;
  const double value = ps::local_viscous_residual(ops, law, gamma, w, w);
  EXPECT_NEAR(value, std::pow(2.0, 0.75), 1e-12);
}

TEST(ViscousResidual, GammaOutsideAdmissibleIntervalThrows) {
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const ps::FlowLaw law{.kind = ps::LawKind::power_law, .r = 1.5};
  const auto constants = ps::law_constants(law);
  const auto ops = ps::build_element_operators(mesh, 0, 1, law.r);
  const auto w = ps::LocalVector::zero(1, 4);
  EXPECT_NO_THROW(ps::local_viscous_residual_vector(ops, law, constants.sigma_sm, w));
  EXPECT_NO_THROW(ps::local_viscous_residual_vector(ops, law, constants.sigma_hc, w));
  try {
    ps::local_viscous_residual_vector(ops, law, 0.99 * constants.sigma_sm, w);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("admissible interval"), std::string::npos);
  }
  EXPECT_THROW(ps::local_viscous_residual_vector(ops, law, 1.01 * constants.sigma_hc, w),
               std::invalid_argument);
  EXPECT_THROW(ps::local_viscous_tangent(ops, law, 1.01 * constants.sigma_hc, w),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// local_viscous_tangent

TEST(ViscousTangent, NewtonianTangentIsStateIndependentBilinearForm) {
  const ps::Mesh mesh = ps::generate_distorted_cartesian(3, 0.2);
  const auto ops = ps::build_element_operators(mesh, 4, 1, 2.0);
  const ps::FlowLaw law;
  ps::Rng rng(51);
  const auto w1 = random_local(ops, rng);
  const auto w2 = random_local(ops, rng);
  const MatX m1 = ps::local_viscous_tangent(ops, law, 1.0, w1);
  const MatX m2 = ps::local_viscous_tangent(ops, law, 1.0, w2);
  EXPECT_LE((m1 - m2).norm(), 1e-12 * m1.norm());
  // Residual is exactly the bilinear action for the linear law.
  const VecX res = ps::local_viscous_residual_vector(ops, law, 1.0, w1);
  EXPECT_LE((res - m1 * w1.data).norm(), 1e-12 * (1 + res.norm()));
}

TEST(ViscousTangent, MatchesDirectionalFiniteDifferences) {
  const ps::Mesh mesh = ps::generate_distorted_cartesian(3, 0.2);
  ps::Rng rng(61);
  for (double r : {1.75, 2.5}) {
    const ps::FlowLaw law{.kind = ps::LawKind::power_law, .r = r};
    const auto constants = ps::law_constants(law);
    const double gamma = std::sqrt(constants.sigma_sm * constants.sigma_hc);
    const auto ops = ps::build_element_operators(mesh, 4, 1, r);
    auto w = ps::interpolate(smooth_velocity, mesh, 4, 1);
    for (Eigen::Index i = 0; i < w.data.size(); i++) w.data(i) += 0.05 * rng.normal();
    w.data /= w.data.norm();
    const MatX tangent = ps::local_viscous_tangent(ops, law, gamma, w);
    const double eps = 1e-6;
    for (int dir = 0; dir < 5; dir++) {
      auto z = random_local(ops, rng);
      z.data /= z.data.norm();
      ps::LocalVector wp = w, wm = w;
      wp.data += eps * z.data;
      wm.data -= eps * z.data;
      const VecX fd = (ps::local_viscous_residual_vector(ops, law, gamma, wp) -
                       ps::local_viscous_residual_vector(ops, law, gamma, wm)) /
                      (2 * eps);
      const VecX lin = tangent * z.data;
      EXPECT_LE((fd - lin).norm(), 1e-5 * (1 + lin.norm())) << "r = " << r << " dir " << dir;
    }
  }
}

TEST(ViscousTangent, SymmetricAndFiniteAtZeroState) {
  const ps::Mesh mesh = ps::generate_distorted_triangular(2, 0.15);
  ps::Rng rng(71);
  for (double r : {1.5, 2.5}) {
    const ps::FlowLaw law{.kind = ps::LawKind::power_law, .r = r};
    const auto constants = ps::law_constants(law);
    const double gamma = std::sqrt(constants.sigma_sm * constants.sigma_hc);
    const auto ops = ps::build_element_operators(mesh, 3, 1, r);
    const auto w = random_local(ops, rng);
    const MatX m = ps::local_viscous_tangent(ops, law, gamma, w);
    EXPECT_LE((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-10 * m.cwiseAbs().maxCoeff());

    const auto zero = ps::LocalVector::zero(1, ops.n_faces);
    const MatX mz = ps::local_viscous_tangent(ops, law, gamma, zero);
    EXPECT_TRUE(mz.allFinite()) << "r = " << r;
  }
}

// ---------------------------------------------------------------------------
// local_divergence_coupling

TEST(DivergenceCoupling, DivergenceFreeFieldDecouples) {
  const ps::Mesh mesh = ps::generate_distorted_cartesian(2, 0.15);
  const auto ops = ps::build_element_operators(mesh, 1, 1, 2.0);
  const auto v = ps::interpolate([](const Vec2& x) { return Vec2(x.x(), -x.y()); }, mesh, 1, 1);
  EXPECT_LE((ops.divergence * v.data).norm(), 1e-12);
  ps::Rng rng(81);
  for (int trial = 0; trial < 5; trial++) {
    VecX q(ops.n_k);
    for (Eigen::Index i = 0; i < q.size(); i++) q(i) = rng.normal();
    EXPECT_NEAR(ps::local_divergence_coupling(ops, v, q), 0.0, 1e-12);
  }
}

TEST(DivergenceCoupling, ExpansionFieldFrozenValue) {
  // v = (x, y) has div = 2; with q = 1 the coupling is -2 |T| = -2.
  const ps::Mesh mesh = ps::generate_cartesian(1);
  const auto ops = ps::build_element_operators(mesh, 0, 1, 2.0);
  const auto v = ps::interpolate([](const Vec2& x) { return Vec2(x.x(), x.y()); }, mesh, 0, 1);
  VecX q = VecX::Zero(ops.n_k);
  q(0) = 1.0;  // the constant basis function is identically one
  EXPECT_NEAR(ps::local_divergence_coupling(ops, v, q), -2.0, 1e-12);
  EXPECT_THROW(ps::local_divergence_coupling(ops, v, VecX::Zero(ops.n_k + 1)),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Invariants

TEST(Properties, CommutationWithProjectedGradients) {
  // G(interpolant of v) = projection of grad_s v, and likewise for the
  // divergence, for random polynomial fields of degree <= k+1.
  ps::Rng rng(91);
  for (const ps::Mesh& mesh :
       {ps::generate_cartesian(2), ps::generate_distorted_cartesian(3, 0.25),
        ps::generate_distorted_triangular(2, 0.2)}) {
    for (int k : {1, 2}) {
      std::map<std::size_t, ps::ElementOperators> cache;
      for (int trial = 0; trial < 50; trial++) {
        const std::size_t c = trial % mesh.n_cells();
        if (!cache.count(c)) cache.emplace(c, ps::build_element_operators(mesh, c, k, 2.0));
        const auto& ops = cache.at(c);
        const PolyField p = PolyField::random(k + 1, rng);
        const auto v = ps::interpolate([&p](const Vec2& x) { return p(x); }, mesh, c, k);
        const VecX g = ops.grad_sym * v.data;
        VecX ref(3 * ops.n_k);
        ref.segment(0, ops.n_k) = ps::l2_project_cell(
            [&p](const Vec2& x) { return p.grad(x)(0, 0); }, mesh, c, k);
        ref.segment(ops.n_k, ops.n_k) = ps::l2_project_cell(
            [&p](const Vec2& x) { return p.grad(x)(1, 1); }, mesh, c, k);
        ref.segment(2 * ops.n_k, ops.n_k) = ps::l2_project_cell(
            [&p](const Vec2& x) {
              const Mat2 gr = p.grad(x);
              return (gr(0, 1) + gr(1, 0)) / std::numbers::sqrt2;
            },
            mesh, c, k);
        EXPECT_LE((g - ref).norm(), 1e-11 * (1 + ref.norm()));

        const VecX d = ops.divergence * v.data;
        const VecX dref = ps::l2_project_cell(
            [&p](const Vec2& x) { return p.grad(x).trace(); }, mesh, c, k);
        EXPECT_LE((d - dref).norm(), 1e-11 * (1 + dref.norm()));
      }
    }
  }
}

TEST(Properties, ReconstructionReproducesAllPolynomials) {
  // R(interpolant of w) = w for every monomial field of degree <= k+1.
  ps::Rng rng(101);
  for (const ps::Mesh& mesh :
       {ps::generate_cartesian(2), ps::generate_distorted_cartesian(3, 0.25),
        ps::generate_distorted_triangular(2, 0.2)}) {
    for (int k : {1, 2}) {
      const std::size_t c = mesh.n_cells() / 2;
      const auto ops = ps::build_element_operators(mesh, c, k, 2.0);
      for (int deg = 0; deg <= k + 1; deg++) {
        for (int i = 0; i <= deg; i++) {
          for (int comp = 0; comp < 2; comp++) {
            const int px = i, py = deg - i;
            const auto w = [px, py, comp](const Vec2& x) {
              const double m = PolyField::mono(x.x(), px) * PolyField::mono(x.y(), py);
              return comp == 0 ? Vec2(m, 0.0) : Vec2(0.0, m);
            };
            const auto v = ps::interpolate(w, mesh, c, k);
            const VecX rec = ops.reconstruction * v.data;
            for (int trial = 0; trial < 30; trial++) {
              const Vec2 x = random_bbox_point(mesh, c, rng);
              const VecX phi1 = ops.basis_k1.eval(x);
              const Vec2 exact = w(x);
              const double scale = 1 + exact.norm();
              EXPECT_NEAR(phi1.dot(rec.head(ops.n_k1)), exact.x(), 1e-10 * scale)
                  << "x^" << px << " y^" << py << " comp " << comp;
              EXPECT_NEAR(phi1.dot(rec.tail(ops.n_k1)), exact.y(), 1e-10 * scale)
                  << "x^" << px << " y^" << py << " comp " << comp;
            }
          }
        }
      }
    }
  }
}

TEST(Properties, StabilityRatioStableUnderRefinement) {
  // (|G v|^r_{L^r} + s_T(v,v)) / |v|^r_{energy} stays in a positive interval
  // that does not degrade by more than 10% across refinement levels.
  const int k = 1;
  for (double r : {1.5, 2.0, 2.75}) {
    for (int family = 0; family < 3; family++) {
      const auto make_mesh = [family](std::size_t n) {
        switch (family) {
          case 0: return ps::generate_cartesian(n);
          case 1: return ps::generate_distorted_cartesian(n, 0.25);
          default: return ps::generate_distorted_triangular(n, 0.2);
        }
      };
      double base_min = 0.0, base_max = 0.0;
      bool first = true;
      for (std::size_t n : {std::size_t{4}, std::size_t{8}, std::size_t{16}}) {
        const ps::Mesh mesh = make_mesh(n);
        ps::Rng rng(99);  // same coefficient ensemble at every level
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        const std::size_t samples = first ? 16 : 10;
        for (std::size_t s = 0; s < samples; s++) {
          const std::size_t c = (s * mesh.n_cells()) / samples;
          const auto ops = ps::build_element_operators(mesh, c, k, r);
          for (int trial = 0; trial < 4; trial++) {
            const auto v = random_local(ops, rng);
            const double denom = std::pow(ps::local_energy_seminorm(ops, v, r), r);
            ASSERT_GT(denom, 0.0);
            const double ratio =
                (grad_lr_energy(ops, v, r) + ps::stab_residual_energy(ops, v, r)) / denom;
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
          }
        }
        EXPECT_GT(lo, 0.0) << "family " << family << " r " << r << " n " << n;
        if (first) {
          base_min = lo;
          base_max = hi;
          first = false;
        } else {
          EXPECT_GE(lo, 0.9 * base_min) << "family " << family << " r " << r << " n " << n;
          EXPECT_LE(hi, 1.1 * base_max) << "family " << family << " r " << r << " n " << n;
        }
      }
    }
  }
}

TEST(Properties, StabilizationStrongMonotonicity) {
  // (s_T(u, e) - s_T(w, e)) >= 0 with e = u - w, vanishing only when the face
  // residual of e vanishes.
  ps::Rng rng(111);
  for (double r : {1.5, 2.0, 2.75}) {
    for (const ps::Mesh& mesh :
         {ps::generate_distorted_cartesian(3, 0.2), ps::generate_distorted_triangular(2, 0.15)}) {
      const std::size_t c = mesh.n_cells() / 2;
      const auto ops = ps::build_element_operators(mesh, c, 1, r);
      for (int trial = 0; trial < 100; trial++) {
        const auto u = random_local(ops, rng);
        const auto w = random_local(ops, rng);
        auto e = u;
        e.data = u.data - w.data;
        const double su = ps::local_stabilization_form(ops, r, u, e);
        const double sw = ps::local_stabilization_form(ops, r, w, e);
        const double scale = std::abs(su) + std::abs(sw) + 1e-30;
        EXPECT_GE(su - sw, -1e-12 * scale);
        if (su - sw <= 1e-12 * scale) {
          double residual = 0.0;
          for (const MatX& d : ops.face_residual) residual += (d * e.data).norm();
          EXPECT_LE(residual, 1e-10);
        }
      }
      // Pairs differing by a P^{k+1} interpolant have zero gap by consistency.
      for (int trial = 0; trial < 10; trial++) {
        const auto w = random_local(ops, rng);
        const PolyField p = PolyField::random(2, rng);
        const auto shift = ps::interpolate([&p](const Vec2& x) { return p(x); }, mesh, c, 1);
        auto u = w;
        u.data = w.data + shift.data;
        auto e = u;
        e.data = u.data - w.data;
        const double gap = ps::local_stabilization_form(ops, r, u, e) -
                           ps::local_stabilization_form(ops, r, w, e);
        EXPECT_LE(std::abs(gap), 1e-11 * (1 + w.data.norm()));
      }
    }
  }
}
