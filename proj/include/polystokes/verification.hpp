#pragma once

// Verification harness: discrete error norms against interpolated exact
// solutions, convergence studies with computed orders and CSV/gnuplot output,
// and stability studies (discrete Korn ratio, inf-sup constant for r = 2).

#include <polystokes/assembly.hpp>
#include <polystokes/manufactured.hpp>
#include <polystokes/newton.hpp>
#include <polystokes/rng.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace polystokes {

enum class MeshFamily { cartesian, distorted_cartesian, distorted_triangular };

inline std::string family_name(MeshFamily family) {
  switch (family) {
    case MeshFamily::cartesian: return "cartesian";
    case MeshFamily::distorted_cartesian: return "distorted_cartesian";
    case MeshFamily::distorted_triangular: return "distorted_triangular";
  }
  throw std::logic_error("family_name: unreachable");
}

inline MeshFamily parse_mesh_family(const std::string& name) {
  if (name == "cartesian") return MeshFamily::cartesian;
  if (name == "distorted_cartesian") return MeshFamily::distorted_cartesian;
  if (name == "distorted_triangular") return MeshFamily::distorted_triangular;
  throw std::invalid_argument("unknown mesh family '" + name +
                              "' (expected cartesian, distorted_cartesian, or "
                              "distorted_triangular)");
}

/// Canonical distortion amplitude for the built-in non-Cartesian families.
inline constexpr double default_distortion = 0.15;

inline Mesh make_family_mesh(MeshFamily family, std::size_t n,
                             double amplitude = default_distortion) {
  switch (family) {
    case MeshFamily::cartesian: return generate_cartesian(n);
    case MeshFamily::distorted_cartesian: return generate_distorted_cartesian(n, amplitude);
    case MeshFamily::distorted_triangular: return generate_distorted_triangular(n, amplitude);
  }
  throw std::logic_error("make_family_mesh: unreachable");
}

/// Componentwise L2 projection of a scalar field onto the broken pressure
/// space; coefficients in per-cell blocks.
inline VecX project_pressure(const DiscreteProblem& problem,
                             const std::function<double(const Vec2&)>& pressure) {
  const DofLayout& layout = problem.layout;
  const int rhs_exactness = 2 * layout.k + 6 + problem.quad_boost;
  VecX coeffs(layout.n_cells * layout.pressure_block);
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    coeffs.segment(c * layout.pressure_block, layout.pressure_block) =
        l2_project_cell(pressure, problem.mesh, c, layout.k, rhs_exactness);
  }
  return coeffs;
}

/// ||u_h - I_h u||_{eps,r,h}: the broken energy norm of the difference between
/// the discrete velocity and the interpolate of the exact one.
inline double error_velocity(const DiscreteProblem& problem, const DiscreteState& state,
                             const VectorField& exact_velocity) {
  detail::check_state(problem, state, "error_velocity");
  const std::size_t nv = problem.layout.velocity_size();
  VecX diff = VecX::Zero(problem.layout.total_size());
  diff.head(nv) = state.full.head(nv) - interpolate_global(problem, exact_velocity).head(nv);
  return global_energy_norm(problem, diff);
}

/// ||p_h - pi_h p||_{L^{r'}} with r' the conjugate exponent of the law.
inline double error_pressure(const DiscreteProblem& problem, const DiscreteState& state,
                             const std::function<double(const Vec2&)>& exact_pressure) {
  detail::check_state(problem, state, "error_pressure");
  const DofLayout& layout = problem.layout;
  const VecX projected = project_pressure(problem, exact_pressure);
  const double rc = problem.law.r_conj();
  double acc = 0.0;
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    const ElementOperators& ops = problem.ops[c];
    const VecX diff =
        state.full.segment(layout.pressure_offset(c), layout.pressure_block) -
        projected.segment(c * layout.pressure_block, layout.pressure_block);
    for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
      const double value = ops.basis_k.eval(ops.cell_rule_nl.points[q]).dot(diff);
      acc += ops.cell_rule_nl.weights(q) * std::pow(std::abs(value), rc);
    }
  }
  return std::pow(acc, 1.0 / rc);
}

/// max |b_h(v_h, q)| over all cells and pressure basis functions: the
/// incompressibility residual of the discrete velocity.
inline double max_divergence_residual(const DiscreteProblem& problem,
                                      const DiscreteState& state) {
  detail::check_state(problem, state, "max_divergence_residual");
  double worst = 0.0;
  for (std::size_t c = 0; c < problem.layout.n_cells; c++) {
    const LocalVector w = problem.layout.gather(problem.mesh, c, state.full);
    const VecX values = problem.ops[c].coupling * w.data;
    worst = std::max(worst, values.cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Convergence studies

struct ConvergenceSetup {
  MeshFamily family = MeshFamily::cartesian;
  std::vector<std::size_t> levels = {4, 8, 16, 32};
  int k = 1;
  FlowLaw law;
  double gamma = -1.0;  // negative selects the default stabilization weight
  int quad_boost = 0;
  unsigned threads = 1;
  double amplitude = default_distortion;
  NewtonConfig newton;
};

struct ConvergenceLevel {
  std::size_t n = 0;
  double h = 0.0;
  double err_vel = std::numeric_limits<double>::quiet_NaN();
  double err_pre = std::numeric_limits<double>::quiet_NaN();
  double eoc_vel = std::numeric_limits<double>::quiet_NaN();  // vs previous level
  double eoc_pre = std::numeric_limits<double>::quiet_NaN();
  int newton_iters = 0;
  bool converged = false;
  // Incompressibility at the solution: max |b_h(u_h, q)| over all pressure
  // basis functions, and the residual scale (1 + ||load||) it is judged by.
  double mass_residual = std::numeric_limits<double>::quiet_NaN();
  double residual_scale = 1.0;
};

struct ConvergenceReport {
  std::string family;
  int k = 1;
  double r = 2.0;
  std::vector<ConvergenceLevel> levels;
  // Log-log least-squares slopes over the converged levels (diagnostics; the
  // headline orders are the last-pair EOC values).
  double ls_slope_vel = std::numeric_limits<double>::quiet_NaN();
  double ls_slope_pre = std::numeric_limits<double>::quiet_NaN();

  std::string csv() const;
  std::string gnuplot_script(const std::string& csv_filename) const;
};

namespace detail {

inline std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.12e", value);
  return buffer;
}

inline std::string format_short(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%g", value);
  return buffer;
}

/// Least-squares slope of y against x; NaN with fewer than two points.
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); i++) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); i++) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return num / den;
}

}  // namespace detail

inline std::string ConvergenceReport::csv() const {
  std::string out = "family,k,r,n,h,err_vel,err_pre,eoc_vel,eoc_pre,newton_iters\n";
  for (const ConvergenceLevel& level : levels) {
    out += family + ',' + std::to_string(k) + ',' + detail::format_short(r) + ',' +
           std::to_string(level.n) + ',' + detail::format_double(level.h) + ',' +
           detail::format_double(level.err_vel) + ',' + detail::format_double(level.err_pre) +
           ',';
    out += std::isnan(level.eoc_vel) ? std::string() : detail::format_double(level.eoc_vel);
    out += ',';
    out += std::isnan(level.eoc_pre) ? std::string() : detail::format_double(level.eoc_pre);
    out += ',' + std::to_string(level.newton_iters) + '\n';
  }
  return out;
}

inline std::string ConvergenceReport::gnuplot_script(const std::string& csv_filename) const {
  std::string out;
  out += "# Convergence plot for family=" + family + " k=" + std::to_string(k) +
         " r=" + detail::format_short(r) + "\n";
  out += "set datafile separator \",\"\n";
  out += "set logscale xy\n";
  out += "set xlabel \"h\"\n";
  out += "set ylabel \"error\"\n";
  out += "set key left top\n";
  out += "set grid\n";
  out += "plot \"" + csv_filename + "\" every ::1 using 5:6 with linespoints title "
         "\"velocity\", \\\n     \"" + csv_filename +
         "\" every ::1 using 5:7 with linespoints title \"pressure\"\n";
  return out;
}

/// Solves the built-in reference case for `setup.law` on a refinement sequence
/// and fills errors and computed orders. A non-converged level is recorded
/// (errors NaN) and the study continues.
inline ConvergenceReport run_convergence(const ConvergenceSetup& setup) {
  if (setup.levels.size() < 2) {
    throw std::invalid_argument("run_convergence: need at least two levels");
  }
  const ReferenceCase ref = reference_case(setup.law);
  ConvergenceReport report;
  report.family = family_name(setup.family);
  report.k = setup.k;
  report.r = setup.law.r;

  for (std::size_t n : setup.levels) {
    const DiscreteProblem problem = DiscreteProblem::create(
        make_family_mesh(setup.family, n, setup.amplitude), setup.k, setup.law, ref.load,
        ref.velocity, setup.gamma, setup.quad_boost, setup.threads);
    const auto [state, newton_report] =
        newton_solve(problem, DiscreteState::zero(problem.layout), setup.newton);

    ConvergenceLevel level;
    level.n = n;
    level.h = problem.mesh.h();
    level.newton_iters = newton_report.iterations;
    level.converged = newton_report.converged;
    if (newton_report.converged) {
      level.err_vel = error_velocity(problem, state, ref.velocity);
      level.err_pre = error_pressure(problem, state, ref.pressure);
      level.mass_residual = max_divergence_residual(problem, state);
      level.residual_scale = 1.0 + problem.load_vector.norm();
      if (!report.levels.empty() && report.levels.back().converged) {
        const ConvergenceLevel& prev = report.levels.back();
        const double span = std::log(prev.h / level.h);
        if (prev.err_vel > 0.0 && level.err_vel > 0.0) {
          level.eoc_vel = std::log(prev.err_vel / level.err_vel) / span;
        }
        if (prev.err_pre > 0.0 && level.err_pre > 0.0) {
          level.eoc_pre = std::log(prev.err_pre / level.err_pre) / span;
        }
      }
    }
    report.levels.push_back(level);
  }

  for (std::size_t i = 1; i < report.levels.size(); i++) {
    if (!(report.levels[i].h < report.levels[i - 1].h)) {
      throw std::runtime_error("run_convergence: mesh sizes are not strictly decreasing");
    }
  }
  std::vector<double> lh, lv, lp;
  for (const ConvergenceLevel& level : report.levels) {
    if (!level.converged || !(level.err_vel > 0.0) || !(level.err_pre > 0.0)) continue;
    lh.push_back(std::log(level.h));
    lv.push_back(std::log(level.err_vel));
    lp.push_back(std::log(level.err_pre));
  }
  report.ls_slope_vel = detail::ls_slope(lh, lv);
  report.ls_slope_pre = detail::ls_slope(lh, lp);
  return report;
}

/// Writes `<stem>.csv` and `<stem>.gp` under `directory`; returns the CSV path.
inline std::filesystem::path write_convergence_files(const ConvergenceReport& report,
                                                     const std::filesystem::path& directory,
                                                     const std::string& stem) {
  std::filesystem::create_directories(directory);
  const std::filesystem::path csv_path = directory / (stem + ".csv");
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << report.csv();
  }
  const std::filesystem::path plot_path = directory / (stem + ".gp");
  std::ofstream plot(plot_path, std::ios::binary);
  if (!plot) throw std::runtime_error("cannot write " + plot_path.string());
  plot << report.gnuplot_script(csv_path.filename().string());
  return csv_path;
}

// ---------------------------------------------------------------------------
// Stability studies

struct KornLevel {
  std::size_t n = 0;
  double h = 0.0;
  double worst_ratio = 0.0;  // max over samples of the broken-Korn quotient
};

struct KornReport {
  std::string family;
  int k = 1;
  double r = 2.0;
  int samples = 0;
  unsigned seed = 0;
  std::vector<KornLevel> levels;
};

/// Discrete Korn study: for random members of the zero-boundary velocity
/// space, the quotient (||v||^r_{L^r} + |v|^r_{W^{1,r}(T_h)}) / ||v||^r_{eps,r,h}
/// must stay bounded under refinement. Deterministic for a fixed seed.
inline KornReport korn_study(MeshFamily family, const std::vector<std::size_t>& levels, int k,
                             double r, int samples, unsigned seed,
                             double amplitude = default_distortion) {
  FlowLaw law;
  law.kind = LawKind::power_law;
  law.r = r;
  law.validate();

  KornReport report;
  report.family = family_name(family);
  report.k = k;
  report.r = r;
  report.samples = samples;
  report.seed = seed;
  Rng rng(seed);

  for (std::size_t n : levels) {
    const DiscreteProblem problem = DiscreteProblem::create(
        make_family_mesh(family, n, amplitude), k, law, nullptr, nullptr);
    const DofLayout& layout = problem.layout;
    KornLevel level;
    level.n = n;
    level.h = problem.mesh.h();
    for (int sample = 0; sample < samples; sample++) {
      VecX full = VecX::Zero(layout.total_size());
      for (std::size_t i = 0; i < layout.boundary_start(); i++) {
        full(i) = rng.uniform(-1.0, 1.0);
      }
      double numerator = 0.0, denominator = 0.0;
      for (std::size_t c = 0; c < layout.n_cells; c++) {
        const ElementOperators& ops = problem.ops[c];
        const LocalVector v = layout.gather(problem.mesh, c, full);
        const auto head = v.data.head(2 * ops.n_k);
        for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
          const VecX phi = ops.basis_k.eval(ops.cell_rule_nl.points[q]);
          const MatX dphi = ops.basis_k.eval_grad(ops.cell_rule_nl.points[q]);
          const Vec2 value(phi.dot(head.head(ops.n_k)), phi.dot(head.tail(ops.n_k)));
          Mat2 grad;
          grad.row(0) = dphi.transpose() * head.head(ops.n_k);
          grad.row(1) = dphi.transpose() * head.tail(ops.n_k);
          numerator += ops.cell_rule_nl.weights(q) *
                       (std::pow(value.norm(), r) + std::pow(grad.norm(), r));
        }
        denominator += std::pow(local_energy_seminorm(ops, v, r), r);
      }
      if (denominator > 0.0) {
        level.worst_ratio = std::max(level.worst_ratio, numerator / denominator);
      }
    }
    report.levels.push_back(level);
  }
  return report;
}

struct InfSupLevel {
  std::size_t n = 0;
  double h = 0.0;
  double beta = 0.0;               // smallest nonzero generalized singular value
  double kernel_eigenvalue = 0.0;  // eigenvalue of the constant-pressure mode
};

struct InfSupReport {
  std::string family;
  int k = 1;
  std::vector<InfSupLevel> levels;
};

/// Inf-sup constants of the pressure-velocity coupling for r = 2: the smallest
/// generalized singular value of B restricted to zero-mean pressures, measured
/// against the discrete energy Gram on the zero-boundary velocity space and
/// the L2 pressure mass. Computed densely on the pressure space via
/// S = B N^{-1} B^T; the constant-pressure kernel eigenvalue is reported so
/// callers can check it is numerically zero (without the zero-mean exclusion
/// the constant would drive beta to zero).
inline InfSupReport infsup_study(MeshFamily family, const std::vector<std::size_t>& levels,
                                 int k, double amplitude = default_distortion) {
  FlowLaw law;
  law.kind = LawKind::newtonian;
  InfSupReport report;
  report.family = family_name(family);
  report.k = k;

  for (std::size_t n : levels) {
    const DiscreteProblem problem = DiscreteProblem::create(
        make_family_mesh(family, n, amplitude), k, law, nullptr, nullptr);
    const DofLayout& layout = problem.layout;
    const Mesh& mesh = problem.mesh;
    const std::size_t nv = layout.boundary_start();  // zero-boundary velocity dofs
    const std::size_t np = layout.n_cells * layout.pressure_block;

    // Energy Gram of || . ||_{eps,2,h} and the coupling matrix, both on the
    // zero-boundary space.
    std::vector<Triplet> gram_triplets, b_triplets;
    for (std::size_t c = 0; c < layout.n_cells; c++) {
      const ElementOperators& ops = problem.ops[c];
      const std::size_t L = ops.local_size;
      MatX local = MatX::Zero(L, L);
      for (std::size_t q = 0; q < ops.cell_rule.size(); q++) {
        const MatX rows = detail::sym_grad_rows(ops.basis_k.eval_grad(ops.cell_rule.points[q]));
        local.topLeftCorner(2 * ops.n_k, 2 * ops.n_k) +=
            ops.cell_rule.weights(q) * rows.transpose() * rows;
      }
      for (std::size_t f = 0; f < ops.n_faces; f++) {
        const QuadratureRule& rule = ops.face_rules[f];
        const double scale = 1.0 / ops.face_h[f];
        const std::size_t base = ops.cell_block + f * ops.face_block;
        for (std::size_t q = 0; q < rule.size(); q++) {
          const VecX phi = ops.basis_k.eval(rule.points[q]);
          const VecX psi = ops.face_bases[f].eval(rule.points[q]);
          MatX jump = MatX::Zero(2, L);
          jump.block(0, 0, 1, ops.n_k) = -phi.transpose();
          jump.block(1, ops.n_k, 1, ops.n_k) = -phi.transpose();
          jump.block(0, base, 1, ops.face_scalar) = psi.transpose();
          jump.block(1, base + ops.face_scalar, 1, ops.face_scalar) = psi.transpose();
          local += scale * rule.weights(q) * jump.transpose() * jump;
        }
      }
      const auto map = layout.local_to_global(mesh, c);
      for (std::size_t i = 0; i < L; i++) {
        if (map[i] >= nv) continue;
        for (std::size_t j = 0; j < L; j++) {
          if (map[j] >= nv) continue;
          gram_triplets.emplace_back(static_cast<int>(map[i]), static_cast<int>(map[j]),
                                     local(i, j));
        }
        for (std::size_t pj = 0; pj < layout.pressure_block; pj++) {
          b_triplets.emplace_back(static_cast<int>(c * layout.pressure_block + pj),
                                  static_cast<int>(map[i]), -ops.coupling(pj, i));
        }
      }
    }
    SpMat gram(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
    gram.setFromTriplets(gram_triplets.begin(), gram_triplets.end());
    SpMat coupling(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(nv));
    coupling.setFromTriplets(b_triplets.begin(), b_triplets.end());

    Eigen::SimplicialLLT<SpMat> chol(gram);
    if (chol.info() != Eigen::Success) {
      throw std::runtime_error("infsup_study: energy Gram not positive definite");
    }
    const MatX bt = MatX(coupling.transpose());
    const MatX schur = bt.transpose() * chol.solve(bt);

    MatX mass = MatX::Zero(np, np);
    for (std::size_t c = 0; c < layout.n_cells; c++) {
      mass.block(c * layout.pressure_block, c * layout.pressure_block, layout.pressure_block,
                 layout.pressure_block) = problem.ops[c].mass;
    }
    const Eigen::GeneralizedSelfAdjointEigenSolver<MatX> eig(schur, mass);
    if (eig.info() != Eigen::Success) {
      throw std::runtime_error("infsup_study: generalized eigensolve failed");
    }
    InfSupLevel level;
    level.n = n;
    level.h = mesh.h();
    level.kernel_eigenvalue = eig.eigenvalues()(0);  // constant-pressure mode
    level.beta = std::sqrt(std::max(0.0, eig.eigenvalues()(1)));
    report.levels.push_back(level);
  }
  return report;
}

}  // namespace polystokes
