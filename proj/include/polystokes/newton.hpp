#pragma once

// Damped Newton solver for the discrete generalized Stokes system, with
// optional continuation in the flow-behavior exponent and optional per-cell
// static condensation of the linearized saddle-point systems.

#include <polystokes/assembly.hpp>

#include <Eigen/SparseLU>

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace polystokes {

/// Minimal interface for the inner linear solves so callers can substitute
/// their own (e.g. iterative) solver. `factor` returns false on breakdown.
class LinearSolver {
 public:
  virtual ~LinearSolver() = default;
  virtual bool factor(const SpMat& matrix) = 0;
  virtual VecX solve(const VecX& rhs) = 0;
};

/// Default direct solver: sparse LU with column pivoting.
class SparseLuSolver final : public LinearSolver {
 public:
  bool factor(const SpMat& matrix) override {
    m_lu.compute(matrix);
    return m_lu.info() == Eigen::Success;
  }
  VecX solve(const VecX& rhs) override { return m_lu.solve(rhs); }

 private:
  Eigen::SparseLU<SpMat> m_lu;
};

struct NewtonConfig {
  double tol = 1e-11;       // converged when ||res|| <= tol * (1 + ||load||)
  int max_iter = 50;        // Newton iterations per continuation stage
  bool damping = true;      // backtracking line search (up to 20 halvings)
  bool condense = false;    // per-cell static condensation of the Newton systems
  bool continuation = true; // walk r from 2 to the target exponent
  double continuation_step = 0.25;  // largest |r_{i+1} - r_i| along the walk
  LinearSolver* solver = nullptr;   // non-owning; null selects SparseLuSolver
};

struct NewtonReport {
  bool converged = false;
  bool solver_failure = false;      // linear factorization or local pivot breakdown
  bool line_search_failed = false;  // 20 halvings without residual decrease
  int iterations = 0;               // accepted Newton updates, summed over stages
  int final_stage_iterations = 0;   // iterations at the target exponent
  int damping_steps = 0;            // halvings taken, summed over stages
  int linear_solves = 0;
  std::vector<double> residual_history;  // accepted norms at the target exponent
  std::vector<double> stage_r;           // continuation path, ending at the target
  std::vector<int> stage_iterations;     // per-stage accepted updates
  std::size_t condensed_size = 0;        // reduced unknowns (excluding multiplier)
};

/// Size of the statically condensed system, excluding the scalar multiplier:
/// one velocity block per interior face plus one pressure unknown per cell.
inline std::size_t condensed_system_size(const DofLayout& layout) {
  return layout.n_interior_faces * layout.face_block + layout.n_cells;
}

namespace detail {

inline bool plain_newton_step(const DiscreteProblem& problem, const DiscreteState& state,
                              const VecX& res, LinearSolver& lin, VecX& du) {
  const SpMat jac = assemble_jacobian(problem, state);
  if (!lin.factor(jac)) return false;
  du = lin.solve(-res);
  return du.allFinite();
}

/// Newton step through per-cell elimination of the cell velocity block and all
/// non-constant pressure modes. The reduced system couples interior-face
/// velocities, one pressure unknown per cell, and the mean multiplier; the
/// eliminated updates are recovered exactly by back-substitution.
inline bool condensed_newton_step(const DiscreteProblem& problem, const DiscreteState& state,
                                  const VecX& res, LinearSolver& lin, VecX& du,
                                  std::size_t* condensed_size_out) {
  const DofLayout& layout = problem.layout;
  const Mesh& mesh = problem.mesh;
  const std::size_t n_cells = layout.n_cells;
  const std::size_t cell_vel = n_cells * layout.cell_block;
  const std::size_t face_total = layout.n_interior_faces * layout.face_block;
  const std::size_t red_core = face_total + n_cells;
  const std::size_t red_n = red_core + 1;  // + multiplier
  if (condensed_size_out) *condensed_size_out = red_core;

  struct CellElim {
    MatX x;   // K_ii^{-1} K_ik
    VecX y;   // K_ii^{-1} F_i
    MatX schur;
    VecX rhs_fix;  // K_ki K_ii^{-1} F_i
    std::vector<std::size_t> internal_unknown;
    std::vector<std::size_t> kept_reduced;
    bool singular = false;
  };
  std::vector<CellElim> elim(n_cells);

  parallel_for(n_cells, problem.threads, [&](std::size_t c) {
    const ElementOperators& ops = problem.ops[c];
    const LocalVector w = layout.gather(mesh, c, state.full);
    const MatX tangent = local_viscous_tangent(ops, problem.law, problem.gamma, w);
    const auto map = layout.local_to_global(mesh, c);
    const std::size_t L = ops.local_size, n_k = ops.n_k;
    const std::size_t n_loc = L + n_k + 1;  // velocity, pressure, multiplier

    MatX k_loc = MatX::Zero(n_loc, n_loc);
    k_loc.topLeftCorner(L, L) = tangent;
    for (std::size_t pj = 0; pj < n_k; pj++) {
      for (std::size_t vi = 0; vi < L; vi++) {
        const double value = ops.coupling(pj, vi);
        k_loc(L + pj, vi) += value;
        k_loc(vi, L + pj) -= value;
      }
      const double moment = problem.cell_moments[c](pj);
      k_loc(L + pj, L + n_k) += moment;
      k_loc(L + n_k, L + pj) += moment;
    }

    CellElim& e = elim[c];
    std::vector<std::size_t> internal_loc, kept_loc;
    for (std::size_t i = 0; i < ops.cell_block; i++) internal_loc.push_back(i);
    for (std::size_t pj = 1; pj < n_k; pj++) internal_loc.push_back(L + pj);
    for (std::size_t i = ops.cell_block; i < L; i++) {
      const std::size_t u = layout.unknown_index(map[i]);
      if (u == DofLayout::npos) continue;  // Dirichlet face dof: already eliminated
      kept_loc.push_back(i);
      e.kept_reduced.push_back(u - cell_vel);  // interior-face unknowns are contiguous
    }
    kept_loc.push_back(L);  // constant pressure mode stays global
    e.kept_reduced.push_back(face_total + c);
    kept_loc.push_back(L + n_k);
    e.kept_reduced.push_back(red_core);

    e.internal_unknown.reserve(internal_loc.size());
    for (std::size_t i : internal_loc) {
      const std::size_t g = i < L ? map[i] : layout.pressure_offset(c) + (i - L);
      e.internal_unknown.push_back(layout.unknown_index(g));
    }

    const auto slice = [&k_loc](const std::vector<std::size_t>& rows,
                                const std::vector<std::size_t>& cols) {
      MatX out(rows.size(), cols.size());
      for (std::size_t a = 0; a < rows.size(); a++) {
        for (std::size_t b = 0; b < cols.size(); b++) out(a, b) = k_loc(rows[a], cols[b]);
      }
      return out;
    };
    const MatX k_ii = slice(internal_loc, internal_loc);
    const MatX k_ik = slice(internal_loc, kept_loc);
    const MatX k_ki = slice(kept_loc, internal_loc);
    const MatX k_kk = slice(kept_loc, kept_loc);

    const Eigen::FullPivLU<MatX> lu(k_ii);
    if (!lu.isInvertible()) {
      e.singular = true;
      return;
    }
    VecX f_i(internal_loc.size());
    for (std::size_t a = 0; a < internal_loc.size(); a++) f_i(a) = res(e.internal_unknown[a]);
    e.x = lu.solve(k_ik);
    e.y = lu.solve(f_i);
    e.schur = k_kk - k_ki * e.x;
    e.rhs_fix = k_ki * e.y;
  });

  for (const CellElim& e : elim) {
    if (e.singular) return false;
  }

  VecX rhs(red_n);
  for (std::size_t i = 0; i < face_total; i++) rhs(i) = -res(cell_vel + i);
  for (std::size_t c = 0; c < n_cells; c++) {
    rhs(face_total + c) = -res(layout.unknown_index(layout.pressure_offset(c)));
  }
  rhs(red_core) = -res(layout.unknown_index(layout.multiplier_offset()));

  std::vector<Triplet> triplets;
  for (std::size_t c = 0; c < n_cells; c++) {
    const CellElim& e = elim[c];
    const std::size_t nk = e.kept_reduced.size();
    for (std::size_t a = 0; a < nk; a++) {
      rhs(e.kept_reduced[a]) += e.rhs_fix(a);
      for (std::size_t b = 0; b < nk; b++) {
        triplets.emplace_back(static_cast<int>(e.kept_reduced[a]),
                              static_cast<int>(e.kept_reduced[b]), e.schur(a, b));
      }
    }
  }
  SpMat reduced(static_cast<Eigen::Index>(red_n), static_cast<Eigen::Index>(red_n));
  reduced.setFromTriplets(triplets.begin(), triplets.end());
  if (!lin.factor(reduced)) return false;
  const VecX du_red = lin.solve(rhs);
  if (!du_red.allFinite()) return false;

  du = VecX::Zero(layout.n_unknowns());
  for (std::size_t i = 0; i < face_total; i++) du(cell_vel + i) = du_red(i);
  for (std::size_t c = 0; c < n_cells; c++) {
    du(layout.unknown_index(layout.pressure_offset(c))) = du_red(face_total + c);
  }
  du(layout.unknown_index(layout.multiplier_offset())) = du_red(red_core);
  for (std::size_t c = 0; c < n_cells; c++) {
    const CellElim& e = elim[c];
    VecX du_k(e.kept_reduced.size());
    for (std::size_t a = 0; a < e.kept_reduced.size(); a++) du_k(a) = du_red(e.kept_reduced[a]);
    const VecX du_i = -(e.y + e.x * du_k);
    for (std::size_t a = 0; a < e.internal_unknown.size(); a++) {
      du(e.internal_unknown[a]) = du_i(a);
    }
  }
  return true;
}

struct StageOutcome {
  bool converged = false;
  bool solver_failure = false;
  bool line_search_failed = false;
  int iterations = 0;
  int damping_steps = 0;
  int linear_solves = 0;
  std::vector<double> history;
};

inline StageOutcome newton_stage(const DiscreteProblem& problem, DiscreteState& state,
                                 const NewtonConfig& config, std::size_t* condensed_size_out) {
  StageOutcome out;
  apply_dirichlet(problem, state);
  const double scale = 1.0 + problem.load_vector.norm();

  std::unique_ptr<LinearSolver> owned;
  LinearSolver* lin = config.solver;
  if (lin == nullptr) {
    owned = std::make_unique<SparseLuSolver>();
    lin = owned.get();
  }

  VecX res = assemble_residual(problem, state);
  double norm = res.norm();
  out.history.push_back(norm);
  while (out.iterations < config.max_iter) {
    if (norm <= config.tol * scale) {
      out.converged = true;
      return out;
    }
    VecX du;
    const bool ok = config.condense
                        ? condensed_newton_step(problem, state, res, *lin, du,
                                                condensed_size_out)
                        : plain_newton_step(problem, state, res, *lin, du);
    out.linear_solves++;
    if (!ok) {
      out.solver_failure = true;
      return out;
    }
    const VecX du_full = problem.layout.expand(du);

    const int max_halvings = config.damping ? 20 : 0;
    double step = 1.0;
    bool accepted = false;
    DiscreteState trial{VecX()};
    VecX trial_res;
    double trial_norm = 0.0;
    for (int h = 0; h <= max_halvings; h++) {
      trial.full = state.full + step * du_full;
      trial_res = assemble_residual(problem, trial);
      trial_norm = trial_res.norm();
      if (!config.damping || trial_norm < norm) {
        out.damping_steps += h;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      out.damping_steps += max_halvings;
      out.line_search_failed = true;
      return out;
    }
    state.full.swap(trial.full);
    res.swap(trial_res);
    norm = trial_norm;
    out.history.push_back(norm);
    out.iterations++;
  }
  out.converged = norm <= config.tol * scale;
  return out;
}

/// Exponent path 2 = r_0, r_1, ..., r_m = target with |r_{i+1} - r_i| <= step.
inline std::vector<double> continuation_path(double target, double step) {
  std::vector<double> path{2.0};
  if (target == 2.0) return path;
  const double dist = std::abs(target - 2.0);
  const int n_steps = std::max(1, static_cast<int>(std::ceil(dist / step - 1e-12)));
  for (int i = 1; i <= n_steps; i++) {
    path.push_back(2.0 + (target - 2.0) * static_cast<double>(i) / n_steps);
  }
  return path;
}

}  // namespace detail

/// Solves the discrete system by damped Newton iteration. For non-Newtonian
/// exponents the solve optionally walks r from 2 to the target in steps of at
/// most `continuation_step`, warm-starting each stage from the previous one;
/// intermediate stages use the default stabilization weight for their law.
inline std::pair<DiscreteState, NewtonReport> newton_solve(const DiscreteProblem& problem,
                                                           const DiscreteState& initial,
                                                           const NewtonConfig& config = {}) {
  if (config.tol <= 0.0) throw std::invalid_argument("newton_solve: tol must be positive");
  if (config.max_iter < 1) throw std::invalid_argument("newton_solve: max_iter must be >= 1");
  if (config.continuation_step <= 0.0) {
    throw std::invalid_argument("newton_solve: continuation_step must be positive");
  }
  NewtonReport report;
  DiscreteState state = initial;
  if (state.full.size() == 0) state = DiscreteState::zero(problem.layout);
  detail::check_state(problem, state, "newton_solve");
  report.condensed_size = config.condense ? condensed_system_size(problem.layout) : 0;

  const bool walk_r = config.continuation && problem.law.r != 2.0;
  report.stage_r = walk_r ? detail::continuation_path(problem.law.r, config.continuation_step)
                          : std::vector<double>{problem.law.r};

  for (std::size_t s = 0; s + 1 < report.stage_r.size(); s++) {
    FlowLaw stage_law = problem.law;
    stage_law.r = report.stage_r[s];
    const DiscreteProblem stage =
        DiscreteProblem::create(problem.mesh, problem.k, stage_law, problem.load,
                                problem.boundary, -1.0, problem.quad_boost, problem.threads);
    const detail::StageOutcome outcome = detail::newton_stage(stage, state, config, nullptr);
    report.iterations += outcome.iterations;
    report.damping_steps += outcome.damping_steps;
    report.linear_solves += outcome.linear_solves;
    report.stage_iterations.push_back(outcome.iterations);
    if (!outcome.converged) {
      report.solver_failure = outcome.solver_failure;
      report.line_search_failed = outcome.line_search_failed;
      report.residual_history = outcome.history;
      return {std::move(state), std::move(report)};
    }
  }

  const detail::StageOutcome outcome =
      detail::newton_stage(problem, state, config, &report.condensed_size);
  report.iterations += outcome.iterations;
  report.final_stage_iterations = outcome.iterations;
  report.damping_steps += outcome.damping_steps;
  report.linear_solves += outcome.linear_solves;
  report.stage_iterations.push_back(outcome.iterations);
  report.residual_history = outcome.history;
  report.converged = outcome.converged;
  report.solver_failure = outcome.solver_failure;
  report.line_search_failed = outcome.line_search_failed;
  return {std::move(state), std::move(report)};
}

}  // namespace polystokes
