#pragma once

// Global assembly for the hybrid discretization of generalized Stokes flow:
// problem and state containers, Dirichlet data application, residual and
// Jacobian assembly in eliminated (unknown) indexing, and global forms.
//
// Saddle-point layout of the full algebraic system, with C the divergence
// coupling (q^T C v = integral D(v) q summed over cells) and m the vector of
// pressure-basis integrals:
//
//   momentum   F_u = a_h(u, .) - C^T p - load          (rows: velocity dofs)
//   mass       F_p = C u + lambda m                    (rows: pressure dofs)
//   mean       F_l = m . p                             (row: multiplier)
//
// Dirichlet faces carry projected boundary data inside the state vector; their
// rows and columns are eliminated by DofLayout::compress / unknown_index, so
// assembled residuals and Jacobians live on the unknowns only.

#include <polystokes/dofs.hpp>
#include <polystokes/element_ops.hpp>
#include <polystokes/mesh.hpp>
#include <polystokes/rheology.hpp>
#include <polystokes/types.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

namespace polystokes {

using VectorField = std::function<Vec2(const Vec2&)>;

namespace detail {

/// Runs fn(0), ..., fn(n-1) on up to `threads` workers. Each index must write
/// only its own slots, which keeps results independent of the thread count.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; i++) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const auto worker = [&next, &fn, n] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  const std::size_t count = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (std::size_t t = 0; t < count; t++) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// A steady flow problem on a fixed mesh: constitutive law, stabilization
/// weight, load and Dirichlet fields, plus cached per-cell operators.
/// Build instances through `create`, which validates every invariant.
struct DiscreteProblem {
  Mesh mesh;
  DofLayout layout;
  FlowLaw law;
  LawConstants constants;
  double gamma = 1.0;
  VectorField load;      // volumetric load f; null means zero
  VectorField boundary;  // Dirichlet datum g; null means zero
  int k = 1;
  int quad_boost = 0;
  unsigned threads = 1;

  std::vector<ElementOperators> ops;  // one per cell, in cell order
  std::vector<VecX> cell_moments;     // per cell: integrals of the pressure basis
  VecX load_vector;                   // full-size; cell blocks hold integral f . phi

  /// Builds the problem. Passing gamma < 0 selects the default stabilization
  /// weight sqrt(sigma_sm sigma_hc), clamped into [sigma_sm, sigma_hc]; an
  /// explicit gamma outside that interval is rejected.
  static DiscreteProblem create(Mesh mesh_in, int degree, const FlowLaw& law_in,
                                VectorField load_in, VectorField boundary_in,
                                double gamma_in = -1.0, int quad_boost_in = 0,
                                unsigned threads_in = 1) {
    law_in.validate();
    DiscreteProblem p;
    p.mesh = std::move(mesh_in);
    p.layout = DofLayout(p.mesh, degree);
    p.law = law_in;
    p.constants = law_constants(law_in);
    if (gamma_in < 0.0) {
      const double balanced = std::sqrt(p.constants.sigma_sm * p.constants.sigma_hc);
      p.gamma = std::clamp(balanced, p.constants.sigma_sm, p.constants.sigma_hc);
    } else {
      p.gamma = gamma_in;
    }
    detail::check_gamma(p.law, p.gamma);
    p.load = std::move(load_in);
    p.boundary = std::move(boundary_in);
    p.k = degree;
    p.quad_boost = quad_boost_in;
    p.threads = threads_in;

    const std::size_t n_cells = p.mesh.n_cells();
    std::vector<std::optional<ElementOperators>> slots(n_cells);
    detail::parallel_for(n_cells, p.threads, [&](std::size_t c) {
      slots[c].emplace(build_element_operators(p.mesh, c, degree, law_in.r, quad_boost_in));
    });
    p.ops.reserve(n_cells);
    for (auto& slot : slots) p.ops.push_back(std::move(*slot));

    p.cell_moments.resize(n_cells);
    for (std::size_t c = 0; c < n_cells; c++) {
      const ElementOperators& ops = p.ops[c];
      VecX m = VecX::Zero(ops.n_k);
      for (std::size_t q = 0; q < ops.cell_rule.size(); q++) {
        m += ops.cell_rule.weights(q) * ops.basis_k.eval(ops.cell_rule.points[q]);
      }
      p.cell_moments[c] = m;
    }

    p.load_vector = VecX::Zero(p.layout.total_size());
    if (p.load) {
      detail::parallel_for(n_cells, p.threads, [&](std::size_t c) {
        const ElementOperators& ops = p.ops[c];
        VecX fx = VecX::Zero(ops.n_k), fy = VecX::Zero(ops.n_k);
        for (std::size_t q = 0; q < ops.cell_rule_nl.size(); q++) {
          const VecX phi = ops.basis_k.eval(ops.cell_rule_nl.points[q]);
          const Vec2 f = p.load(ops.cell_rule_nl.points[q]);
          fx += ops.cell_rule_nl.weights(q) * f.x() * phi;
          fy += ops.cell_rule_nl.weights(q) * f.y() * phi;
        }
        const std::size_t base = p.layout.cell_offset(c);
        p.load_vector.segment(base, ops.n_k) = fx;
        p.load_vector.segment(base + ops.n_k, ops.n_k) = fy;
      });
    }
    return p;
  }
};

/// Primal state: one full-size coefficient vector laid out per DofLayout
/// (cell velocities, interior then boundary face velocities, pressures, and
/// the scalar mean-constraint multiplier).
struct DiscreteState {
  VecX full;

  static DiscreteState zero(const DofLayout& layout) {
    return DiscreteState{VecX::Zero(static_cast<Eigen::Index>(layout.total_size()))};
  }

  auto velocity(const DofLayout& layout) const {
    return full.head(static_cast<Eigen::Index>(layout.velocity_size()));
  }
  auto pressure(const DofLayout& layout) const {
    return full.segment(static_cast<Eigen::Index>(layout.pressure_offset(0)),
                        static_cast<Eigen::Index>(layout.n_cells * layout.pressure_block));
  }
  double multiplier(const DofLayout& layout) const {
    return full(static_cast<Eigen::Index>(layout.multiplier_offset()));
  }
};

/// Overwrites every boundary-face block of `state` with the componentwise L2
/// projection of the Dirichlet datum. A null datum means g = 0.
inline void apply_dirichlet(const DiscreteProblem& problem, DiscreteState& state) {
  const DofLayout& layout = problem.layout;
  if (state.full.size() != static_cast<Eigen::Index>(layout.total_size())) {
    throw std::invalid_argument("apply_dirichlet: state size does not match layout");
  }
  const std::size_t nfs = static_cast<std::size_t>(layout.k) + 1;
  const int rhs_exactness = 2 * layout.k + 6 + problem.quad_boost;
  for (std::size_t f = 0; f < layout.n_faces; f++) {
    if (!layout.face_is_boundary(f)) continue;
    const std::size_t base = layout.face_offset(f);
    if (!problem.boundary) {
      state.full.segment(base, layout.face_block).setZero();
      continue;
    }
    for (int comp = 0; comp < 2; comp++) {
      const auto scalar = [&problem, comp](const Vec2& x) { return problem.boundary(x)(comp); };
      state.full.segment(base + static_cast<std::size_t>(comp) * nfs, nfs) =
          l2_project_face(scalar, problem.mesh, f, layout.k, rhs_exactness);
    }
  }
}

namespace detail {

inline void check_state(const DiscreteProblem& problem, const DiscreteState& state,
                        const char* where) {
  if (state.full.size() != static_cast<Eigen::Index>(problem.layout.total_size())) {
    throw std::invalid_argument(std::string(where) + ": state size does not match layout");
  }
}

}  // namespace detail

/// Residual of the coupled system at `state`, in unknown indexing (Dirichlet
/// rows eliminated). Boundary-face values stored in the state enter the
/// interior equations as data.
inline VecX assemble_residual(const DiscreteProblem& problem, const DiscreteState& state) {
  detail::check_state(problem, state, "assemble_residual");
  const DofLayout& layout = problem.layout;
  const Mesh& mesh = problem.mesh;
  const std::size_t n_cells = layout.n_cells;
  const double lambda = state.multiplier(layout);

  std::vector<VecX> momentum(n_cells), mass(n_cells);
  VecX mean_parts = VecX::Zero(n_cells);
  detail::parallel_for(n_cells, problem.threads, [&](std::size_t c) {
    const ElementOperators& ops = problem.ops[c];
    const LocalVector w = layout.gather(mesh, c, state.full);
    const VecX p_cell = state.full.segment(layout.pressure_offset(c), layout.pressure_block);
    VecX mom = local_viscous_residual_vector(ops, problem.law, problem.gamma, w);
    mom -= ops.coupling.transpose() * p_cell;
    momentum[c] = mom;
    mass[c] = ops.coupling * w.data + lambda * problem.cell_moments[c];
    mean_parts(c) = problem.cell_moments[c].dot(p_cell);
  });

  VecX full = -problem.load_vector;
  for (std::size_t c = 0; c < n_cells; c++) {
    const auto map = layout.local_to_global(mesh, c);
    for (std::size_t i = 0; i < map.size(); i++) full(map[i]) += momentum[c](i);
    full.segment(layout.pressure_offset(c), layout.pressure_block) += mass[c];
  }
  full(layout.multiplier_offset()) += mean_parts.sum();
  return layout.compress(full);
}

/// Jacobian of the residual at `state`, in unknown indexing. The viscous block
/// comes from the per-cell Newton tangents; the pressure coupling and the
/// mean-constraint row/column are state independent.
inline SpMat assemble_jacobian(const DiscreteProblem& problem, const DiscreteState& state) {
  detail::check_state(problem, state, "assemble_jacobian");
  const DofLayout& layout = problem.layout;
  const Mesh& mesh = problem.mesh;
  const std::size_t n_cells = layout.n_cells;
  const std::size_t n = layout.n_unknowns();
  const std::size_t multiplier = layout.unknown_index(layout.multiplier_offset());

  std::vector<std::vector<Triplet>> local(n_cells);
  detail::parallel_for(n_cells, problem.threads, [&](std::size_t c) {
    const ElementOperators& ops = problem.ops[c];
    const LocalVector w = layout.gather(mesh, c, state.full);
    const MatX tangent = local_viscous_tangent(ops, problem.law, problem.gamma, w);
    const auto map = layout.local_to_global(mesh, c);
    std::vector<std::size_t> unknown(map.size());
    for (std::size_t i = 0; i < map.size(); i++) unknown[i] = layout.unknown_index(map[i]);

    auto& out = local[c];
    out.reserve(map.size() * (map.size() + 2 * layout.pressure_block) +
                2 * layout.pressure_block);
    for (std::size_t i = 0; i < map.size(); i++) {
      if (unknown[i] == DofLayout::npos) continue;
      for (std::size_t j = 0; j < map.size(); j++) {
        if (unknown[j] == DofLayout::npos) continue;
        out.emplace_back(static_cast<int>(unknown[i]), static_cast<int>(unknown[j]),
                         tangent(i, j));
      }
    }
    for (std::size_t pj = 0; pj < layout.pressure_block; pj++) {
      const std::size_t row_p = layout.unknown_index(layout.pressure_offset(c) + pj);
      for (std::size_t vi = 0; vi < map.size(); vi++) {
        if (unknown[vi] == DofLayout::npos) continue;
        const double value = ops.coupling(pj, vi);
        out.emplace_back(static_cast<int>(row_p), static_cast<int>(unknown[vi]), value);
        out.emplace_back(static_cast<int>(unknown[vi]), static_cast<int>(row_p), -value);
      }
      const double moment = problem.cell_moments[c](pj);
      out.emplace_back(static_cast<int>(row_p), static_cast<int>(multiplier), moment);
      out.emplace_back(static_cast<int>(multiplier), static_cast<int>(row_p), moment);
    }
  });

  std::vector<Triplet> triplets;
  std::size_t count = 0;
  for (const auto& chunk : local) count += chunk.size();
  triplets.reserve(count);
  for (const auto& chunk : local) triplets.insert(triplets.end(), chunk.begin(), chunk.end());

  SpMat jac(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  jac.setFromTriplets(triplets.begin(), triplets.end());
  return jac;
}

/// a_h(w, v): viscous plus stabilization form summed over cells.
inline double global_viscous_form(const DiscreteProblem& problem, const VecX& w_full,
                                  const VecX& v_full) {
  const DofLayout& layout = problem.layout;
  double acc = 0.0;
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    const LocalVector w = layout.gather(problem.mesh, c, w_full);
    const LocalVector v = layout.gather(problem.mesh, c, v_full);
    acc += local_viscous_residual(problem.ops[c], problem.law, problem.gamma, w, v);
  }
  return acc;
}

/// b_h(v, q) = -sum_T integral_T D(v) q with q given by per-cell coefficient
/// blocks (size n_cells * pressure_block).
inline double global_divergence_form(const DiscreteProblem& problem, const VecX& v_full,
                                     const VecX& pressure_coeffs) {
  const DofLayout& layout = problem.layout;
  if (pressure_coeffs.size() !=
      static_cast<Eigen::Index>(layout.n_cells * layout.pressure_block)) {
    throw std::invalid_argument("global_divergence_form: pressure coefficient size mismatch");
  }
  double acc = 0.0;
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    const LocalVector v = layout.gather(problem.mesh, c, v_full);
    const VecX q = pressure_coeffs.segment(c * layout.pressure_block, layout.pressure_block);
    acc -= q.dot(problem.ops[c].coupling * v.data);
  }
  return acc;
}

/// Broken energy norm ||v||_{eps,r,h} = (sum_T |v|^r_{eps,r,T})^{1/r}.
inline double global_energy_norm(const DiscreteProblem& problem, const VecX& v_full) {
  const DofLayout& layout = problem.layout;
  double acc = 0.0;
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    const LocalVector v = layout.gather(problem.mesh, c, v_full);
    acc += std::pow(local_energy_seminorm(problem.ops[c], v, problem.law.r), problem.law.r);
  }
  return std::pow(acc, 1.0 / problem.law.r);
}

/// integral of the discrete pressure over the domain.
inline double pressure_mean(const DiscreteProblem& problem, const DiscreteState& state) {
  detail::check_state(problem, state, "pressure_mean");
  double acc = 0.0;
  for (std::size_t c = 0; c < problem.layout.n_cells; c++) {
    acc += problem.cell_moments[c].dot(
        state.full.segment(problem.layout.pressure_offset(c), problem.layout.pressure_block));
  }
  return acc;
}

/// Global interpolate of a velocity field: componentwise L2 projections onto
/// every cell and face block. Pressure and multiplier entries stay zero.
inline VecX interpolate_global(const DiscreteProblem& problem, const VectorField& field) {
  const DofLayout& layout = problem.layout;
  const std::size_t n_k = cell_basis_size(layout.k);
  const std::size_t nfs = static_cast<std::size_t>(layout.k) + 1;
  const int rhs_exactness = 2 * layout.k + 6 + problem.quad_boost;
  VecX full = VecX::Zero(layout.total_size());
  const auto component = [&field](int c) {
    return [&field, c](const Vec2& x) { return field(x)(c); };
  };
  for (std::size_t c = 0; c < layout.n_cells; c++) {
    const std::size_t base = layout.cell_offset(c);
    full.segment(base, n_k) = l2_project_cell(component(0), problem.mesh, c, layout.k,
                                              rhs_exactness);
    full.segment(base + n_k, n_k) = l2_project_cell(component(1), problem.mesh, c, layout.k,
                                                    rhs_exactness);
  }
  for (std::size_t f = 0; f < layout.n_faces; f++) {
    const std::size_t base = layout.face_offset(f);
    full.segment(base, nfs) = l2_project_face(component(0), problem.mesh, f, layout.k,
                                              rhs_exactness);
    full.segment(base + nfs, nfs) = l2_project_face(component(1), problem.mesh, f, layout.k,
                                                    rhs_exactness);
  }
  return full;
}

}  // namespace polystokes
