// Global degree-of-freedom layout for the hybrid discretization and the
// per-cell coefficient vector.
//
// Full-vector order: [cell velocity blocks | interior-face velocity blocks |
// boundary-face velocity blocks | cell pressure blocks | mean multiplier].
// Every velocity block is component-major: x coefficients then y coefficients.
// Boundary-face blocks hold Dirichlet data and are excluded from the unknown
// vector, which is the full vector with that contiguous segment removed.

#pragma once

#include <polystokes/basis.hpp>
#include <polystokes/mesh.hpp>
#include <polystokes/types.hpp>

#include <stdexcept>
#include <vector>

namespace polystokes {

/// Coefficients attached to one cell: the cell velocity block followed by one
/// block per local face, in the cell's local face order.
struct LocalVector {
  VecX data;
  int k = 1;
  std::size_t n_faces = 0;

  static LocalVector zero(int k, std::size_t n_faces) {
    LocalVector v;
    v.k = k;
    v.n_faces = n_faces;
    v.data = VecX::Zero(2 * cell_basis_size(k) + n_faces * 2 * (k + 1));
    return v;
  }

  std::size_t cell_block() const { return 2 * cell_basis_size(k); }
  std::size_t face_block() const { return 2 * static_cast<std::size_t>(k + 1); }
  std::size_t size() const { return cell_block() + n_faces * face_block(); }

  auto cell() { return data.segment(0, cell_block()); }
  auto cell() const { return data.segment(0, cell_block()); }
  auto face(std::size_t i) { return data.segment(cell_block() + i * face_block(), face_block()); }
  auto face(std::size_t i) const {
    return data.segment(cell_block() + i * face_block(), face_block());
  }
};

struct DofLayout {
  int k = 1;
  std::size_t cell_block = 0;      // 2 (k+1)(k+2)/2
  std::size_t face_block = 0;      // 2 (k+1)
  std::size_t pressure_block = 0;  // (k+1)(k+2)/2
  std::size_t n_cells = 0;
  std::size_t n_faces = 0;
  std::size_t n_interior_faces = 0;

  DofLayout() = default;

  DofLayout(const Mesh& mesh, int degree) : k(degree) {
    if (degree < 1) throw std::invalid_argument("DofLayout: polynomial degree k must be >= 1");
    cell_block = 2 * cell_basis_size(degree);
    face_block = 2 * static_cast<std::size_t>(degree + 1);
    pressure_block = cell_basis_size(degree);
    n_cells = mesh.n_cells();
    n_faces = mesh.n_faces();
    n_interior_faces = mesh.n_interior_faces();
    m_face_rank.resize(n_faces);
    m_face_boundary.resize(n_faces);
    std::size_t interior_seen = 0, boundary_seen = 0;
    for (std::size_t f = 0; f < n_faces; f++) {
      m_face_boundary[f] = mesh.face(f).is_boundary();
      m_face_rank[f] = m_face_boundary[f] ? boundary_seen++ : interior_seen++;
    }
  }

  std::size_t cell_offset(std::size_t cell) const { return cell * cell_block; }

  /// Offset of a face's block in the full vector (interior faces first).
  std::size_t face_offset(std::size_t face) const {
    const std::size_t base = n_cells * cell_block +
                             (m_face_boundary[face] ? n_interior_faces * face_block : 0);
    return base + m_face_rank[face] * face_block;
  }

  bool face_is_boundary(std::size_t face) const { return m_face_boundary[face]; }

  std::size_t velocity_size() const { return n_cells * cell_block + n_faces * face_block; }
  std::size_t boundary_start() const {
    return n_cells * cell_block + n_interior_faces * face_block;
  }
  std::size_t pressure_offset(std::size_t cell) const {
    return velocity_size() + cell * pressure_block;
  }
  std::size_t multiplier_offset() const { return total_size() - 1; }
  std::size_t total_size() const { return velocity_size() + n_cells * pressure_block + 1; }

  /// Size after removing the Dirichlet (boundary-face) blocks.
  std::size_t n_unknowns() const {
    return total_size() - (n_faces - n_interior_faces) * face_block;
  }

  /// Unknown index of a full index, or npos for an eliminated boundary dof.
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t unknown_index(std::size_t full_index) const {
    if (full_index < boundary_start()) return full_index;
    if (full_index < velocity_size()) return npos;
    return full_index - (velocity_size() - boundary_start());
  }

  /// Drops the boundary-face segment.
  VecX compress(const VecX& full) const {
    VecX out(n_unknowns());
    out.head(boundary_start()) = full.head(boundary_start());
    out.tail(total_size() - velocity_size()) = full.tail(total_size() - velocity_size());
    return out;
  }

  /// Inverse of compress; boundary-face entries are filled with zeros.
  VecX expand(const VecX& unknowns) const {
    VecX full = VecX::Zero(total_size());
    full.head(boundary_start()) = unknowns.head(boundary_start());
    full.tail(total_size() - velocity_size()) =
        unknowns.tail(total_size() - velocity_size());
    return full;
  }

  /// Full-vector index of each LocalVector entry of a cell.
  std::vector<std::size_t> local_to_global(const Mesh& mesh, std::size_t cell) const {
    const Cell& c = mesh.cell(cell);
    std::vector<std::size_t> map(cell_block + c.faces.size() * face_block);
    for (std::size_t i = 0; i < cell_block; i++) map[i] = cell_offset(cell) + i;
    for (std::size_t lf = 0; lf < c.faces.size(); lf++) {
      const std::size_t base = face_offset(c.faces[lf]);
      for (std::size_t i = 0; i < face_block; i++) {
        map[cell_block + lf * face_block + i] = base + i;
      }
    }
    return map;
  }

  LocalVector gather(const Mesh& mesh, std::size_t cell, const VecX& full) const {
    LocalVector local = LocalVector::zero(k, mesh.cell(cell).faces.size());
    const auto map = local_to_global(mesh, cell);
    for (std::size_t i = 0; i < map.size(); i++) local.data(i) = full(map[i]);
    return local;
  }

 private:
  std::vector<std::size_t> m_face_rank;
  std::vector<char> m_face_boundary;
};

}  // namespace polystokes
