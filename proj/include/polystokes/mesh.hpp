// Planar polygonal mesh: cells with counter-clockwise vertex lists, straight
// faces shared by at most two cells, per-cell outward normals.
//
// Faces are derived from the cell vertex lists by edge hashing and oriented
// from the lower to the higher global vertex index, so tangents and face bases
// are identical from both sides. Built-in families cover the unit square:
// Cartesian grids, distorted Cartesian grids, and distorted triangular grids
// obtained by splitting each grid cell along a diagonal before distortion.

#pragma once

#include <polystokes/types.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace polystokes {

struct Face {
  std::array<std::size_t, 2> vertices{0, 0};     // global ids, vertices[0] < vertices[1]
  std::array<std::ptrdiff_t, 2> cells{-1, -1};   // adjacent cells; cells[0] always set
  double length = 0.0;
  Vec2 midpoint = Vec2::Zero();
  Vec2 tangent = Vec2::Zero();                   // unit, from vertices[0] to vertices[1]

  bool is_boundary() const { return cells[1] < 0; }
};

struct Cell {
  std::vector<std::size_t> vertices;  // counter-clockwise
  std::vector<std::size_t> faces;     // faces[i] joins vertices[i], vertices[i+1]
  std::vector<Vec2> normals;          // outward unit normal per local face
  double area = 0.0;
  double diameter = 0.0;
  Vec2 centroid = Vec2::Zero();
};

class Mesh {
 public:
  /// Builds the full topology from vertex positions and CCW cell vertex lists.
  /// Throws std::runtime_error on non-manifold edges or non-positive cell
  /// areas; `origin` tags error messages (file path or generator name).
  static Mesh build(std::vector<Vec2> vertices,
                    const std::vector<std::vector<std::size_t>>& cell_vertices,
                    const std::string& origin = "mesh") {
    Mesh mesh;
    mesh.m_vertices = std::move(vertices);
    mesh.m_cells.resize(cell_vertices.size());

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_to_face;
    for (std::size_t ic = 0; ic < cell_vertices.size(); ic++) {
      const auto& vs = cell_vertices[ic];
      if (vs.size() < 3) {
        throw std::runtime_error(origin + ": cell " + std::to_string(ic) + " has fewer than 3 vertices");
      }
      Cell& cell = mesh.m_cells[ic];
      cell.vertices = vs;

      double twice_area = 0.0;
      Vec2 moment = Vec2::Zero();
      for (std::size_t i = 0; i < vs.size(); i++) {
        if (vs[i] >= mesh.m_vertices.size()) {
          throw std::runtime_error(origin + ": cell " + std::to_string(ic) + " references vertex " +
                                   std::to_string(vs[i]) + " out of range");
        }
        const Vec2& a = mesh.m_vertices[vs[i]];
        const Vec2& b = mesh.m_vertices[vs[(i + 1) % vs.size()]];
        const double cross = a.x() * b.y() - a.y() * b.x();
        twice_area += cross;
        moment += cross * (a + b);
      }
      cell.area = 0.5 * twice_area;
      if (!(cell.area > 1e-14)) {
        throw std::runtime_error(origin + ": cell " + std::to_string(ic) +
                                 " has non-positive area (vertices must be counter-clockwise)");
      }
      cell.centroid = moment / (6.0 * cell.area);
      for (std::size_t i = 0; i < vs.size(); i++) {
        for (std::size_t j = i + 1; j < vs.size(); j++) {
          cell.diameter = std::max(cell.diameter, (mesh.m_vertices[vs[i]] - mesh.m_vertices[vs[j]]).norm());
        }
      }

      for (std::size_t i = 0; i < vs.size(); i++) {
        const std::size_t va = vs[i];
        const std::size_t vb = vs[(i + 1) % vs.size()];
        if (va == vb) {
          throw std::runtime_error(origin + ": cell " + std::to_string(ic) + " repeats vertex " +
                                   std::to_string(va));
        }
        const auto key = std::minmax(va, vb);
        auto it = edge_to_face.find(key);
        std::size_t face_id;
        if (it == edge_to_face.end()) {
          face_id = mesh.m_faces.size();
          edge_to_face.emplace(key, face_id);
          Face face;
          face.vertices = {key.first, key.second};
          const Vec2& p0 = mesh.m_vertices[key.first];
          const Vec2& p1 = mesh.m_vertices[key.second];
          face.length = (p1 - p0).norm();
          if (!(face.length > 0.0)) {
            throw std::runtime_error(origin + ": zero-length face between vertices " +
                                     std::to_string(key.first) + " and " + std::to_string(key.second));
          }
          face.midpoint = 0.5 * (p0 + p1);
          face.tangent = (p1 - p0) / face.length;
          face.cells[0] = static_cast<std::ptrdiff_t>(ic);
          mesh.m_faces.push_back(face);
        } else {
          face_id = it->second;
          Face& face = mesh.m_faces[face_id];
          if (face.cells[1] >= 0) {
            throw std::runtime_error(origin + ": non-manifold face between vertices " +
                                     std::to_string(key.first) + " and " + std::to_string(key.second) +
                                     " (shared by more than 2 cells)");
          }
          face.cells[1] = static_cast<std::ptrdiff_t>(ic);
        }
        cell.faces.push_back(face_id);
        // Outward normal of a CCW polygon: edge direction rotated by -pi/2.
        const Vec2 edge = mesh.m_vertices[vb] - mesh.m_vertices[va];
        cell.normals.push_back(Vec2(edge.y(), -edge.x()).normalized());
      }
    }

    mesh.m_n_interior_faces = 0;
    for (const Face& face : mesh.m_faces) {
      if (!face.is_boundary()) mesh.m_n_interior_faces++;
    }
    mesh.m_h = 0.0;
    for (const Cell& cell : mesh.m_cells) {
      mesh.m_h = std::max(mesh.m_h, cell.diameter);
    }
    return mesh;
  }

  std::size_t n_vertices() const { return m_vertices.size(); }
  std::size_t n_cells() const { return m_cells.size(); }
  std::size_t n_faces() const { return m_faces.size(); }
  std::size_t n_interior_faces() const { return m_n_interior_faces; }
  std::size_t n_boundary_faces() const { return m_faces.size() - m_n_interior_faces; }

  /// Largest cell diameter.
  double h() const { return m_h; }

  const Vec2& vertex(std::size_t i) const { return m_vertices[i]; }
  const Cell& cell(std::size_t i) const { return m_cells[i]; }
  const Face& face(std::size_t i) const { return m_faces[i]; }

 private:
  std::vector<Vec2> m_vertices;
  std::vector<Cell> m_cells;
  std::vector<Face> m_faces;
  std::size_t m_n_interior_faces = 0;
  double m_h = 0.0;
};

namespace detail {

/// Grid vertices on the unit square, interior ones displaced by the smooth map
/// (x,y) -> (x + A/n sin(2 pi x) sin(2 pi y), y - A/n sin(2 pi x) sin(2 pi y)).
/// Boundary vertices stay fixed, so the domain is exactly (0,1)^2.
inline std::vector<Vec2> grid_vertices(std::size_t n, double amplitude) {
  std::vector<Vec2> vertices;
  vertices.reserve((n + 1) * (n + 1));
  for (std::size_t j = 0; j <= n; j++) {
    for (std::size_t i = 0; i <= n; i++) {
      const double x = static_cast<double>(i) / static_cast<double>(n);
      const double y = static_cast<double>(j) / static_cast<double>(n);
      double d = 0.0;
      if (i > 0 && i < n && j > 0 && j < n) {
        d = amplitude / static_cast<double>(n) * std::sin(2.0 * std::numbers::pi * x) *
            std::sin(2.0 * std::numbers::pi * y);
      }
      vertices.emplace_back(x + d, y - d);
    }
  }
  return vertices;
}

inline void check_amplitude(double amplitude) {
  if (!(amplitude >= 0.0) || amplitude >= 0.5) {
    throw std::invalid_argument("mesh distortion amplitude must lie in [0, 0.5): got " +
                                std::to_string(amplitude));
  }
}

}  // namespace detail

/// Uniform n x n grid of square cells on (0,1)^2; h = sqrt(2)/n.
inline Mesh generate_cartesian(std::size_t n) {
  if (n < 1) throw std::invalid_argument("generate_cartesian: n must be >= 1");
  const auto vid = [n](std::size_t i, std::size_t j) { return i + j * (n + 1); };
  std::vector<std::vector<std::size_t>> cells;
  cells.reserve(n * n);
  for (std::size_t j = 0; j < n; j++) {
    for (std::size_t i = 0; i < n; i++) {
      cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  }
  return Mesh::build(detail::grid_vertices(n, 0.0), cells, "generate_cartesian");
}

/// Cartesian grid with interior vertices displaced by the smooth distortion
/// map; boundary vertices fixed. Requires n >= 2 so interior vertices exist.
inline Mesh generate_distorted_cartesian(std::size_t n, double amplitude) {
  if (n < 2) throw std::invalid_argument("generate_distorted_cartesian: n must be >= 2");
  detail::check_amplitude(amplitude);
  const auto vid = [n](std::size_t i, std::size_t j) { return i + j * (n + 1); };
  std::vector<std::vector<std::size_t>> cells;
  cells.reserve(n * n);
  for (std::size_t j = 0; j < n; j++) {
    for (std::size_t i = 0; i < n; i++) {
      cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  }
  return Mesh::build(detail::grid_vertices(n, amplitude), cells, "generate_distorted_cartesian");
}

/// Each grid cell split into two triangles along a diagonal (alternating in a
/// checkerboard pattern) before the distortion map is applied.
inline Mesh generate_distorted_triangular(std::size_t n, double amplitude) {
  if (n < 1) throw std::invalid_argument("generate_distorted_triangular: n must be >= 1");
  detail::check_amplitude(amplitude);
  const auto vid = [n](std::size_t i, std::size_t j) { return i + j * (n + 1); };
  std::vector<std::vector<std::size_t>> cells;
  cells.reserve(2 * n * n);
  for (std::size_t j = 0; j < n; j++) {
    for (std::size_t i = 0; i < n; i++) {
      const std::size_t c00 = vid(i, j), c10 = vid(i + 1, j);
      const std::size_t c11 = vid(i + 1, j + 1), c01 = vid(i, j + 1);
      if ((i + j) % 2 == 0) {
        cells.push_back({c00, c10, c11});
        cells.push_back({c00, c11, c01});
      } else {
        cells.push_back({c00, c10, c01});
        cells.push_back({c10, c11, c01});
      }
    }
  }
  return Mesh::build(detail::grid_vertices(n, amplitude), cells, "generate_distorted_triangular");
}

/// Reads the text format: `polymesh 2d`, `vertices N` + N coordinate lines,
/// `cells M` + M lines `c v0 ... v{c-1}` (counter-clockwise, 0-based).
/// `#` starts a comment. Errors carry the path and 1-based line number.
inline Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mesh: cannot open '" + path + "'");

  std::size_t line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
  };
  // Returns the next non-empty line with comments stripped; false at EOF.
  const auto next_line = [&](std::string& out) {
    std::string raw;
    while (std::getline(in, raw)) {
      line_no++;
      if (const auto pos = raw.find('#'); pos != std::string::npos) raw.erase(pos);
      std::istringstream probe(raw);
      std::string token;
      if (probe >> token) {
        out = raw;
        return true;
      }
    }
    return false;
  };

  std::string line, word;
  if (!next_line(line)) fail("missing header 'polymesh 2d'");
  {
    std::istringstream ss(line);
    std::string tag, dim;
    if (!(ss >> tag >> dim) || tag != "polymesh" || dim != "2d" || (ss >> word)) {
      fail("expected header 'polymesh 2d'");
    }
  }

  if (!next_line(line)) fail("missing 'vertices N'");
  std::size_t n_vertices = 0;
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> n_vertices) || tag != "vertices" || (ss >> word)) fail("expected 'vertices N'");
  }
  std::vector<Vec2> vertices;
  vertices.reserve(n_vertices);
  for (std::size_t i = 0; i < n_vertices; i++) {
    if (!next_line(line)) fail("unexpected end of file: expected " + std::to_string(n_vertices) + " vertices");
    std::istringstream ss(line);
    double x = 0.0, y = 0.0;
    if (!(ss >> x >> y) || (ss >> word)) fail("expected vertex line 'x y'");
    vertices.emplace_back(x, y);
  }

  if (!next_line(line)) fail("missing 'cells M'");
  std::size_t n_cells = 0;
  {
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag >> n_cells) || tag != "cells" || (ss >> word)) fail("expected 'cells M'");
  }
  std::vector<std::vector<std::size_t>> cells;
  cells.reserve(n_cells);
  for (std::size_t i = 0; i < n_cells; i++) {
    if (!next_line(line)) fail("unexpected end of file: expected " + std::to_string(n_cells) + " cells");
    std::istringstream ss(line);
    std::size_t count = 0;
    if (!(ss >> count) || count < 3) fail("expected cell line 'c v0 v1 ... v{c-1}' with c >= 3");
    std::vector<std::size_t> vs(count);
    for (std::size_t v = 0; v < count; v++) {
      if (!(ss >> vs[v])) fail("cell line lists fewer than " + std::to_string(count) + " vertices");
    }
    if (ss >> word) fail("cell line lists more than " + std::to_string(count) + " vertices");
    cells.push_back(std::move(vs));
  }
  if (next_line(line)) fail("trailing content after cell list");

  return Mesh::build(std::move(vertices), cells, path);
}

struct RegularityReport {
  std::size_t n_vertices = 0;
  std::size_t n_cells = 0;
  std::size_t n_faces = 0;
  std::size_t n_interior_faces = 0;
  double h = 0.0;
  double total_area = 0.0;
  double min_area = 0.0;
  double min_inradius_ratio = 0.0;  // min over cells of (centroid-to-edge distance)/diameter
  std::size_t max_faces_per_cell = 0;
  double min_face_cell_ratio = 0.0;  // range of h_F/h_T over all (cell, face) pairs
  double max_face_cell_ratio = 0.0;
};

inline RegularityReport mesh_stats(const Mesh& mesh) {
  RegularityReport report;
  report.n_vertices = mesh.n_vertices();
  report.n_cells = mesh.n_cells();
  report.n_faces = mesh.n_faces();
  report.n_interior_faces = mesh.n_interior_faces();
  report.h = mesh.h();
  report.min_area = std::numeric_limits<double>::infinity();
  report.min_inradius_ratio = std::numeric_limits<double>::infinity();
  report.min_face_cell_ratio = std::numeric_limits<double>::infinity();
  report.max_face_cell_ratio = 0.0;
  for (std::size_t ic = 0; ic < mesh.n_cells(); ic++) {
    const Cell& cell = mesh.cell(ic);
    report.total_area += cell.area;
    report.min_area = std::min(report.min_area, cell.area);
    report.max_faces_per_cell = std::max(report.max_faces_per_cell, cell.faces.size());
    double inradius = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cell.faces.size(); i++) {
      const Face& face = mesh.face(cell.faces[i]);
      // Distance from the centroid to the face line (inradius estimate for
      // cells star-shaped with respect to their centroid).
      inradius = std::min(inradius, std::abs(cell.normals[i].dot(cell.centroid - face.midpoint)));
      const double ratio = face.length / cell.diameter;
      report.min_face_cell_ratio = std::min(report.min_face_cell_ratio, ratio);
      report.max_face_cell_ratio = std::max(report.max_face_cell_ratio, ratio);
    }
    report.min_inradius_ratio = std::min(report.min_inradius_ratio, inradius / cell.diameter);
  }
  return report;
}

}  // namespace polystokes
