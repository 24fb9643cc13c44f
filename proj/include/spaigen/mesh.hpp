#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace spaigen {

using Point2 = std::array<double, 2>;

/// Triangulation of the unit square. Triangles are counter-clockwise.
struct TriMesh {
  std::vector<Point2> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<bool> boundary_vertex;
  /// Nominal grid spacing the mesh was generated with; used for dof ordering.
  double spacing = 1.0;

  int num_vertices() const noexcept { return static_cast<int>(vertices.size()); }
  int num_interior_vertices() const noexcept;
};

/// Unique mesh edges with their adjacent triangles.
struct MeshEdges {
  std::vector<std::array<int, 2>> vertices;   // endpoints, sorted ascending
  std::vector<std::array<int, 2>> triangles;  // adjacent triangles; [1] == -1 on the boundary
  /// tri_edge[t][k] is the edge opposite local vertex k of triangle t.
  std::vector<std::array<int, 3>> tri_edge;

  int size() const noexcept { return static_cast<int>(vertices.size()); }
  bool on_boundary(int e) const noexcept { return triangles[e][1] < 0; }
};

struct MeshReport {
  bool fell_back = false;
  int requested_interior = 0;
  int interior = 0;
  std::string note;
};

double signed_area(const TriMesh& mesh, int t);

/// Throws Error(invalid_input) when a TriMesh invariant does not hold.
void validate(const TriMesh& mesh);

MeshEdges build_edges(const TriMesh& mesh);

/// Uniform grid with m x m interior vertices, spacing 1/(m+1), every square cut along
/// the same (lower-left to upper-right) diagonal.
TriMesh structured_mesh(int m);

/// Delaunay mesh of the unit square with exactly `target_interior_nodes` interior
/// vertices when reachable: a jittered grid of floor(sqrt(target))^2 interior points plus
/// seeded random insertions, then Lawson flips. Deterministic per seed.
TriMesh generate_mesh(int target_interior_nodes, std::uint64_t seed,
                      MeshReport* report = nullptr);

/// True when no interior edge violates the empty-circumcircle property.
bool is_delaunay(const TriMesh& mesh, double tolerance = 1e-12);

/// Stable content hash (hex) of coordinates and connectivity.
std::string mesh_fingerprint(const TriMesh& mesh);

}  // namespace spaigen
