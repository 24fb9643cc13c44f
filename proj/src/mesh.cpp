#include "spaigen/mesh.hpp"

#include "spaigen/error.hpp"
#include "spaigen/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

namespace spaigen {

namespace {

double orient(const Point2& a, const Point2& b, const Point2& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

// Positive when d lies strictly inside the circumcircle of counter-clockwise (a, b, c).
double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double adx = a[0] - d[0], ady = a[1] - d[1];
  const double bdx = b[0] - d[0], bdy = b[1] - d[1];
  const double cdx = c[0] - d[0], cdy = c[1] - d[1];
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

bool on_square_boundary(const Point2& p) {
  return p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
}

// Rotates triangle t so that vertex v comes first (keeps orientation).
std::array<int, 3> rotate_to(const std::array<int, 3>& t, int v) {
  if (t[0] == v) return t;
  if (t[1] == v) return {t[1], t[2], t[0]};
  return {t[2], t[0], t[1]};
}

int opposite_vertex(const std::array<int, 3>& t, int a, int b) {
  for (int v : t)
    if (v != a && v != b) return v;
  return -1;
}

void lawson_flip(TriMesh& mesh) {
  auto& tris = mesh.triangles;
  const auto& pts = mesh.vertices;
  for (int pass = 0; pass < 10000; ++pass) {
    std::map<std::pair<int, int>, std::array<int, 2>> edge_tris;
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      for (int k = 0; k < 3; ++k) {
        const int a = tris[t][(k + 1) % 3];
        const int b = tris[t][(k + 2) % 3];
        auto [it, inserted] = edge_tris.try_emplace({std::min(a, b), std::max(a, b)},
                                                    std::array<int, 2>{t, -1});
        if (!inserted) it->second[1] = t;
      }
    }
    std::vector<char> dirty(tris.size(), 0);
    bool flipped = false;
    for (const auto& [edge, adj] : edge_tris) {
      const int t0 = adj[0], t1 = adj[1];
      if (t1 < 0 || dirty[t0] || dirty[t1]) continue;
      const int p0 = opposite_vertex(tris[t0], edge.first, edge.second);
      const int p1 = opposite_vertex(tris[t1], edge.first, edge.second);
      const auto r0 = rotate_to(tris[t0], p0);  // (p0, a, b) counter-clockwise
      if (incircle(pts[r0[0]], pts[r0[1]], pts[r0[2]], pts[p1]) <= 1e-14) continue;
      const int a = r0[1], b = r0[2];
      const std::array<int, 3> n0{p0, a, p1};
      const std::array<int, 3> n1{p0, p1, b};
      if (orient(pts[n0[0]], pts[n0[1]], pts[n0[2]]) <= 0.0 ||
          orient(pts[n1[0]], pts[n1[1]], pts[n1[2]]) <= 0.0)
        continue;
      tris[t0] = n0;
      tris[t1] = n1;
      dirty[t0] = dirty[t1] = 1;
      flipped = true;
    }
    if (!flipped) return;
  }
  fail(ErrorCategory::numerical_failure, "Lawson flipping did not terminate");
}

// Sorts vertices row-band by row-band, left to right, and remaps triangles. Gives the
// banded dof ordering that downstream consumers (the CNN image of A^-1) rely on.
void reorder_banded(TriMesh& mesh) {
  const int nv = mesh.num_vertices();
  std::vector<int> order(nv);
  std::iota(order.begin(), order.end(), 0);
  const double h = mesh.spacing;
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    const auto& p = mesh.vertices[i];
    const auto& q = mesh.vertices[j];
    return std::make_tuple(std::llround(p[1] / h), p[0], p[1]) <
           std::make_tuple(std::llround(q[1] / h), q[0], q[1]);
  });
  std::vector<int> new_index(nv);
  std::vector<Point2> verts(nv);
  std::vector<bool> flags(nv);
  for (int k = 0; k < nv; ++k) {
    new_index[order[k]] = k;
    verts[k] = mesh.vertices[order[k]];
    flags[k] = mesh.boundary_vertex[order[k]];
  }
  for (auto& t : mesh.triangles)
    for (int& v : t) v = new_index[v];
  mesh.vertices = std::move(verts);
  mesh.boundary_vertex = std::move(flags);
}

TriMesh single_node_mesh(Rng& rng) {
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  TriMesh mesh;
  mesh.spacing = 0.5;
  mesh.vertices = {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}};
  mesh.vertices.push_back({0.5 + jitter(rng), 0.5 + jitter(rng)});
  mesh.boundary_vertex = {true, true, true, true, false};
  mesh.triangles = {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
  return mesh;
}

TriMesh jittered_grid(int m, Rng& rng) {
  const int side = m + 2;
  const double h = 1.0 / (m + 1);
  std::uniform_real_distribution<double> jitter(-0.3 * h, 0.3 * h);
  TriMesh mesh;
  mesh.spacing = h;
  mesh.vertices.resize(static_cast<std::size_t>(side) * side);
  mesh.boundary_vertex.resize(mesh.vertices.size());
  auto id = [side](int i, int j) { return j * side + i; };
  for (int j = 0; j < side; ++j) {
    for (int i = 0; i < side; ++i) {
      Point2 p{i * h, j * h};
      const bool bx = (i == 0 || i == side - 1);
      const bool by = (j == 0 || j == side - 1);
      // Draw both offsets unconditionally so the stream layout does not depend on position.
      const double dx = jitter(rng), dy = jitter(rng);
      if (!bx) p[0] += dx;
      if (!by) p[1] += dy;
      if (i == side - 1) p[0] = 1.0;
      if (j == side - 1) p[1] = 1.0;
      mesh.vertices[id(i, j)] = p;
      mesh.boundary_vertex[id(i, j)] = bx || by;
    }
  }
  const auto& pts = mesh.vertices;
  for (int j = 0; j + 1 < side; ++j) {
    for (int i = 0; i + 1 < side; ++i) {
      const int a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      const double a1 = std::min(orient(pts[a], pts[b], pts[c]), orient(pts[a], pts[c], pts[d]));
      const double a2 = std::min(orient(pts[a], pts[b], pts[d]), orient(pts[b], pts[c], pts[d]));
      if (std::max(a1, a2) <= 0.0)
        fail(ErrorCategory::numerical_failure, "jittered cell cannot be triangulated");
      if (a1 >= a2) {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({a, c, d});
      } else {
        mesh.triangles.push_back({a, b, d});
        mesh.triangles.push_back({b, c, d});
      }
    }
  }
  return mesh;
}

// Inserts one interior point into the triangle containing it. Returns false when the
// candidate is too close to existing geometry.
bool insert_point(TriMesh& mesh, const Point2& p, double clearance) {
  for (const auto& q : mesh.vertices) {
    const double dx = p[0] - q[0], dy = p[1] - q[1];
    if (dx * dx + dy * dy < clearance * clearance) return false;
  }
  const auto& pts = mesh.vertices;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto tri = mesh.triangles[t];
    const double area = orient(pts[tri[0]], pts[tri[1]], pts[tri[2]]);
    const double l0 = orient(p, pts[tri[1]], pts[tri[2]]) / area;
    const double l1 = orient(pts[tri[0]], p, pts[tri[2]]) / area;
    const double l2 = orient(pts[tri[0]], pts[tri[1]], p) / area;
    if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
    if (std::min({l0, l1, l2}) < 0.05) return false;
    const int v = mesh.num_vertices();
    mesh.vertices.push_back(p);
    mesh.boundary_vertex.push_back(false);
    mesh.triangles[t] = {tri[0], tri[1], v};
    mesh.triangles.push_back({tri[1], tri[2], v});
    mesh.triangles.push_back({tri[2], tri[0], v});
    return true;
  }
  return false;
}

}  // namespace

int TriMesh::num_interior_vertices() const noexcept {
  return static_cast<int>(std::count(boundary_vertex.begin(), boundary_vertex.end(), false));
}

double signed_area(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  return 0.5 * orient(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
}

void validate(const TriMesh& mesh) {
  const int nv = mesh.num_vertices();
  if (static_cast<int>(mesh.boundary_vertex.size()) != nv)
    fail(ErrorCategory::invalid_input, "boundary flag count differs from vertex count");
  for (int v = 0; v < nv; ++v) {
    const auto& p = mesh.vertices[v];
    if (p[0] < 0.0 || p[0] > 1.0 || p[1] < 0.0 || p[1] > 1.0)
      fail(ErrorCategory::invalid_input, "vertex outside the unit square");
    if (on_square_boundary(p) != static_cast<bool>(mesh.boundary_vertex[v]))
      fail(ErrorCategory::invalid_input, "boundary flag mismatch at vertex " + std::to_string(v));
  }
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    for (int v : mesh.triangles[t])
      if (v < 0 || v >= nv) fail(ErrorCategory::invalid_input, "triangle index out of range");
    if (!(signed_area(mesh, t) > 0.0))
      fail(ErrorCategory::invalid_input, "non-positive triangle area at " + std::to_string(t));
  }
}

MeshEdges build_edges(const TriMesh& mesh) {
  MeshEdges edges;
  std::map<std::pair<int, int>, int> index;
  edges.tri_edge.resize(mesh.triangles.size());
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) {
      const int a = tri[(k + 1) % 3], b = tri[(k + 2) % 3];
      const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
      auto [it, inserted] = index.try_emplace(key, edges.size());
      if (inserted) {
        edges.vertices.push_back({key.first, key.second});
        edges.triangles.push_back({t, -1});
      } else {
        edges.triangles[it->second][1] = t;
      }
      edges.tri_edge[t][k] = it->second;
    }
  }
  return edges;
}

TriMesh structured_mesh(int m) {
  if (m < 1) fail(ErrorCategory::invalid_input, "structured_mesh needs m >= 1");
  const int side = m + 2;
  const double h = 1.0 / (m + 1);
  TriMesh mesh;
  mesh.spacing = h;
  auto id = [side](int i, int j) { return j * side + i; };
  for (int j = 0; j < side; ++j) {
    for (int i = 0; i < side; ++i) {
      mesh.vertices.push_back({i == side - 1 ? 1.0 : i * h, j == side - 1 ? 1.0 : j * h});
      mesh.boundary_vertex.push_back(i == 0 || j == 0 || i == side - 1 || j == side - 1);
    }
  }
  for (int j = 0; j + 1 < side; ++j) {
    for (int i = 0; i + 1 < side; ++i) {
      mesh.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return mesh;
}

TriMesh generate_mesh(int target_interior_nodes, std::uint64_t seed, MeshReport* report) {
  if (target_interior_nodes < 1)
    fail(ErrorCategory::invalid_input, "target_interior_nodes must be >= 1");
  Rng rng(derive_seed(seed, "mesh"));
  MeshReport local;
  local.requested_interior = target_interior_nodes;

  TriMesh mesh;
  if (target_interior_nodes == 1) {
    mesh = single_node_mesh(rng);
  } else {
    const int m = static_cast<int>(std::floor(std::sqrt(static_cast<double>(target_interior_nodes))));
    mesh = jittered_grid(m, rng);
    const int extra = target_interior_nodes - m * m;
    const double h = mesh.spacing;
    std::uniform_real_distribution<double> coord(0.25 * h, 1.0 - 0.25 * h);
    int inserted = 0;
    for (int attempt = 0; inserted < extra && attempt < 2000 * (extra + 1); ++attempt) {
      const Point2 p{coord(rng), coord(rng)};
      if (insert_point(mesh, p, 0.4 * h)) ++inserted;
    }
    if (inserted < extra) {
      const int mr = static_cast<int>(std::lround(std::sqrt(static_cast<double>(target_interior_nodes))));
      Rng fallback_rng(derive_seed(seed, "mesh-fallback"));
      mesh = jittered_grid(mr, fallback_rng);
      local.fell_back = true;
      local.note = "could not place " + std::to_string(extra - inserted) +
                   " extra points; fell back to a " + std::to_string(mr) + "x" +
                   std::to_string(mr) + " jittered grid";
    }
    lawson_flip(mesh);
  }
  reorder_banded(mesh);
  validate(mesh);
  local.interior = mesh.num_interior_vertices();
  if (report) *report = local;
  return mesh;
}

bool is_delaunay(const TriMesh& mesh, double tolerance) {
  const MeshEdges edges = build_edges(mesh);
  for (int e = 0; e < edges.size(); ++e) {
    if (edges.on_boundary(e)) continue;
    const auto [a, b] = edges.vertices[e];
    const int t0 = edges.triangles[e][0], t1 = edges.triangles[e][1];
    const int p1 = opposite_vertex(mesh.triangles[t1], a, b);
    const auto& tri = mesh.triangles[t0];
    if (incircle(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]],
                 mesh.vertices[p1]) > tolerance)
      return false;
  }
  return true;
}

std::string mesh_fingerprint(const TriMesh& mesh) {
  std::uint64_t h = fnv1a("trimesh");
  char buf[64];
  for (const auto& p : mesh.vertices) {
    const int len = std::snprintf(buf, sizeof buf, "%.17g,%.17g;", p[0], p[1]);
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(len)), h);
  }
  for (const auto& t : mesh.triangles) {
    const int len = std::snprintf(buf, sizeof buf, "%d,%d,%d;", t[0], t[1], t[2]);
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(len)), h);
  }
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spaigen
