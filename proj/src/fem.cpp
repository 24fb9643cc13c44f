#include "spaigen/fem.hpp"

#include "spaigen/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

namespace spaigen {

namespace {

using Vec2 = std::array<double, 2>;

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

struct Element {
  std::array<Point2, 3> p;
  double area = 0.0;
  std::array<Vec2, 3> grad_lambda;  // constant barycentric gradients
};

Element element(const TriMesh& mesh, int t) {
  Element el;
  const auto& tri = mesh.triangles[t];
  for (int k = 0; k < 3; ++k) el.p[k] = mesh.vertices[tri[k]];
  el.area = signed_area(mesh, t);
  const double inv2a = 1.0 / (2.0 * el.area);
  for (int k = 0; k < 3; ++k) {
    const auto& a = el.p[(k + 1) % 3];
    const auto& b = el.p[(k + 2) % 3];
    el.grad_lambda[k] = {(a[1] - b[1]) * inv2a, (b[0] - a[0]) * inv2a};
  }
  return el;
}

std::array<double, 3> barycentric(const Element& el, const Point2& x) {
  std::array<double, 3> l{};
  for (int k = 0; k < 3; ++k) {
    const auto& a = el.p[(k + 1) % 3];
    const auto& b = el.p[(k + 2) % 3];
    l[k] = ((a[0] - x[0]) * (b[1] - x[1]) - (a[1] - x[1]) * (b[0] - x[0])) / (2.0 * el.area);
  }
  return l;
}

std::array<Point2, 3> edge_midpoints(const Element& el) {
  std::array<Point2, 3> m{};
  for (int k = 0; k < 3; ++k) {
    const auto& a = el.p[(k + 1) % 3];
    const auto& b = el.p[(k + 2) % 3];
    m[k] = {0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
  }
  return m;
}

double positive_coefficient_at(const CoefficientField& f, const Point2& x) {
  const double v = f(x);
  if (!(v > 0.0))
    fail(ErrorCategory::invalid_input, "coefficient is not positive at a quadrature point");
  return v;
}

// Integral of f over the element with the degree-2 edge-midpoint rule.
double integrate_coefficient(const Element& el, const CoefficientField& f) {
  double s = 0.0;
  for (const auto& m : edge_midpoints(el)) s += positive_coefficient_at(f, m);
  return el.area * s / 3.0;
}

// Quadratic Lagrange basis on a triangle: 0..2 vertices, 3 + k the midpoint of the edge
// opposite vertex k.
std::array<double, 6> p2_laplacians(const Element& el) {
  std::array<double, 6> lap{};
  for (int k = 0; k < 3; ++k) {
    lap[k] = 4.0 * dot(el.grad_lambda[k], el.grad_lambda[k]);
    lap[3 + k] = 8.0 * dot(el.grad_lambda[(k + 1) % 3], el.grad_lambda[(k + 2) % 3]);
  }
  return lap;
}

std::array<Vec2, 6> p2_gradients(const Element& el, const std::array<double, 3>& l) {
  std::array<Vec2, 6> g{};
  for (int k = 0; k < 3; ++k) {
    const auto& gk = el.grad_lambda[k];
    g[k] = {(4.0 * l[k] - 1.0) * gk[0], (4.0 * l[k] - 1.0) * gk[1]};
    const int a = (k + 1) % 3, b = (k + 2) % 3;
    const auto& ga = el.grad_lambda[a];
    const auto& gb = el.grad_lambda[b];
    g[3 + k] = {4.0 * (l[a] * gb[0] + l[b] * ga[0]), 4.0 * (l[a] * gb[1] + l[b] * ga[1])};
  }
  return g;
}

std::array<int, 6> p2_element_dofs(const P2DofMap& map, const TriMesh& mesh, int t) {
  std::array<int, 6> d{};
  for (int k = 0; k < 3; ++k) {
    d[k] = map.vertex_dof[mesh.triangles[t][k]];
    d[3 + k] = map.edge_dof[map.edges.tri_edge[t][k]];
  }
  return d;
}

// 3-point Gauss-Legendre on [0, 1].
constexpr std::array<double, 3> kGaussNodes{0.1127016653792583, 0.5, 0.8872983346207417};
constexpr std::array<double, 3> kGaussWeights{5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

double edge_length(const Point2& a, const Point2& b) {
  return std::hypot(b[0] - a[0], b[1] - a[1]);
}

}  // namespace

std::string_view family_name(ProblemFamily f) noexcept {
  return f == ProblemFamily::poisson ? "poisson" : "biharmonic";
}

ProblemFamily parse_family(std::string_view name) {
  if (name == "poisson") return ProblemFamily::poisson;
  if (name == "biharmonic") return ProblemFamily::biharmonic;
  fail(ErrorCategory::config_error, "unknown family '" + std::string(name) + "'");
}

double grid_minimum(const CoefficientField& f) {
  double lo = f(0.0, 0.0);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) lo = std::min(lo, f(i / 9.0, j / 9.0));
  return lo;
}

bool coefficient_acceptable(const CoefficientField& f) {
  return grid_minimum(f) > kCoefficientMargin;
}

CoefficientField sample_coefficient(Rng& rng) {
  std::uniform_real_distribution<double> base(1.0, 2.0);
  std::uniform_real_distribution<double> tilt(-0.5, 0.5);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    CoefficientField f;
    f.coeffs[0] = base(rng);
    for (int k = 1; k < 6; ++k) f.coeffs[k] = tilt(rng);
    if (coefficient_acceptable(f)) return f;
  }
  fail(ErrorCategory::numerical_failure, "coefficient rejection sampling exceeded 1000 draws");
}

std::vector<int> p1_dof_map(const TriMesh& mesh) {
  std::vector<int> dof(mesh.num_vertices(), -1);
  int next = 0;
  for (int v = 0; v < mesh.num_vertices(); ++v)
    if (!mesh.boundary_vertex[v]) dof[v] = next++;
  return dof;
}

P2DofMap p2_dof_map(const TriMesh& mesh) {
  P2DofMap map;
  map.edges = build_edges(mesh);
  struct Node {
    Point2 x;
    bool is_edge;
    int id;
  };
  std::vector<Node> nodes;
  for (int v = 0; v < mesh.num_vertices(); ++v)
    if (!mesh.boundary_vertex[v]) nodes.push_back({mesh.vertices[v], false, v});
  for (int e = 0; e < map.edges.size(); ++e) {
    if (map.edges.on_boundary(e)) continue;
    const auto& a = mesh.vertices[map.edges.vertices[e][0]];
    const auto& b = mesh.vertices[map.edges.vertices[e][1]];
    nodes.push_back({{0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])}, true, e});
  }
  const double band = 0.5 * mesh.spacing;
  std::stable_sort(nodes.begin(), nodes.end(), [band](const Node& p, const Node& q) {
    return std::make_tuple(std::llround(p.x[1] / band), p.x[0], p.x[1]) <
           std::make_tuple(std::llround(q.x[1] / band), q.x[0], q.x[1]);
  });
  map.vertex_dof.assign(mesh.num_vertices(), -1);
  map.edge_dof.assign(map.edges.size(), -1);
  for (int k = 0; k < static_cast<int>(nodes.size()); ++k) {
    (nodes[k].is_edge ? map.edge_dof[nodes[k].id] : map.vertex_dof[nodes[k].id]) = k;
    map.coords.push_back(nodes[k].x);
  }
  map.size = static_cast<int>(nodes.size());
  return map;
}

CsrMatrix assemble_poisson_p1(const TriMesh& mesh, const CoefficientField& f) {
  const std::vector<int> dof = p1_dof_map(mesh);
  const int n = mesh.num_interior_vertices();
  std::vector<Triplet> entries;
  entries.reserve(mesh.triangles.size() * 9);
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const Element el = element(mesh, t);
    const double weight = integrate_coefficient(el, f);
    for (int a = 0; a < 3; ++a) {
      const int i = dof[mesh.triangles[t][a]];
      if (i < 0) continue;
      for (int b = 0; b < 3; ++b) {
        const int j = dof[mesh.triangles[t][b]];
        if (j < 0) continue;
        entries.push_back({i, j, weight * dot(el.grad_lambda[a], el.grad_lambda[b])});
      }
    }
  }
  return symmetrize(CsrMatrix::from_triplets(n, n, std::move(entries)));
}

double penalty_min(const TriMesh& mesh) {
  const MeshEdges edges = build_edges(mesh);
  double worst = 0.0;
  for (int e = 0; e < edges.size(); ++e) {
    if (edges.on_boundary(e)) continue;
    const double len = edge_length(mesh.vertices[edges.vertices[e][0]],
                                   mesh.vertices[edges.vertices[e][1]]);
    for (int t : edges.triangles[e]) {
      const double height = 2.0 * signed_area(mesh, t) / len;
      worst = std::max(worst, 1.0 / height);
    }
  }
  return kPenaltySafetyFactor * kQuadraticTraceConstant * worst;
}

CsrMatrix assemble_biharmonic_ip(const TriMesh& mesh, const CoefficientField& f, double penalty,
                                 unsigned terms) {
  const double p_min = penalty_min(mesh);
  if (!(penalty >= p_min))
    fail(ErrorCategory::invalid_input,
         "penalty " + std::to_string(penalty) + " below stability threshold; minimal admissible penalty is " +
             std::to_string(p_min));
  const P2DofMap map = p2_dof_map(mesh);
  std::vector<Triplet> entries;

  if (terms & kVolumeTerm) {
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
      const Element el = element(mesh, t);
      const double weight = integrate_coefficient(el, f);
      const auto lap = p2_laplacians(el);
      const auto d = p2_element_dofs(map, mesh, t);
      for (int a = 0; a < 6; ++a) {
        if (d[a] < 0) continue;
        for (int b = 0; b < 6; ++b)
          if (d[b] >= 0) entries.push_back({d[a], d[b], weight * lap[a] * lap[b]});
      }
    }
  }

  if (terms & (kConsistencyTerm | kPenaltyTerm)) {
    struct EdgeDof {
      int dof;
      double jump;  // [d_n phi]
      double mean;  // {f laplace phi}
    };
    for (int e = 0; e < map.edges.size(); ++e) {
      if (map.edges.on_boundary(e)) continue;
      const auto& pa = mesh.vertices[map.edges.vertices[e][0]];
      const auto& pb = mesh.vertices[map.edges.vertices[e][1]];
      const double len = edge_length(pa, pb);
      const int t_plus = map.edges.triangles[e][0];
      const int t_minus = map.edges.triangles[e][1];
      const Element el_plus = element(mesh, t_plus);
      const Element el_minus = element(mesh, t_minus);
      // Unit normal pointing out of the '+' triangle.
      Vec2 normal{(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len};
      {
        int opp = 0;
        for (int k = 0; k < 3; ++k) {
          const int v = mesh.triangles[t_plus][k];
          if (v != map.edges.vertices[e][0] && v != map.edges.vertices[e][1]) opp = k;
        }
        const Vec2 to_opp{el_plus.p[opp][0] - pa[0], el_plus.p[opp][1] - pa[1]};
        if (dot(normal, to_opp) > 0.0) normal = {-normal[0], -normal[1]};
      }
      const auto dofs_plus = p2_element_dofs(map, mesh, t_plus);
      const auto dofs_minus = p2_element_dofs(map, mesh, t_minus);
      const auto lap_plus = p2_laplacians(el_plus);
      const auto lap_minus = p2_laplacians(el_minus);

      for (int q = 0; q < 3; ++q) {
        const double s = kGaussNodes[q];
        const Point2 x{pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])};
        const double w = kGaussWeights[q] * len;
        const double fx = positive_coefficient_at(f, x);
        std::vector<EdgeDof> local;
        local.reserve(9);
        auto add = [&local](int dof, double jump, double mean) {
          if (dof < 0) return;
          for (auto& ld : local) {
            if (ld.dof == dof) {
              ld.jump += jump;
              ld.mean += mean;
              return;
            }
          }
          local.push_back({dof, jump, mean});
        };
        const auto grads_plus = p2_gradients(el_plus, barycentric(el_plus, x));
        const auto grads_minus = p2_gradients(el_minus, barycentric(el_minus, x));
        for (int a = 0; a < 6; ++a) {
          add(dofs_plus[a], dot(grads_plus[a], normal), 0.5 * fx * lap_plus[a]);
          add(dofs_minus[a], -dot(grads_minus[a], normal), 0.5 * fx * lap_minus[a]);
        }
        for (const auto& ti : local) {
          for (const auto& tj : local) {
            double v = 0.0;
            if (terms & kConsistencyTerm) v -= ti.mean * tj.jump + tj.mean * ti.jump;
            if (terms & kPenaltyTerm) v += penalty * fx * ti.jump * tj.jump;
            entries.push_back({ti.dof, tj.dof, w * v});
          }
        }
      }
    }
  }
  return symmetrize(CsrMatrix::from_triplets(map.size, map.size, std::move(entries)));
}

CsrMatrix assemble_system(ProblemFamily family, const TriMesh& mesh, const CoefficientField& f) {
  if (family == ProblemFamily::poisson) return assemble_poisson_p1(mesh, f);
  return assemble_biharmonic_ip(mesh, f, default_penalty(mesh));
}

Vector assemble_rhs(const TriMesh& mesh, ProblemFamily family, const RhsSpec& spec) {
  const int n = family == ProblemFamily::poisson ? mesh.num_interior_vertices()
                                                 : p2_dof_map(mesh).size;
  if (spec.kind == RhsSpec::Kind::seeded_random) {
    Rng rng(derive_seed(spec.seed, "rhs"));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector b(n);
    for (double& v : b) v = normal(rng);
    const double norm = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    for (double& v : b) v /= norm;
    return b;
  }
  Vector b(n, 0.0);
  // Midpoint rule on each element: exact for constant g times a P1 or P2 basis function.
  if (family == ProblemFamily::poisson) {
    const std::vector<int> dof = p1_dof_map(mesh);
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
      const double share = spec.value * signed_area(mesh, t) / 3.0;
      for (int v : mesh.triangles[t])
        if (dof[v] >= 0) b[dof[v]] += share;
    }
  } else {
    const P2DofMap map = p2_dof_map(mesh);
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
      // Vertex basis functions vanish at the edge midpoints; midpoint functions equal 1
      // at their own midpoint.
      const double share = spec.value * signed_area(mesh, t) / 3.0;
      for (int k = 0; k < 3; ++k) {
        const int d = map.edge_dof[map.edges.tri_edge[t][k]];
        if (d >= 0) b[d] += share;
      }
    }
  }
  return b;
}

double inverse_residual(const CsrMatrix& a, const DenseMatrix& a_inv) {
  DenseMatrix prod = DenseMatrix::Zero(a.rows(), a_inv.cols());
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  for (int i = 0; i < a.rows(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k) prod.row(i) += v[k] * a_inv.row(ci[k]);
  prod -= DenseMatrix::Identity(a.rows(), a_inv.cols());
  return prod.cwiseAbs().rowwise().sum().maxCoeff();
}

DenseMatrix compute_inverse(const CsrMatrix& a) {
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "compute_inverse: A must be square");
  const int n = a.rows();
  if (n == 0) return DenseMatrix(0, 0);
  const Eigen::MatrixXd dense = a.to_dense();
  Eigen::LLT<Eigen::MatrixXd> llt(dense);
  if (llt.info() != Eigen::Success)
    fail(ErrorCategory::numerical_failure, "compute_inverse: Cholesky factorization failed");
  DenseMatrix inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const double res = inverse_residual(a, inv);
  if (!(res < 1e-8))
    fail(ErrorCategory::numerical_failure,
         "compute_inverse: residual " + std::to_string(res) + " exceeds 1e-8");
  return inv;
}

}  // namespace spaigen
