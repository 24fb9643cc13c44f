#pragma once

#include "spaigen/mesh.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/sparse.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace spaigen {

enum class ProblemFamily { poisson, biharmonic };

std::string_view family_name(ProblemFamily f) noexcept;
ProblemFamily parse_family(std::string_view name);

/// f(x, y) = c0 + c1 x + c2 y + c3 x y + c4 x^2 + c5 y^2
struct CoefficientField {
  std::array<double, 6> coeffs{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};

  double operator()(double x, double y) const noexcept {
    return coeffs[0] + coeffs[1] * x + coeffs[2] * y + coeffs[3] * x * y + coeffs[4] * x * x +
           coeffs[5] * y * y;
  }
  double operator()(const Point2& p) const noexcept { return (*this)(p[0], p[1]); }

  static CoefficientField constant(double c) { return {{c, 0.0, 0.0, 0.0, 0.0, 0.0}}; }
};

/// Positivity margin enforced on the 10 x 10 acceptance grid over [0, 1]^2.
inline constexpr double kCoefficientMargin = 0.05;

/// Minimum of f over the 10 x 10 grid {i/9} x {j/9}.
double grid_minimum(const CoefficientField& f);
bool coefficient_acceptable(const CoefficientField& f);

/// c0 ~ U[1, 2], c1..c5 ~ U[-0.5, 0.5], resampled until grid_minimum > 0.05.
CoefficientField sample_coefficient(Rng& rng);

/// Degrees of freedom of the continuous quadratic space with boundary values removed.
struct P2DofMap {
  MeshEdges edges;
  std::vector<int> vertex_dof;  // -1 for boundary vertices
  std::vector<int> edge_dof;    // -1 for boundary edges
  std::vector<Point2> coords;   // per dof
  int size = 0;
};

/// Interior vertices in mesh order.
std::vector<int> p1_dof_map(const TriMesh& mesh);
P2DofMap p2_dof_map(const TriMesh& mesh);

/// Stiffness matrix of -div(f grad u) with P1 elements and homogeneous Dirichlet data,
/// restricted to interior vertices. Element integrals use the edge-midpoint rule.
CsrMatrix assemble_poisson_p1(const TriMesh& mesh, const CoefficientField& f);

/// Which parts of the interior-penalty form to assemble. Tests use the split to check
/// each term separately; production code uses all.
enum BiharmonicTerms : unsigned {
  kVolumeTerm = 1u,
  kConsistencyTerm = 2u,
  kPenaltyTerm = 4u,
  kAllTerms = 7u,
};

inline constexpr double kPenaltySafetyFactor = 10.0;  // sigma_0
inline constexpr double kQuadraticTraceConstant = 1.0;

/// sigma_0 * C_2 * max over interior edges of 1/h_e, where h_e is the smaller height of
/// the two adjacent triangles measured from the edge.
double penalty_min(const TriMesh& mesh);
inline double default_penalty(const TriMesh& mesh) { return 2.0 * penalty_min(mesh); }

/// C0 interior-penalty discretization of laplace(f laplace u) with quadratic Lagrange
/// elements. u = 0 is imposed strongly (boundary vertex and edge dofs removed) and
/// laplace(u) = 0 weakly (no boundary-edge terms). Rejects penalty < penalty_min(mesh).
CsrMatrix assemble_biharmonic_ip(const TriMesh& mesh, const CoefficientField& f, double penalty,
                                 unsigned terms = kAllTerms);

CsrMatrix assemble_system(ProblemFamily family, const TriMesh& mesh, const CoefficientField& f);

struct RhsSpec {
  enum class Kind { constant, seeded_random };
  Kind kind = Kind::constant;
  double value = 1.0;  // g for Kind::constant
  std::uint64_t seed = 0;
};

/// b_i = integral of g * phi_i for constant g, or a unit-norm seeded random vector.
Vector assemble_rhs(const TriMesh& mesh, ProblemFamily family, const RhsSpec& spec = {});

/// Dense inverse through a Cholesky factorization. Throws Error(numerical_failure) when
/// the factorization fails or ||A A^-1 - I||_inf >= 1e-8.
DenseMatrix compute_inverse(const CsrMatrix& a);

/// Max row-sum norm of A * A_inv - I.
double inverse_residual(const CsrMatrix& a, const DenseMatrix& a_inv);

}  // namespace spaigen
