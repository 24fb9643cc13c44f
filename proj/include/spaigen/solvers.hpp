#pragma once

#include "spaigen/sparse.hpp"

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spaigen {

/// `dense` holds an explicit dense SPD operator; it exists for oracle checks (P = A^-1).
enum class PreconditionerKind { identity, jacobi, ic_droptol, spai, dense };

std::string_view kind_name(PreconditionerKind k) noexcept;

using LinearMap = std::function<void(std::span<const double> x, std::span<double> y)>;

/// An SPD operator P ~ A^-1 available in factored form P = F F^T. The factor is what the
/// two-sided condition number needs: kappa(F^T A F) equals kappa of P A.
struct Preconditioner {
  PreconditionerKind kind = PreconditionerKind::identity;
  int n = 0;
  LinearMap apply;       // y = P x
  LinearMap factor;      // y = F x
  LinearMap factor_t;    // y = F^T x
  long long nnz_cost = 0;
  std::string label;
  double shift = 0.0;    // ic_droptol only: diagonal shift that made the factorization succeed

  Vector operator()(std::span<const double> x) const;
};

Preconditioner identity_precond(int n);

/// P = diag(A)^-1. Throws numerical_failure on a nonpositive diagonal entry.
Preconditioner jacobi_precond(const CsrMatrix& a);

/// Keep-nothing sentinel for ic_droptol: only the diagonal of L survives.
inline constexpr double kDropAllOffDiagonal = std::numeric_limits<double>::infinity();

/// Left-looking incomplete Cholesky A ~ L L^T. Entries with |L_ij| < droptol * ||A[:, j]||_2
/// are dropped as soon as column j is formed. A nonpositive pivot restarts the factorization
/// on A + beta I with beta = 1e-3 * mean(diag A), doubled on each further failure, at most
/// five shifted attempts. nnz_cost = 2 nnz(L).
Preconditioner ic_droptol(const CsrMatrix& a, double droptol);

/// P = R R^T, applied as two sparse products. nnz_cost = nnz(R), stored zeros included.
Preconditioner spai_precond(CsrMatrix r);

/// Explicit dense SPD P; the factor is its Cholesky factor.
Preconditioner dense_precond(DenseMatrix p);

struct CGReport {
  int iterations = 0;
  bool converged = false;
  std::vector<double> rel_residuals;  // [0] is the initial guess
  double wall_seconds = 0.0;
};

struct CGResult {
  Vector x;
  CGReport report;
};

/// Preconditioned CG from x0 = 0, stopping when ||r_k|| / ||b|| <= tol or k = max_iter.
/// Throws numerical_failure on p^T A p <= 0 or r^T z <= 0. When `iterates` is given, every
/// x_k (k >= 1) is appended.
CGResult pcg(const CsrMatrix& a, std::span<const double> b, const Preconditioner& p, double tol,
             int max_iter, std::vector<Vector>* iterates = nullptr);

/// Plain CG with no preconditioner hook at all; the reference for identity equivalence.
CGResult cg(const CsrMatrix& a, std::span<const double> b, double tol, int max_iter,
            std::vector<Vector>* iterates = nullptr);

}  // namespace spaigen
