#include "spaigen/error.hpp"
#include "spaigen/fem.hpp"
#include "spaigen/mesh.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/solvers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace spaigen;

namespace {

CsrMatrix tridiag(int n) {
  std::vector<Triplet> t;
  for (int i = 0; i < n; ++i) {
    t.push_back({i, i, 2.0});
    if (i > 0) t.push_back({i, i - 1, -1.0});
    if (i + 1 < n) t.push_back({i, i + 1, -1.0});
  }
  return CsrMatrix::from_triplets(n, n, t);
}

DenseMatrix random_spd(int n, Rng& rng, double diag_boost = 1.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  DenseMatrix b(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b(i, j) = g(rng);
  DenseMatrix a = b * b.transpose();
  a.diagonal().array() += diag_boost;
  return a;
}

Vector random_vector(int n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (double& x : v) x = g(rng);
  return v;
}

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// R = L^-T for A = L L^T, so R^T A R = I.
CsrMatrix inverse_cholesky_factor(const DenseMatrix& a) {
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(a)};
  const Eigen::MatrixXd l = llt.matrixL();
  const Eigen::MatrixXd r = l.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  return CsrMatrix::from_dense(r);
}

void check_symmetric_positive(const Preconditioner& p, Rng& rng) {
  for (int k = 0; k < 50; ++k) {
    const Vector x = random_vector(p.n, rng), y = random_vector(p.n, rng);
    const Vector px = p(x), py = p(y);
    const double scale = std::sqrt(dot(x, x) * dot(y, y)) *
                         std::max(1.0, std::sqrt(dot(px, px) / dot(x, x)));
    CHECK(std::abs(dot(x, py) - dot(y, px)) < 1e-10 * scale);
    CHECK(dot(x, px) > 0.0);
  }
}

}  // namespace

TEST_CASE("pcg trivial cases") {
  Rng rng(1);
  const Vector b = random_vector(6, rng);
  const CGResult r = pcg(CsrMatrix::identity(6), b, identity_precond(6), 1e-12, 50);
  CHECK(r.report.converged);
  CHECK(r.report.iterations == 1);
  CHECK(r.report.rel_residuals.size() == 2);
  CHECK(r.report.rel_residuals.front() == 1.0);

  const double d[] = {1.0, 5.0, 0.25, 9.0};
  const CsrMatrix a = CsrMatrix::diagonal(d);
  const CGResult j = pcg(a, Vector{1, 2, 3, 4}, jacobi_precond(a), 1e-12, 50);
  CHECK(j.report.converged);
  CHECK(j.report.iterations == 1);

  const CGResult zero = pcg(a, Vector(4, 0.0), jacobi_precond(a), 1e-12, 50);
  CHECK(zero.report.converged);
  CHECK(zero.report.iterations == 0);
}

TEST_CASE("pcg on tridiag matches a dense solve") {
  const CsrMatrix a = tridiag(10);
  const Vector b(10, 1.0);
  const CGResult r = pcg(a, b, identity_precond(10), 1e-10, 100);
  CHECK(r.report.converged);
  CHECK(r.report.iterations <= 10);
  const Eigen::VectorXd x = Eigen::MatrixXd(a.to_dense()).llt().solve(Eigen::VectorXd::Ones(10));
  for (int i = 0; i < 10; ++i) CHECK(std::abs(r.x[i] - x[i]) < 1e-8);
  CHECK(r.report.rel_residuals.back() <= 1e-10);
}

TEST_CASE("pcg reports non-convergence and breakdown") {
  const CsrMatrix a = tridiag(30);
  const CGResult r = pcg(a, Vector(30, 1.0), identity_precond(30), 1e-12, 3);
  CHECK_FALSE(r.report.converged);
  CHECK(r.report.iterations == 3);

  const CsrMatrix indefinite = CsrMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, -1.0}});
  CHECK_THROWS_AS(pcg(indefinite, Vector{0.0, 1.0}, identity_precond(2), 1e-10, 10), Error);
  CHECK_THROWS_AS(pcg(a, Vector(30, 1.0), identity_precond(30), 0.0, 10), Error);
  CHECK_THROWS_AS(pcg(a, Vector(29, 1.0), identity_precond(30), 1e-8, 10), Error);
}

TEST_CASE("identity preconditioner reproduces plain CG") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 25;
    const CsrMatrix a = CsrMatrix::from_dense(random_spd(n, rng));
    const Vector b = random_vector(n, rng);
    std::vector<Vector> xs_p, xs_c;
    const CGResult p = pcg(a, b, identity_precond(n), 1e-12, 200, &xs_p);
    const CGResult c = cg(a, b, 1e-12, 200, &xs_c);
    REQUIRE(xs_p.size() == xs_c.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < xs_p.size(); ++k)
      for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(xs_p[k][i] - xs_c[k][i]));
    CHECK(worst < 1e-14);
    CHECK(p.report.rel_residuals == c.report.rel_residuals);
  }
}

TEST_CASE("error decreases monotonically in the A-norm") {
  Rng rng(3);
  const int n = 20;
  const DenseMatrix ad = random_spd(n, rng);
  const CsrMatrix a = CsrMatrix::from_dense(ad);
  const Vector b = random_vector(n, rng);
  const Eigen::VectorXd xstar =
      Eigen::MatrixXd(ad).llt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), n));
  for (const Preconditioner& p : {identity_precond(n), jacobi_precond(a), ic_droptol(a, 0.1)}) {
    std::vector<Vector> xs;
    pcg(a, b, p, 1e-10, 200, &xs);
    double prev = xstar.dot(Eigen::VectorXd(ad * xstar));
    for (const Vector& x : xs) {
      const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(x.data(), n) - xstar;
      const double en = e.dot(Eigen::VectorXd(ad * e));
      CHECK(en <= prev * (1.0 + 1e-12) + 1e-24);
      prev = en;
    }
  }
}

TEST_CASE("jacobi preconditioner") {
  const Preconditioner id = jacobi_precond(CsrMatrix::identity(4));
  CHECK(id(Vector{1, 2, 3, 4}) == Vector{1, 2, 3, 4});
  const double d[] = {2.0, 4.0};
  const Preconditioner p = jacobi_precond(CsrMatrix::diagonal(d));
  CHECK(p(Vector{2, 4}) == Vector{1, 1});
  CHECK(p.nnz_cost == 2);
  const double bad[] = {1.0, 0.0};
  CHECK_THROWS_AS(jacobi_precond(CsrMatrix::diagonal(bad)), Error);
}

TEST_CASE("jacobi does not raise kappa on badly scaled SPD matrices") {
  Rng rng(4);
  std::uniform_real_distribution<double> expo(-3.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 8;
    DenseMatrix a = random_spd(n, rng, 2.0);
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) s[i] = std::pow(10.0, expo(rng));
    a = s.asDiagonal() * a * s.asDiagonal();
    auto kappa = [](const Eigen::MatrixXd& m) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
      return es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
    };
    const Eigen::VectorXd dinv = a.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd scaled = dinv.asDiagonal() * Eigen::MatrixXd(a) * dinv.asDiagonal();
    CHECK(kappa(scaled) <= kappa(Eigen::MatrixXd(a)));
  }
}

TEST_CASE("ic_droptol") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20;
    const CsrMatrix a = CsrMatrix::from_dense(random_spd(n, rng));
    const Preconditioner p = ic_droptol(a, 0.0);
    const CGResult r = pcg(a, random_vector(n, rng), p, 1e-10, 50);
    CHECK(r.report.converged);
    CHECK(r.report.iterations == 1);
    CHECK(p.shift == 0.0);
  }

  // keep-only-diagonal sentinel: L = diag(sqrt(a_ii)), the same operator as Jacobi
  const TriMesh mesh = generate_mesh(40, 2);
  const CsrMatrix a = assemble_poisson_p1(mesh, CoefficientField::constant(1.3));
  const Preconditioner diag_only = ic_droptol(a, kDropAllOffDiagonal);
  const Preconditioner jac = jacobi_precond(a);
  const Vector y = random_vector(a.rows(), rng);
  const Vector u = diag_only(y), v = jac(y);
  for (int i = 0; i < a.rows(); ++i) CHECK(u[i] == doctest::Approx(v[i]).epsilon(1e-14));
  CHECK(diag_only.nnz_cost == 2 * a.rows());

  // a moderate tolerance sits between the extremes
  const Preconditioner mid = ic_droptol(a, 0.12);
  CHECK(mid.label == "ic_droptol(0.12)");
  const Vector b(a.rows(), 1.0);
  const int it_mid = pcg(a, b, mid, 1e-5, 1000).report.iterations;
  const int it_jac = pcg(a, b, jac, 1e-5, 1000).report.iterations;
  CHECK(it_mid < it_jac);
  CHECK_THROWS_AS(ic_droptol(a, -1.0), Error);
}

TEST_CASE("ic_droptol shifts the diagonal on pivot breakdown") {
  // Slightly indefinite: the first shift (1e-3 * mean diag) restores a positive pivot.
  const CsrMatrix near = CsrMatrix::from_triplets(
      2, 2, {{0, 0, 1.0}, {0, 1, 1.0005}, {1, 0, 1.0005}, {1, 1, 1.0}});
  const Preconditioner shifted = ic_droptol(near, 0.0);
  CHECK(shifted.shift == doctest::Approx(1e-3));
  // Far from SPD: five doublings are not enough.
  const CsrMatrix bad = CsrMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 2.0}, {1, 1, 1.0}});
  CHECK_THROWS_AS(ic_droptol(bad, 0.0), Error);
  Rng rng(6);
  check_symmetric_positive(shifted, rng);
}

TEST_CASE("spai preconditioner") {
  const Preconditioner id = spai_precond(CsrMatrix::identity(3));
  CHECK(id(Vector{1, -2, 3}) == Vector{1, -2, 3});
  CHECK(id.nnz_cost == 3);

  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 15;
    const DenseMatrix ad = random_spd(n, rng);
    const CsrMatrix a = CsrMatrix::from_dense(ad);
    const CGResult r = pcg(a, random_vector(n, rng), spai_precond(inverse_cholesky_factor(ad)),
                           1e-10, 50);
    CHECK(r.report.converged);
    CHECK(r.report.iterations <= 2);
  }

  // R = diag(1/sqrt(a_ii)) gives R R^T = diag(A)^-1, the Jacobi operator
  const TriMesh mesh = generate_mesh(50, 3);
  const CsrMatrix a = assemble_poisson_p1(mesh, CoefficientField{{1.5, 0.3, -0.2, 0.1, 0, 0}});
  Vector rd(a.rows());
  for (int i = 0; i < a.rows(); ++i) rd[i] = 1.0 / std::sqrt(a.at(i, i));
  const Vector b(a.rows(), 1.0);
  const CGResult s = pcg(a, b, spai_precond(CsrMatrix::diagonal(rd)), 1e-5, 1000);
  const CGResult j = pcg(a, b, jacobi_precond(a), 1e-5, 1000);
  CHECK(s.report.iterations == j.report.iterations);
}

TEST_CASE("dense inverse preconditioner converges at once") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 20;
    const DenseMatrix ad = random_spd(n, rng);
    const CsrMatrix a = CsrMatrix::from_dense(ad);
    const CGResult r =
        pcg(a, random_vector(n, rng), dense_precond(DenseMatrix(ad.inverse())), 1e-10, 50);
    CHECK(r.report.converged);
    CHECK(r.report.iterations <= 2);
  }
}

TEST_CASE("every preconditioner is symmetric and positive") {
  Rng rng(9);
  const TriMesh mesh = generate_mesh(30, 5);
  const CsrMatrix a = assemble_poisson_p1(mesh, CoefficientField::constant(1.0));
  const int n = a.rows();
  DenseMatrix rdense = DenseMatrix::Identity(n, n);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int i = 0; i + 1 < n; ++i) rdense(i, i + 1) = u(rng);
  check_symmetric_positive(identity_precond(n), rng);
  check_symmetric_positive(jacobi_precond(a), rng);
  check_symmetric_positive(ic_droptol(a, 0.05), rng);
  check_symmetric_positive(spai_precond(CsrMatrix::from_dense(rdense)), rng);
  check_symmetric_positive(dense_precond(DenseMatrix(a.to_dense().inverse())), rng);
}

TEST_CASE("factor form reproduces the operator") {
  Rng rng(10);
  const TriMesh mesh = generate_mesh(20, 6);
  const CsrMatrix a = assemble_poisson_p1(mesh, CoefficientField::constant(2.0));
  const int n = a.rows();
  for (const Preconditioner& p : {jacobi_precond(a), ic_droptol(a, 0.1), ic_droptol(a, 0.0),
                                  dense_precond(DenseMatrix(a.to_dense().inverse()))}) {
    const Vector x = random_vector(n, rng);
    Vector ft(n), fft(n);
    p.factor_t(x, ft);
    p.factor(ft, fft);
    const Vector px = p(x);
    for (int i = 0; i < n; ++i) CHECK(fft[i] == doctest::Approx(px[i]).epsilon(1e-12));
  }
}
