#include "spaigen/error.hpp"
#include "spaigen/matrix_market.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/sparse.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

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

DenseMatrix random_sparse_dense(int rows, int cols, double fill, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::bernoulli_distribution keep(fill);
  DenseMatrix d = DenseMatrix::Zero(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      if (keep(rng)) d(i, j) = u(rng);
  return d;
}

// Independent oracle: plain triple loops on dense storage.
double dense_residual(const DenseMatrix& a, const DenseMatrix& r) {
  const int n = static_cast<int>(a.rows());
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double m = 0.0;
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) m += r(k, i) * a(k, l) * r(l, j);
      const double e = (i == j ? 1.0 : 0.0) - m;
      s += e * e;
    }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("csr construction rejects broken structure") {
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 1}, {0}, {1.0}), Error);              // row_ptr too short
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}), Error);   // unsorted columns
  CHECK_THROWS_AS(CsrMatrix(2, 2, {0, 1, 2}, {0, 2}, {1.0, 1.0}), Error);   // column out of range
  CHECK_NOTHROW(CsrMatrix(2, 2, {0, 1, 2}, {0, 1}, {0.0, 0.0}));            // stored zeros are fine
}

TEST_CASE("spmv small cases") {
  const Vector x{1, 2, 3};
  CHECK(spmv(CsrMatrix::identity(3), x) == x);
  const double d[] = {2, 3};
  CHECK(spmv(CsrMatrix::diagonal(d), Vector{1, 1}) == Vector{2, 3});
  CHECK_THROWS_AS(spmv(CsrMatrix::identity(3), Vector{1, 2}), Error);
}

TEST_CASE("spmv matches dense multiplication") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = trial < 50 ? 5 : 10;
    const DenseMatrix d = random_sparse_dense(n, n, 0.4, rng);
    const CsrMatrix a = CsrMatrix::from_dense(d);
    Vector x(n);
    for (double& v : x) v = u(rng);
    const Vector y = spmv(a, x);
    const Vector yt = spmv_transposed(a, x);
    for (int i = 0; i < n; ++i) {
      double ref = 0.0, ref_t = 0.0;
      for (int j = 0; j < n; ++j) {
        ref += d(i, j) * x[j];
        ref_t += d(j, i) * x[j];
      }
      CHECK(std::abs(y[i] - ref) < 1e-13);
      CHECK(std::abs(yt[i] - ref_t) < 1e-13);
    }
  }
}

TEST_CASE("frobenius residual hand values") {
  CHECK(frobenius_residual(CsrMatrix::identity(3), CsrMatrix::identity(3)) == 0.0);
  const double four[] = {4.0}, half[] = {0.5}, one[] = {1.0};
  CHECK(frobenius_residual(CsrMatrix::diagonal(four), CsrMatrix::diagonal(half)) == 0.0);
  CHECK(frobenius_residual(CsrMatrix::diagonal(four), CsrMatrix::diagonal(one)) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK_THROWS_AS(frobenius_residual(CsrMatrix::identity(3), CsrMatrix::identity(2)), Error);
}

TEST_CASE("frobenius residual matches dense oracle") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 6;
    const DenseMatrix b = random_sparse_dense(n, n, 0.5, rng);
    DenseMatrix a = b * b.transpose() + DenseMatrix::Identity(n, n);
    const DenseMatrix r = random_sparse_dense(n, n, 0.5, rng);
    const double got = frobenius_residual(CsrMatrix::from_dense(a), CsrMatrix::from_dense(r));
    const double ref = dense_residual(a, r);
    CHECK(std::abs(got - ref) <= 1e-12 * ref);
  }
}

TEST_CASE("apply_mask keeps exactly the mask positions") {
  DenseMatrix ones = DenseMatrix::Ones(3, 3);
  const CsrMatrix diag = apply_mask(ones, SparsityMask::diagonal(3));
  CHECK(diag.to_dense() == DenseMatrix::Identity(3, 3));

  DenseMatrix counting(3, 3);
  counting << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const CsrMatrix full = apply_mask(counting, SparsityMask::full(3));
  CHECK(full.to_dense() == counting);

  const SparsityMask m(3, {{0, 0}, {1, 2}, {2, 2}, {1, 1}});
  const CsrMatrix picked = apply_mask(counting, m);
  CHECK(picked.at(0, 0) == 1);
  CHECK(picked.at(1, 2) == 6);
  CHECK(picked.at(2, 2) == 9);
  CHECK(picked.nnz() == m.size());

  // zeros at mask positions survive as stored entries
  const CsrMatrix zeros = apply_mask(DenseMatrix::Zero(3, 3), m);
  CHECK(zeros.nnz() == m.size());
  CHECK(pattern_of(zeros) == m);
}

TEST_CASE("mask requires the diagonal and valid positions") {
  CHECK_THROWS_AS(SparsityMask(2, {{0, 0}}), Error);
  CHECK_THROWS_AS(SparsityMask(2, {{0, 0}, {1, 1}, {2, 0}}), Error);
}

TEST_CASE("build_mask") {
  const CsrMatrix t = tridiag(5);
  CHECK(build_mask(t, 0.0) == pattern_of(t));
  CHECK(build_mask(CsrMatrix::identity(4), 0.5) == SparsityMask::diagonal(4));

  // pattern(A^2) adds |i - j| = 2; there are 6 such positions and a budget of ceil(0.5*13) = 7
  const SparsityMask m = build_mask(t, 0.5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(m.contains(i, j) == (std::abs(i - j) <= 2));

  // budget smaller than the candidate set: ceil(0.1*13) = 2 extras, taken in (row, col) order
  // since every candidate has |(A^2)_ij| = 1
  const SparsityMask small = build_mask(t, 0.1);
  CHECK(small.size() == t.nnz() + 2);
  CHECK(small.contains(0, 2));
  CHECK(small.contains(1, 3));
  CHECK(extra_budget(0.2, 13) == 3);
}

TEST_CASE("build_mask is monotone in the fraction") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    DenseMatrix d = random_sparse_dense(12, 12, 0.2, rng);
    d = d + d.transpose().eval();
    d.diagonal().array() += 3.0;
    const CsrMatrix a = CsrMatrix::from_dense(d);
    SparsityMask prev = build_mask(a, 0.0);
    for (double f : {0.05, 0.1, 0.2, 0.5, 1.0}) {
      const SparsityMask next = build_mask(a, f);
      for (auto [i, j] : prev.positions()) CHECK(next.contains(i, j));
      prev = next;
    }
  }
}

TEST_CASE("to_graph") {
  const GraphForm g = to_graph(CsrMatrix::identity(3));
  CHECK(g.adjacency.to_dense() == DenseMatrix::Identity(3, 3));
  CHECK(g.node_features == Vector{1, 1, 1});

  const GraphForm t = to_graph(tridiag(3));
  CHECK(t.node_features == Vector{2, 2, 2});
  CHECK(t.adjacency.at(0, 1) == -1);
  CHECK(t.adjacency.at(2, 1) == -1);
  CHECK(t.adjacency.nnz() == 7);

  // missing diagonal becomes an explicit zero self-loop
  const CsrMatrix a = CsrMatrix::from_triplets(3, 3, {{0, 0, 1.0}, {1, 2, 5.0}, {2, 1, 5.0}, {2, 2, 1.0}});
  const GraphForm h = to_graph(a);
  CHECK(h.adjacency.contains(1, 1));
  CHECK(h.adjacency.at(1, 1) == 0.0);
  CHECK(h.node_features[1] == 0.0);
  CHECK(h.adjacency.nnz() == a.nnz() + 1);
}

TEST_CASE("symmetrize and asymmetry") {
  const CsrMatrix a = CsrMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 2.5}, {1, 1, 1.0}});
  CHECK(asymmetry(a) == doctest::Approx(0.5));
  const CsrMatrix s = symmetrize(a);
  CHECK(asymmetry(s) == 0.0);
  CHECK(s.at(0, 1) == 2.25);
}

TEST_CASE("matrix market round trip") {
  Rng rng(3);
  const CsrMatrix a = CsrMatrix::from_dense(random_sparse_dense(7, 7, 0.3, rng));
  std::stringstream ss;
  mm::write_matrix(ss, a);
  const CsrMatrix b = mm::read_matrix(ss);
  CHECK(b.same_pattern(a));
  for (int k = 0; k < a.nnz(); ++k) CHECK(b.values()[k] == a.values()[k]);

  std::stringstream sym("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2\n2 1 -1\n");
  const CsrMatrix c = mm::read_matrix(sym);
  CHECK(c.at(0, 1) == -1);
  CHECK(c.at(1, 0) == -1);

  const SparsityMask m = build_mask(tridiag(4), 0.3);
  std::stringstream ms;
  mm::write_mask(ms, m);
  CHECK(mm::read_mask(ms) == m);

  std::stringstream broken("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n");
  CHECK_THROWS_AS(mm::read_matrix(broken), Error);
}
