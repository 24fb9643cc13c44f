#include "spaigen/dataset.hpp"
#include "spaigen/error.hpp"
#include "spaigen/fem.hpp"
#include "spaigen/mesh.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace spaigen;
namespace fs = std::filesystem;

namespace {

double min_eig(const CsrMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(a.to_dense()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Five-point stencil written out by hand from grid coordinates.
DenseMatrix five_point_oracle(const TriMesh& mesh) {
  const std::vector<int> dof = p1_dof_map(mesh);
  const double h = mesh.spacing;
  int n = 0;
  for (int d : dof) n = std::max(n, d + 1);
  DenseMatrix o = DenseMatrix::Zero(n, n);
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (dof[v] < 0) continue;
    for (int w = 0; w < mesh.num_vertices(); ++w) {
      if (dof[w] < 0) continue;
      const long dx = std::lround((mesh.vertices[v][0] - mesh.vertices[w][0]) / h);
      const long dy = std::lround((mesh.vertices[v][1] - mesh.vertices[w][1]) / h);
      if (dx == 0 && dy == 0) o(dof[v], dof[w]) = 4.0;
      else if (std::labs(dx) + std::labs(dy) == 1) o(dof[v], dof[w]) = -1.0;
    }
  }
  return o;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("generate_mesh") {
  const TriMesh one = generate_mesh(1, 3);
  CHECK(one.num_vertices() == 5);
  CHECK(one.num_interior_vertices() == 1);

  const TriMesh a = generate_mesh(100, 1), b = generate_mesh(100, 2);
  CHECK_NOTHROW(validate(a));
  CHECK_NOTHROW(validate(b));
  CHECK(a.vertices != b.vertices);
  for (const TriMesh* m : {&a, &b}) CHECK(std::abs(m->num_interior_vertices() - 100) <= 10);
  CHECK(is_delaunay(a));
  CHECK(mesh_fingerprint(generate_mesh(100, 1)) == mesh_fingerprint(a));

  MeshReport report;
  const TriMesh big = generate_mesh(1873, 5, &report);
  CHECK(big.num_interior_vertices() == 1873);
  CHECK_FALSE(report.fell_back);
  CHECK_THROWS_AS(generate_mesh(0, 1), Error);
}

TEST_CASE("structured mesh invariants") {
  const TriMesh m = structured_mesh(3);
  CHECK_NOTHROW(validate(m));
  CHECK(m.num_interior_vertices() == 9);
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t) CHECK(signed_area(m, t) > 0);
}

TEST_CASE("coefficient sampling") {
  CHECK(coefficient_acceptable(CoefficientField::constant(1.0)));
  const CoefficientField corner{{1.0, -0.5, -0.5, 0, 0, 0}};
  CHECK(corner(1.0, 1.0) == 0.0);
  CHECK_FALSE(coefficient_acceptable(corner));
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const CoefficientField f = sample_coefficient(rng);
    CHECK(grid_minimum(f) > kCoefficientMargin);
    CHECK(f.coeffs[0] >= 1.0);
    CHECK(f.coeffs[0] <= 2.0);
  }
}

TEST_CASE("poisson assembly reproduces the five-point stencil") {
  for (int m : {3, 6}) {
    const TriMesh mesh = structured_mesh(m);
    const DenseMatrix a = assemble_poisson_p1(mesh, CoefficientField::constant(1.0)).to_dense();
    const DenseMatrix oracle = five_point_oracle(mesh);
    CHECK((a - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("poisson assembly is linear in the coefficient and SPD") {
  const TriMesh mesh = generate_mesh(60, 4);
  const CsrMatrix a1 = assemble_poisson_p1(mesh, CoefficientField::constant(1.0));
  const CsrMatrix a2 = assemble_poisson_p1(mesh, CoefficientField::constant(2.0));
  CHECK(a1.same_pattern(a2));
  for (int k = 0; k < a1.nnz(); ++k) CHECK(std::abs(a2.values()[k] - 2.0 * a1.values()[k]) <= 1e-13);

  Rng rng(21);
  for (int i = 0; i < 5; ++i) {
    const CsrMatrix a = assemble_poisson_p1(mesh, sample_coefficient(rng));
    CHECK(asymmetry(a) < 1e-12);
    CHECK(min_eig(a) > 0);
  }
  CHECK_THROWS_AS(assemble_poisson_p1(mesh, CoefficientField::constant(-1.0)), Error);
}

TEST_CASE("biharmonic assembly") {
  const TriMesh mesh = generate_mesh(30, 8);
  const double pen = default_penalty(mesh);
  const CsrMatrix v1 = assemble_biharmonic_ip(mesh, CoefficientField::constant(1.0), pen, kVolumeTerm);
  const CsrMatrix v2 = assemble_biharmonic_ip(mesh, CoefficientField::constant(2.0), pen, kVolumeTerm);
  CHECK(v1.same_pattern(v2));
  for (int k = 0; k < v1.nnz(); ++k) CHECK(v2.values()[k] == doctest::Approx(2.0 * v1.values()[k]).epsilon(1e-14));

  Rng rng(31);
  for (int i = 0; i < 3; ++i) {
    const CsrMatrix a = assemble_biharmonic_ip(mesh, sample_coefficient(rng), pen);
    CHECK(asymmetry(a) < 1e-12);
    CHECK(min_eig(a) > 0);
  }
  CHECK_THROWS_AS(assemble_biharmonic_ip(mesh, CoefficientField::constant(1.0), 0.5 * penalty_min(mesh)),
                  Error);
}

TEST_CASE("biharmonic system size on the largest configuration") {
  const TriMesh mesh = generate_mesh(256, 1);
  CHECK(p2_dof_map(mesh).size == 1089);
}

TEST_CASE("right-hand side") {
  const TriMesh mesh = structured_mesh(5);
  RhsSpec zero;
  zero.value = 0.0;
  for (double v : assemble_rhs(mesh, ProblemFamily::poisson, zero)) CHECK(v == 0.0);

  // Every interior vertex of the structured grid touches six triangles of area h^2 / 2.
  const double h = mesh.spacing;
  for (double v : assemble_rhs(mesh, ProblemFamily::poisson)) CHECK(v == doctest::Approx(h * h).epsilon(1e-13));

  RhsSpec rnd;
  rnd.kind = RhsSpec::Kind::seeded_random;
  rnd.seed = 4;
  const Vector b = assemble_rhs(mesh, ProblemFamily::biharmonic, rnd);
  double s = 0.0;
  for (double v : b) s += v * v;
  CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
}

TEST_CASE("compute_inverse") {
  CHECK(compute_inverse(CsrMatrix::identity(3)) == DenseMatrix::Identity(3, 3));
  const double d[] = {2.0, 4.0};
  const DenseMatrix inv = compute_inverse(CsrMatrix::diagonal(d));
  CHECK(inv(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(inv(1, 1) == doctest::Approx(0.25).epsilon(1e-15));
  const CsrMatrix t = CsrMatrix::from_triplets(
      3, 3, {{0, 0, 2}, {0, 1, -1}, {1, 0, -1}, {1, 1, 2}, {1, 2, -1}, {2, 1, -1}, {2, 2, 2}});
  DenseMatrix oracle(3, 3);
  oracle << 3, 2, 1, 2, 4, 2, 1, 2, 3;
  oracle /= 4.0;
  CHECK((compute_inverse(t) - oracle).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(compute_inverse(CsrMatrix::from_triplets(2, 2, {{0, 0, 1}, {1, 1, -1}})), Error);
}

TEST_CASE("dataset generation, split and persistence") {
  CHECK(test_count(2000) == 400);
  CHECK(test_count(300) == 60);
  const TriMesh mesh = generate_mesh(16, 2);
  const DatasetSplit split = generate_dataset(ProblemFamily::poisson, mesh, 10, 0.0, 77);
  CHECK(split.train.size() == 8);
  CHECK(split.test.size() == 2);
  std::vector<int> seen;
  for (const auto* part : {&split.train, &split.test})
    for (const auto& s : *part) {
      seen.push_back(s.index);
      CHECK(s.a.same_pattern(split.train.front().a));
      CHECK(inverse_residual(s.a, *s.a_inv) < 1e-8);
    }
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < 10; ++i) CHECK(seen[i] == i);

  const fs::path root = fs::temp_directory_path() / "spaigen_test_dataset";
  fs::remove_all(root);
  save_dataset(split, root / "a");
  save_dataset(generate_dataset(ProblemFamily::poisson, mesh, 10, 0.0, 77), root / "b");
  CHECK(read_all(root / "a" / "manifest.json") == read_all(root / "b" / "manifest.json"));
  CHECK_NOTHROW(validate_manifest(root / "a"));

  const DatasetSplit back = load_dataset(root / "a");
  REQUIRE(back.test.size() == 2);
  CHECK(back.test[0].a.same_pattern(split.test[0].a));
  CHECK(*back.test[0].a_inv == *split.test[0].a_inv);
  CHECK(back.test[0].mask == split.test[0].mask);

  // tampering with a listed file invalidates the manifest
  char stem[32];
  std::snprintf(stem, sizeof stem, "sample_%05d_b.txt", split.test[0].index);
  {
    std::ofstream f(root / "a" / "test" / stem, std::ios::app);
    f << "0\n";
  }
  CHECK_THROWS_AS(validate_manifest(root / "a"), Error);
  fs::remove_all(root);
}

TEST_CASE("biharmonic masks get the extra budget") {
  const TriMesh mesh = generate_mesh(9, 3);
  const DatasetSplit split = generate_dataset(ProblemFamily::biharmonic, mesh, 5, 0.2, 5);
  for (const auto* part : {&split.train, &split.test})
    for (const auto& s : *part) CHECK(s.mask.size() == s.a.nnz() + extra_budget(0.2, s.a.nnz()));
}
