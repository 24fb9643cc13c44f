#include "spaigen/dataset.hpp"
#include "spaigen/error.hpp"
#include "spaigen/mesh.hpp"
#include "spaigen/model.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace spaigen;
namespace fs = std::filesystem;

namespace {

DenseMatrix random_dense(int n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  DenseMatrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = g(rng);
  return m;
}

// Dense oracles written with plain loops.
double oracle_recon(const DenseMatrix& a, const DenseMatrix& r) {
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
  return s;
}

double oracle_kl(const Vector& mu, const Vector& lv) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += 1.0 + lv[i] - mu[i] * mu[i] - std::exp(lv[i]);
  return -0.5 * s;
}

bool close_rel(double got, double ref, double tol) {
  return std::abs(got - ref) <= tol * std::max(1.0, std::abs(ref));
}

const DatasetSplit& tiny_split() {
  static const DatasetSplit split =
      generate_dataset(ProblemFamily::poisson, generate_mesh(10, 5), 10, 0.0, 23);
  return split;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("loss hand values") {
  CHECK(kl_divergence({1.0}, {0.0}) == 0.5);
  CHECK(kl_divergence({0.0, 0.0}, {0.0, 0.0}) == 0.0);
  const double four[] = {4.0}, one[] = {1.0};
  const CsrMatrix a = CsrMatrix::diagonal(four), r = CsrMatrix::diagonal(one);
  CHECK(total_loss(a, r, {0.0}, {0.0}, 0.1) == 9.0);
  CHECK(total_loss(a, r, {1.0}, {0.0}, 0.1) == doctest::Approx(9.05));
  CHECK_THROWS_AS(kl_divergence({1.0}, {0.0, 0.0}), Error);
}

TEST_CASE("losses match dense oracles on random instances") {
  Rng rng(101);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution keep(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + trial % 5;
    DenseMatrix b = random_dense(n, rng);
    DenseMatrix a = b * b.transpose();
    a.diagonal().array() += 1.0;
    DenseMatrix r = random_dense(n, rng) * 0.3;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && !keep(rng)) r(i, j) = 0.0;
    Vector mu(6), lv(6);
    for (int i = 0; i < 6; ++i) {
      mu[i] = g(rng);
      lv[i] = 0.5 * g(rng);
    }
    const CsrMatrix sa = CsrMatrix::from_dense(a), sr = CsrMatrix::from_dense(r);
    const double recon = oracle_recon(a, r), kl = oracle_kl(mu, lv);
    const double fr = frobenius_residual(sa, sr);
    CHECK(close_rel(fr * fr, recon, 1e-12));
    CHECK(close_rel(kl_divergence(mu, lv), kl, 1e-12));
    CHECK(close_rel(total_loss(sa, sr, mu, lv, 0.1), recon + 0.1 * kl, 1e-12));
  }
}

TEST_CASE("reconstruction gradient matches finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 6;
    DenseMatrix b = random_dense(n, rng);
    DenseMatrix a = b * b.transpose();
    a.diagonal().array() += 2.0;
    const CsrMatrix sa = CsrMatrix::from_dense(a);
    CsrMatrix r = apply_mask(random_dense(n, rng) * 0.2, build_mask(sa, 0.0));
    double loss = 0.0;
    const Vector grad = reconstruction_gradient(sa, r, &loss);
    const double fr = frobenius_residual(sa, r);
    CHECK(close_rel(loss, fr * fr, 1e-12));
    REQUIRE(static_cast<int>(grad.size()) == r.nnz());
    const double h = 1e-6;
    for (int k = 0; k < r.nnz(); ++k) {
      CsrMatrix rp = r, rm = r;
      rp.values_mut()[k] += h;
      rm.values_mut()[k] -= h;
      const double fp = frobenius_residual(sa, rp), fm = frobenius_residual(sa, rm);
      const double numeric = (fp * fp - fm * fm) / (2.0 * h);
      CHECK(std::abs(grad[k] - numeric) <= 1e-5 * std::max(1.0, std::abs(numeric)));
    }
  }
}

TEST_CASE("model gradient check on a small sample") {
  const DatasetSplit& split = tiny_split();
  ModelConfig cfg = ModelConfig::for_profile("smoke", split.dim(), 3);
  cfg.output_scale = suggest_output_scale(split);
  const GradientCheckReport rep = gradient_check(cfg, split.train.front(), 1e-3, 60, 5);
  CHECK(rep.checked >= 60);
  CHECK(rep.max_relative_error < 1e-4);
}

TEST_CASE("suggest_output_scale") {
  DatasetSplit split;
  ProblemSample s;
  const double d[] = {4.0, 4.0};
  s.a = CsrMatrix::diagonal(d);
  split.train.push_back(s);
  CHECK(suggest_output_scale(split) == 0.5);
}

TEST_CASE("training reduces the loss and logs every epoch") {
  const DatasetSplit& split = tiny_split();
  ModelConfig mc = ModelConfig::for_profile("smoke", split.dim(), 11);
  mc.output_scale = suggest_output_scale(split);
  TrainConfig tc = TrainConfig::for_profile("smoke", 12);
  tc.epochs = 6;
  tc.batch_size = 4;
  const fs::path dir = fs::temp_directory_path() / "spaigen_test_train";
  fs::remove_all(dir);
  fs::create_directories(dir);
  tc.log_path = dir / "a.csv";
  int seen = 0;
  const TrainResult r = train(split, mc, tc, [&](const TrainRecord&) { ++seen; });
  CHECK(seen == static_cast<int>(r.records.size()));
  REQUIRE(r.records.size() >= 2);
  CHECK(r.records.back().mean_recon < r.records.front().mean_recon);
  for (const auto& rec : r.records) CHECK(rec.mean_total == doctest::Approx(rec.mean_recon + 0.1 * rec.mean_kl));

  const std::string log = read_all(tc.log_path);
  CHECK(log.rfind("epoch,mean_recon,mean_kl,mean_total,learning_rate\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == static_cast<long>(r.records.size()) + 1);

  // identical seeds give a byte-identical log
  tc.log_path = dir / "b.csv";
  train(split, mc, tc);
  CHECK(read_all(dir / "a.csv") == read_all(dir / "b.csv"));
  fs::remove_all(dir);
}

TEST_CASE("training config validation") {
  TrainConfig tc = TrainConfig::for_profile("small", 1);
  CHECK(tc.epochs == 60);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  CHECK_THROWS_AS(TrainConfig::for_profile("nope", 1), Error);

  // a dataset without inverses cannot be trained on
  DatasetSplit split = tiny_split();
  split.train.front().a_inv.reset();
  const ModelConfig mc = ModelConfig::for_profile("smoke", split.dim(), 1);
  CHECK_THROWS_AS(train(split, mc, TrainConfig::for_profile("smoke", 1)), Error);
  // nor with a model of a different size
  CHECK_THROWS_AS(train(tiny_split(), ModelConfig::for_profile("smoke", split.dim() + 1, 1),
                        TrainConfig::for_profile("smoke", 1)),
                  Error);
}

TEST_CASE("divergence halves the learning rate and eventually fails") {
  const DatasetSplit& split = tiny_split();
  ModelConfig mc = ModelConfig::for_profile("smoke", split.dim(), 11);
  mc.output_scale = suggest_output_scale(split);
  TrainConfig tc = TrainConfig::for_profile("smoke", 3);
  tc.epochs = 3;
  // lr 2 blows up twice, then 0.5 is stable
  tc.learning_rate = 2.0;
  tc.max_lr_halvings = 6;
  const TrainResult r = train(split, mc, tc);
  CHECK(r.lr_halvings == 2);
  REQUIRE(r.records.size() == 3);
  for (const auto& rec : r.records) {
    CHECK(std::isfinite(rec.mean_total));
    CHECK(rec.learning_rate == 0.5);
  }

  tc.learning_rate = 100.0;
  tc.max_lr_halvings = 2;
  try {
    train(split, mc, tc);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::numerical_failure);
  }
}

TEST_CASE("standard_normal is seeded") {
  CHECK(standard_normal(5, 1) == standard_normal(5, 1));
  CHECK(standard_normal(5, 1) != standard_normal(5, 2));
}
