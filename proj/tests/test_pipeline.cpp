#include "spaigen/error.hpp"
#include "spaigen/matrix_market.hpp"
#include "spaigen/pipeline.hpp"
#include "spaigen/plot.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace spaigen;
namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("no error thrown");
  return ErrorCategory::invalid_input;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

RunConfig smoke_config(const fs::path& out) {
  RunConfig c;
  c.target_n = 25;
  c.samples = 10;
  c.seed = 3;
  c.model_profile = "smoke";
  c.train_profile = "smoke";
  c.epochs = 2;
  c.out = out;
  return c;
}

}  // namespace

TEST_CASE("run config parsing") {
  const RunConfig c = parse(
      "# comment\n"
      "family = \"biharmonic\"\n"
      "target_n = 300\n"
      "samples = 40\n"
      "seed = 12\n"
      "tol = 1e-6\n"
      "methods = \"jacobi,ic_droptol(1e-4)\"\n"
      "latent = \"prior_sample\"\n");
  CHECK(c.family == ProblemFamily::biharmonic);
  CHECK(c.target_n == 300);
  CHECK(c.samples == 40);
  CHECK(c.seed == 12);
  CHECK(c.tol == 1e-6);
  CHECK(c.latent == LatentPolicy::prior_sample);
  const RunConfig r = c.resolved();
  CHECK(*r.extra_fraction == 0.2);
  CHECK(*r.model_profile == "biharmonic");
  CHECK(r.dataset_dir() == fs::path("run") / "dataset");
  CHECK(r.checkpoint_path() == fs::path("run") / "model" / "model.ckpt");

  CHECK(*RunConfig{}.resolved().extra_fraction == 0.0);
}

TEST_CASE("run config rejects bad input before anything runs") {
  CHECK(category_of([] { parse("colour = 3\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("seed = 1\nseed = 2\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("[section]\nseed = 1\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("family = \"heat\"\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("target_n = ten\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("tol = 2\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("methods = \"jacobi,bogus\"\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("extra_fraction = 1.5\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { parse("model_profile = \"giant\"\n"); }) == ErrorCategory::config_error);
  CHECK(category_of([] { load_run_config("/nonexistent/run.toml"); }) == ErrorCategory::io_error);
}

TEST_CASE("to_toml round trips") {
  RunConfig c;
  c.family = ProblemFamily::biharmonic;
  c.samples = 77;
  c.seed = 123456789012345ULL;
  c.learning_rate = 3e-4;
  c.tol = 1.0 / 3.0 * 1e-5;
  c.methods = "jacobi,ic_matched,gcvae";
  c.out = "some dir/with space";
  const RunConfig r = c.resolved();
  const RunConfig back = parse(r.to_toml());
  CHECK(back.to_toml() == r.to_toml());
  CHECK(back.tol == r.tol);
  CHECK(back.seed == r.seed);
  CHECK(back.out == r.out);
}

TEST_CASE("seed plan and mesh targets") {
  const SeedPlan a = derive_seeds(1), b = derive_seeds(1), c = derive_seeds(2);
  CHECK(a.mesh == b.mesh);
  CHECK(a.train == b.train);
  CHECK(a.mesh != c.mesh);
  CHECK(a.mesh != a.dataset);
  // n = 4T + 4 (floor sqrt T + 1) - 3: T = 256 gives 1024 + 68 - 3 = 1089
  CHECK(biharmonic_interior_target(1089) == 256);
  CHECK(biharmonic_interior_target(1) == 1);
  const TriMesh m = mesh_for_target(ProblemFamily::poisson, 40, 1);
  CHECK(m.num_interior_vertices() == 40);
}

TEST_CASE("gen-data is deterministic and stages through a partial directory") {
  const fs::path root = fresh_dir("spaigen_test_gen");
  RunConfig c = smoke_config(root / "a");
  const GenDataResult r1 = cmd_gen_data(c);
  CHECK(r1.n == 25);
  CHECK(r1.train == 8);
  CHECK(r1.test == 2);
  CHECK(fs::exists(root / "a" / "dataset" / "manifest.json"));
  CHECK(fs::exists(root / "a" / "dataset" / "run_config.toml"));
  CHECK_FALSE(fs::exists(root / "a" / "dataset.partial"));

  c.out = root / "b";
  const GenDataResult r2 = cmd_gen_data(c);
  CHECK(r1.manifest_hash == r2.manifest_hash);

  c.seed = 4;
  c.out = root / "c";
  CHECK(cmd_gen_data(c).manifest_hash != r1.manifest_hash);
  fs::remove_all(root);
}

TEST_CASE("train, infer and bench on a smoke run") {
  const fs::path root = fresh_dir("spaigen_test_run");
  const RunConfig c = smoke_config(root);
  cmd_gen_data(c);

  // classical methods need no checkpoint
  RunConfig classical = c;
  classical.methods = "jacobi,ic_droptol";
  const BenchOutcome b0 = cmd_bench(classical);
  CHECK(b0.report.rows.size() == 2);
  CHECK(read_all(b0.csv).rfind("method,n,mean_iterations,mean_condition,mean_density,sample_count\n", 0) == 0);

  // gcvae without a checkpoint is a config error
  CHECK(category_of([&] { cmd_bench(c); }) == ErrorCategory::config_error);

  const TrainOutcome t = cmd_train(c);
  CHECK(t.epochs_run == 2);
  CHECK(fs::exists(t.checkpoint));
  CHECK(fs::exists(c.model_dir() / "train_summary.json"));
  CHECK(fs::exists(c.model_dir() / "run_config.toml"));

  const BenchOutcome b = cmd_bench(c);
  REQUIRE(b.report.rows.size() == 3);
  CHECK(b.report.rows[2].method == "gcvae");
  CHECK(b.plots.size() == 3);
  for (const auto& p : b.plots) CHECK(read_all(p).find("<svg") != std::string::npos);
  CHECK(read_all(b.json).find("two-sided") != std::string::npos);

  // infer: k factors on the mask, distinct and reproducible
  const DatasetSplit split = load_dataset(c.resolved().dataset_dir(), false);
  const fs::path mtx = root / "a.mtx";
  {
    std::ofstream f(mtx);
    mm::write_matrix(f, split.test[0].a);
  }
  InferOptions io;
  io.count = 3;
  io.seed = 9;
  io.out = root / "infer1";
  const auto files = cmd_infer(t.checkpoint, mtx, io);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "R_000.mtx");
  io.out = root / "infer2";
  const auto again = cmd_infer(t.checkpoint, mtx, io);
  for (int k = 0; k < 3; ++k) CHECK(read_all(files[k]) == read_all(again[k]));
  CHECK(read_all(files[0]) != read_all(files[1]));
  std::ifstream f0(files[0]);
  CHECK(pattern_of(mm::read_matrix(f0)) == build_mask(split.test[0].a, 0.0));

  CHECK(category_of([&] { cmd_infer(root / "missing.ckpt", mtx, io); }) == ErrorCategory::io_error);
  fs::remove_all(root);
}

TEST_CASE("plot merges csv files") {
  const fs::path root = fresh_dir("spaigen_test_plot");
  fs::create_directories(root);
  std::vector<BenchmarkRow> a{{"jacobi", 100, 20, 50, 0.01, 10, 0}, {"gcvae", 100, 12, 20, 0.04, 10, 0}};
  std::vector<BenchmarkRow> b{{"jacobi", 400, 40, 200, 0.0025, 10, 0}, {"gcvae", 400, 20, 60, 0.01, 10, 0}};
  write_benchmark_csv(root / "a.csv", a);
  write_benchmark_csv(root / "b.csv", b);
  const auto plots = cmd_plot({root / "a.csv", root / "b.csv"}, root / "plots");
  REQUIRE(plots.size() == 3);
  const std::string svg = read_all(plots[0]);
  CHECK(svg.find("jacobi") != std::string::npos);
  CHECK(svg.find("gcvae") != std::string::npos);
  CHECK(category_of([&] { cmd_plot({}, root); }) == ErrorCategory::config_error);
  fs::remove_all(root);
}
