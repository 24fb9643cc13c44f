#pragma once

#include "spaigen/dataset.hpp"
#include "spaigen/model.hpp"
#include "spaigen/solvers.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spaigen {

enum class EigenPath { automatic, dense, lanczos };

/// Largest dimension handled by the dense eigensolver when the path is automatic.
inline constexpr int kDenseEigenLimit = 2000;

struct SpectrumBounds {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

/// Extreme eigenvalues of F^T A F for P = F F^T (of A itself when p is null). The dense
/// path forms the operator column by column; the Lanczos path uses full reorthogonalization.
SpectrumBounds extreme_eigenvalues(const CsrMatrix& a, const Preconditioner* p = nullptr,
                                   EigenPath path = EigenPath::automatic);

/// Two-sided condition number lambda_max / lambda_min of F^T A F. Throws numerical_failure
/// when the computed lambda_min is not positive.
double condition_number(const CsrMatrix& a, const Preconditioner* p = nullptr,
                        EigenPath path = EigenPath::automatic);

/// nnz_cost / n^2.
double density(const Preconditioner& p);

struct MethodSpec {
  enum class Kind { identity, jacobi, ic_droptol, ic_matched, gcvae };
  Kind kind = Kind::jacobi;
  std::optional<double> droptol;  // ic_droptol; empty means the family default
};

/// Accepts "identity", "jacobi", "ic_droptol", "ic_droptol(<t>)", "ic_matched", "gcvae".
MethodSpec parse_method(std::string_view text);
/// Comma-separated list; parentheses may not contain commas.
std::vector<MethodSpec> parse_methods(std::string_view text);

/// 0.12 for Poisson, 1.2e-4 for the biharmonic family.
double default_droptol(ProblemFamily family) noexcept;

struct BenchmarkRow {
  std::string method;
  int n = 0;
  double mean_iterations = 0.0;
  double mean_condition = 0.0;  // two-sided, converged solves only
  double mean_density = 0.0;
  int sample_count = 0;
  int unconverged = 0;
};

struct SampleResult {
  std::string method;
  int sample_index = 0;
  int iterations = 0;
  bool converged = false;
  double condition = 0.0;  // 0 when the solve did not converge (not computed)
  double density = 0.0;
};

struct MatchReport {
  bool matched = false;
  double droptol = 0.0;
  double mean_iterations = 0.0;
  double target_iterations = 0.0;
  int steps = 0;
};

enum class LatentPolicy { prior_mean, prior_sample };

struct BenchmarkOptions {
  double tol = 1e-5;
  int max_iter = 0;  // 0 means 10 n
  EigenPath eigen_path = EigenPath::automatic;
  const Gcvae* model = nullptr;  // required by gcvae and ic_matched
  LatentPolicy latent = LatentPolicy::prior_mean;
  std::uint64_t seed = 0;  // latent draws under prior_sample
  double match_tolerance = 0.05;
  int max_bisection_steps = 20;
  double droptol_low = 1e-8;
  double droptol_high = 1.0;
  bool keep_generated = false;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::vector<SampleResult> samples;
  std::optional<MatchReport> match;
  std::vector<CsrMatrix> generated;  // gcvae factors in test-set order, when kept
  double tol = 0.0;
};

/// Generated factor for one sample: R = decode(z, g(A)) on the sample's mask.
CsrMatrix generate_factor(const Gcvae& model, const ProblemSample& sample, LatentPolicy latent,
                          std::uint64_t seed);

/// Runs every method over the test samples with PCG from x0 = 0. Unconverged solves count
/// max_iter iterations, are flagged, and are left out of the condition average. The matched
/// IC mode bisects droptol in log space until its mean iteration count lies within
/// match_tolerance of the gcvae mean.
BenchmarkReport run_benchmark(const std::vector<ProblemSample>& test,
                              const std::vector<MethodSpec>& methods,
                              const BenchmarkOptions& options);

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows);
void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);
std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path);

/// Rows, per-sample results and match details; condition numbers are labelled two-sided.
std::string benchmark_json(const BenchmarkReport& report);

}  // namespace spaigen
