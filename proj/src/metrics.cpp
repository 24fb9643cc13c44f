#include "spaigen/metrics.hpp"

#include "spaigen/error.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/training.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <fstream>
#include <sstream>

namespace spaigen {

using nlohmann::json;

namespace {

// y = F^T A F x, or A x without a preconditioner.
void operator_apply(const CsrMatrix& a, const Preconditioner* p, std::span<const double> x,
                    std::span<double> y) {
  if (!p) {
    const Vector v = spmv(a, x);
    std::copy(v.begin(), v.end(), y.begin());
    return;
  }
  Vector fx(x.size());
  p->factor(x, fx);
  const Vector afx = spmv(a, fx);
  p->factor_t(afx, y);
}

SpectrumBounds dense_bounds(const CsrMatrix& a, const Preconditioner* p) {
  const int n = a.rows();
  Eigen::MatrixXd m(n, n);
  Vector e(n, 0.0), col(n);
  for (int j = 0; j < n; ++j) {
    e[j] = 1.0;
    operator_apply(a, p, e, col);
    e[j] = 0.0;
    for (int i = 0; i < n; ++i) m(i, j) = col[i];
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    fail(ErrorCategory::numerical_failure, "dense eigensolver did not converge");
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

// Lanczos with full reorthogonalization; stops when both Ritz extremes settle.
SpectrumBounds lanczos_bounds(const CsrMatrix& a, const Preconditioner* p) {
  const int n = a.rows();
  const int max_steps = std::min(n, 600);
  std::vector<Vector> basis;
  Vector alpha, beta;
  Rng rng(derive_seed(0, "lanczos-start"));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Vector q(n);
  for (double& v : q) v = unif(rng);
  double nq = std::sqrt(std::inner_product(q.begin(), q.end(), q.begin(), 0.0));
  for (double& v : q) v /= nq;

  SpectrumBounds prev{0.0, 0.0}, cur{0.0, 0.0};
  Vector w(n);
  for (int k = 0; k < max_steps; ++k) {
    basis.push_back(q);
    operator_apply(a, p, q, w);
    const double ak = std::inner_product(w.begin(), w.end(), q.begin(), 0.0);
    alpha.push_back(ak);
    for (int pass = 0; pass < 2; ++pass)
      for (const Vector& b : basis) {
        const double c = std::inner_product(w.begin(), w.end(), b.begin(), 0.0);
        for (int i = 0; i < n; ++i) w[i] -= c * b[i];
      }
    const double bk = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));

    const int m = static_cast<int>(alpha.size());
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t, Eigen::EigenvaluesOnly);
    cur = {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
    const bool invariant = bk <= 1e-12 * std::abs(cur.lambda_max);
    if (invariant || k + 1 == max_steps) break;
    if (k >= 10 && std::abs(cur.lambda_min - prev.lambda_min) <= 1e-10 * std::abs(cur.lambda_min) &&
        std::abs(cur.lambda_max - prev.lambda_max) <= 1e-10 * std::abs(cur.lambda_max))
      break;
    prev = cur;
    beta.push_back(bk);
    for (int i = 0; i < n; ++i) q[i] = w[i] / bk;
  }
  return cur;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_tol(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

struct MethodRun {
  std::vector<SampleResult> samples;
  BenchmarkRow row;
};

int resolve_max_iter(const BenchmarkOptions& o, int n) { return o.max_iter > 0 ? o.max_iter : 10 * n; }

// Solves every sample with the preconditioner returned by make(sample, i).
template <class Make>
MethodRun run_method(const std::vector<ProblemSample>& test, const std::string& label,
                     const BenchmarkOptions& o, bool with_condition, Make&& make) {
  MethodRun run;
  run.row.method = label;
  run.row.n = test.front().dim();
  double iter_sum = 0.0, cond_sum = 0.0, dens_sum = 0.0;
  int cond_count = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ProblemSample& s = test[i];
    const Preconditioner p = make(s, i);
    const int max_iter = resolve_max_iter(o, s.dim());
    const CGResult res = pcg(s.a, s.b, p, o.tol, max_iter);
    SampleResult sr;
    sr.method = label;
    sr.sample_index = s.index;
    sr.converged = res.report.converged;
    sr.iterations = sr.converged ? res.report.iterations : max_iter;
    sr.density = density(p);
    if (with_condition && sr.converged) {
      sr.condition = condition_number(s.a, &p, o.eigen_path);
      cond_sum += sr.condition;
      ++cond_count;
    }
    if (!sr.converged) ++run.row.unconverged;
    iter_sum += sr.iterations;
    dens_sum += sr.density;
    run.samples.push_back(sr);
  }
  const double count = static_cast<double>(test.size());
  run.row.sample_count = static_cast<int>(test.size());
  run.row.mean_iterations = iter_sum / count;
  run.row.mean_density = dens_sum / count;
  run.row.mean_condition =
      cond_count > 0 ? cond_sum / cond_count : std::numeric_limits<double>::quiet_NaN();
  return run;
}

}  // namespace

SpectrumBounds extreme_eigenvalues(const CsrMatrix& a, const Preconditioner* p, EigenPath path) {
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "eigenvalues: matrix not square");
  if (p && p->n != a.rows())
    fail(ErrorCategory::dimension_mismatch, "eigenvalues: preconditioner size differs");
  if (path == EigenPath::automatic)
    path = a.rows() <= kDenseEigenLimit ? EigenPath::dense : EigenPath::lanczos;
  return path == EigenPath::dense ? dense_bounds(a, p) : lanczos_bounds(a, p);
}

double condition_number(const CsrMatrix& a, const Preconditioner* p, EigenPath path) {
  const SpectrumBounds s = extreme_eigenvalues(a, p, path);
  if (!(s.lambda_min > 0.0))
    fail(ErrorCategory::numerical_failure,
         "condition_number: smallest eigenvalue " + format_double(s.lambda_min) +
             " is not positive");
  return s.lambda_max / s.lambda_min;
}

double density(const Preconditioner& p) {
  const double n = p.n;
  return static_cast<double>(p.nnz_cost) / (n * n);
}

MethodSpec parse_method(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  const std::string_view t = trim(text);
  MethodSpec m;
  if (t == "identity") m.kind = MethodSpec::Kind::identity;
  else if (t == "jacobi") m.kind = MethodSpec::Kind::jacobi;
  else if (t == "gcvae") m.kind = MethodSpec::Kind::gcvae;
  else if (t == "ic_matched") m.kind = MethodSpec::Kind::ic_matched;
  else if (t == "ic_droptol") m.kind = MethodSpec::Kind::ic_droptol;
  else if (t.starts_with("ic_droptol(") && t.ends_with(")")) {
    m.kind = MethodSpec::Kind::ic_droptol;
    const std::string arg(t.substr(11, t.size() - 12));
    char* end = nullptr;
    const double v = std::strtod(arg.c_str(), &end);
    if (arg.empty() || end != arg.c_str() + arg.size() || !(v >= 0.0))
      fail(ErrorCategory::config_error, "bad drop tolerance in method '" + std::string(t) + "'");
    m.droptol = v;
  } else {
    fail(ErrorCategory::config_error,
         "unknown method '" + std::string(t) +
             "' (expected identity, jacobi, ic_droptol, ic_droptol(<t>), ic_matched, gcvae)");
  }
  return m;
}

std::vector<MethodSpec> parse_methods(std::string_view text) {
  std::vector<MethodSpec> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
    out.push_back(parse_method(text.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double default_droptol(ProblemFamily family) noexcept {
  return family == ProblemFamily::poisson ? 0.12 : 1.2e-4;
}

CsrMatrix generate_factor(const Gcvae& model, const ProblemSample& sample, LatentPolicy latent,
                          std::uint64_t seed) {
  const int d = model.config().latent_dim;
  const Vector z = latent == LatentPolicy::prior_mean
                       ? Vector(d, 0.0)
                       : standard_normal(d, derive_seed(seed, "bench-latent",
                                                        static_cast<std::uint64_t>(sample.index)));
  return model.infer(sample.a, sample.mask, z);
}

BenchmarkReport run_benchmark(const std::vector<ProblemSample>& test,
                              const std::vector<MethodSpec>& methods,
                              const BenchmarkOptions& options) {
  if (test.empty()) fail(ErrorCategory::invalid_input, "run_benchmark: empty test set");
  if (methods.empty()) fail(ErrorCategory::config_error, "run_benchmark: no methods given");
  if (!(options.tol > 0.0)) fail(ErrorCategory::config_error, "run_benchmark: tol must be > 0");
  const int n = test.front().dim();
  for (const auto& s : test)
    if (s.dim() != n || s.mask.dim() != n || static_cast<int>(s.b.size()) != n)
      fail(ErrorCategory::dimension_mismatch, "run_benchmark: samples differ in dimension");
  const ProblemFamily family = test.front().family;

  BenchmarkReport report;
  report.tol = options.tol;
  const bool needs_model = std::any_of(methods.begin(), methods.end(), [](const MethodSpec& m) {
    return m.kind == MethodSpec::Kind::gcvae || m.kind == MethodSpec::Kind::ic_matched;
  });
  if (needs_model && !options.model)
    fail(ErrorCategory::config_error, "gcvae and ic_matched need a trained checkpoint");
  if (options.model) {
    if (options.model->config().n != n)
      fail(ErrorCategory::dimension_mismatch,
           "checkpoint serves n = " + std::to_string(options.model->config().n) +
               ", test set has n = " + std::to_string(n));
  }

  // Generated factors are shared by the gcvae row and the matched target.
  std::vector<CsrMatrix> factors;
  std::optional<MethodRun> gcvae_run;
  auto ensure_gcvae = [&]() -> const MethodRun& {
    if (!gcvae_run) {
      for (const auto& s : test)
        factors.push_back(generate_factor(*options.model, s, options.latent, options.seed));
      gcvae_run = run_method(test, "gcvae", options, true,
                             [&](const ProblemSample&, std::size_t i) { return spai_precond(factors[i]); });
    }
    return *gcvae_run;
  };

  for (const MethodSpec& m : methods) {
    MethodRun run;
    switch (m.kind) {
      case MethodSpec::Kind::identity:
        run = run_method(test, "identity", options, true,
                         [](const ProblemSample& s, std::size_t) { return identity_precond(s.dim()); });
        break;
      case MethodSpec::Kind::jacobi:
        run = run_method(test, "jacobi", options, true,
                         [](const ProblemSample& s, std::size_t) { return jacobi_precond(s.a); });
        break;
      case MethodSpec::Kind::ic_droptol: {
        const double t = m.droptol.value_or(default_droptol(family));
        run = run_method(test, "ic_droptol(" + format_tol(t) + ")", options, true,
                         [t](const ProblemSample& s, std::size_t) { return ic_droptol(s.a, t); });
        break;
      }
      case MethodSpec::Kind::gcvae:
        run = ensure_gcvae();
        break;
      case MethodSpec::Kind::ic_matched: {
        const double target = ensure_gcvae().row.mean_iterations;
        auto mean_iters = [&](double t) {
          return run_method(test, "", options, false, [t](const ProblemSample& s, std::size_t) {
                   return ic_droptol(s.a, t);
                 }).row.mean_iterations;
        };
        MatchReport match;
        match.target_iterations = target;
        double lo = std::log(options.droptol_low), hi = std::log(options.droptol_high);
        double best_gap = std::numeric_limits<double>::infinity();
        for (int step = 1; step <= options.max_bisection_steps; ++step) {
          const double t = std::exp(0.5 * (lo + hi));
          const double it = mean_iters(t);
          const double gap = std::abs(it - target) / target;
          match.steps = step;
          if (gap < best_gap) {
            best_gap = gap;
            match.droptol = t;
            match.mean_iterations = it;
          }
          if (gap <= options.match_tolerance) {
            match.matched = true;
            break;
          }
          // Larger drop tolerances give sparser factors and more iterations.
          if (it > target) hi = std::log(t);
          else lo = std::log(t);
        }
        const double t = match.droptol;
        run = run_method(test,
                         "ic_droptol(" + format_tol(t) + ")" +
                             (match.matched ? "[matched]" : "[unmatched]"),
                         options, true,
                         [t](const ProblemSample& s, std::size_t) { return ic_droptol(s.a, t); });
        report.match = match;
        break;
      }
    }
    report.rows.push_back(run.row);
    report.samples.insert(report.samples.end(), run.samples.begin(), run.samples.end());
  }
  if (options.keep_generated) report.generated = factors;
  return report;
}

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  out << "method,n,mean_iterations,mean_condition,mean_density,sample_count\n";
  for (const auto& r : rows)
    out << r.method << ',' << r.n << ',' << format_double(r.mean_iterations) << ','
        << format_double(r.mean_condition) << ',' << format_double(r.mean_density) << ','
        << r.sample_count << '\n';
}

void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  write_benchmark_csv(out, rows);
  if (!out) fail(ErrorCategory::io_error, "write failed: " + path.string());
}

std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io_error, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "method,n,mean_iterations,mean_condition,mean_density,sample_count")
    fail(ErrorCategory::io_error, path.string() + " is not a benchmark CSV");
  std::vector<BenchmarkRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6)
      fail(ErrorCategory::io_error, path.string() + ":" + std::to_string(line_no) + ": expected 6 columns");
    try {
      BenchmarkRow r;
      r.method = cells[0];
      r.n = std::stoi(cells[1]);
      r.mean_iterations = std::stod(cells[2]);
      r.mean_condition = std::stod(cells[3]);
      r.mean_density = std::stod(cells[4]);
      r.sample_count = std::stoi(cells[5]);
      rows.push_back(r);
    } catch (const std::exception&) {
      fail(ErrorCategory::io_error, path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

std::string benchmark_json(const BenchmarkReport& report) {
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"method", r.method},
                    {"n", r.n},
                    {"mean_iterations", num(r.mean_iterations)},
                    {"mean_condition_two_sided", num(r.mean_condition)},
                    {"mean_density", num(r.mean_density)},
                    {"sample_count", r.sample_count},
                    {"unconverged", r.unconverged}});
  json samples = json::array();
  for (const auto& s : report.samples)
    samples.push_back({{"method", s.method},
                       {"sample", s.sample_index},
                       {"iterations", s.iterations},
                       {"converged", s.converged},
                       {"condition_two_sided", s.converged ? num(s.condition) : json(nullptr)},
                       {"density", s.density}});
  json j = {{"tol", report.tol},
            {"condition_form", "two-sided: kappa(F^T A F) with P = F F^T"},
            {"rows", rows},
            {"samples", samples}};
  if (report.match)
    j["matched_ic"] = {{"matched", report.match->matched},
                       {"droptol", report.match->droptol},
                       {"mean_iterations", report.match->mean_iterations},
                       {"target_iterations", report.match->target_iterations},
                       {"bisection_steps", report.match->steps}};
  return j.dump(2);
}

}  // namespace spaigen
