#include "spaigen/solvers.hpp"

#include "spaigen/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

namespace spaigen {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_length(std::span<const double> x, std::span<double> y, int n, const char* who) {
  if (static_cast<int>(x.size()) != n || static_cast<int>(y.size()) != n)
    fail(ErrorCategory::dimension_mismatch, std::string(who) + ": vector length differs from n");
}

void copy_map(std::span<const double> x, std::span<double> y) {
  std::copy(x.begin(), x.end(), y.begin());
}

// Lower-triangular factor stored by columns, diagonal first in every column.
struct ColumnFactor {
  int n = 0;
  std::vector<int> col_ptr{0};
  std::vector<int> row_idx;
  std::vector<double> values;

  // L y = x
  void forward(std::span<const double> x, std::span<double> y) const {
    std::copy(x.begin(), x.end(), y.begin());
    for (int j = 0; j < n; ++j) {
      y[j] /= values[col_ptr[j]];
      const double yj = y[j];
      for (int k = col_ptr[j] + 1; k < col_ptr[j + 1]; ++k) y[row_idx[k]] -= values[k] * yj;
    }
  }
  // L^T y = x
  void backward(std::span<const double> x, std::span<double> y) const {
    for (int j = n - 1; j >= 0; --j) {
      double s = x[j];
      for (int k = col_ptr[j] + 1; k < col_ptr[j + 1]; ++k) s -= values[k] * y[row_idx[k]];
      y[j] = s / values[col_ptr[j]];
    }
  }
};

// Returns false on a nonpositive pivot.
bool factorize_ic(const CsrMatrix& at, std::span<const double> col_norm, double droptol,
                  double shift, ColumnFactor& out) {
  const int n = at.rows();
  std::vector<std::vector<std::pair<int, double>>> row_entries(n);  // (k, L_ik), k < i
  std::vector<double> w(n, 0.0);
  std::vector<char> marked(n, 0);
  std::vector<int> touched;
  out = ColumnFactor{};
  out.n = n;
  const auto rp = at.row_ptr();
  const auto ci = at.col_idx();
  const auto av = at.values();

  auto touch = [&](int i) {
    if (!marked[i]) {
      marked[i] = 1;
      touched.push_back(i);
    }
  };

  for (int j = 0; j < n; ++j) {
    touch(j);
    w[j] += shift;
    for (int k = rp[j]; k < rp[j + 1]; ++k) {
      if (ci[k] < j) continue;
      w[ci[k]] += av[k];
      touch(ci[k]);
    }
    for (const auto& [k, ljk] : row_entries[j]) {
      for (int p = out.col_ptr[k]; p < out.col_ptr[k + 1]; ++p) {
        const int i = out.row_idx[p];
        if (i < j) continue;
        w[i] -= out.values[p] * ljk;
        touch(i);
      }
    }
    const double pivot = w[j];
    if (!(pivot > 0.0) || !std::isfinite(pivot)) return false;
    const double ljj = std::sqrt(pivot);
    const double threshold = droptol * col_norm[j];
    std::sort(touched.begin(), touched.end());
    out.row_idx.push_back(j);
    out.values.push_back(ljj);
    for (int i : touched) {
      if (i > j) {
        const double v = w[i] / ljj;
        if (!(std::abs(v) < threshold)) {
          out.row_idx.push_back(i);
          out.values.push_back(v);
          row_entries[i].emplace_back(j, v);
        }
      }
      w[i] = 0.0;
      marked[i] = 0;
    }
    touched.clear();
    out.col_ptr.push_back(static_cast<int>(out.row_idx.size()));
  }
  return true;
}

std::string format_tol(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

}  // namespace

std::string_view kind_name(PreconditionerKind k) noexcept {
  switch (k) {
    case PreconditionerKind::identity: return "identity";
    case PreconditionerKind::jacobi: return "jacobi";
    case PreconditionerKind::ic_droptol: return "ic_droptol";
    case PreconditionerKind::spai: return "spai";
    case PreconditionerKind::dense: return "dense";
  }
  return "unknown";
}

Vector Preconditioner::operator()(std::span<const double> x) const {
  Vector y(x.size());
  apply(x, y);
  return y;
}

Preconditioner identity_precond(int n) {
  if (n < 1) fail(ErrorCategory::invalid_input, "identity_precond: n must be >= 1");
  Preconditioner p;
  p.kind = PreconditionerKind::identity;
  p.n = n;
  p.apply = p.factor = p.factor_t = [n](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "identity");
    copy_map(x, y);
  };
  p.nnz_cost = n;
  p.label = "identity";
  return p;
}

Preconditioner jacobi_precond(const CsrMatrix& a) {
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "jacobi_precond: matrix not square");
  const int n = a.rows();
  auto inv = std::make_shared<Vector>(n);
  auto inv_sqrt = std::make_shared<Vector>(n);
  for (int i = 0; i < n; ++i) {
    const double d = a.at(i, i);
    if (!(d > 0.0))
      fail(ErrorCategory::numerical_failure,
           "jacobi_precond: nonpositive diagonal at row " + std::to_string(i) + " (A not SPD)");
    (*inv)[i] = 1.0 / d;
    (*inv_sqrt)[i] = 1.0 / std::sqrt(d);
  }
  Preconditioner p;
  p.kind = PreconditionerKind::jacobi;
  p.n = n;
  p.apply = [n, inv](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "jacobi");
    for (int i = 0; i < n; ++i) y[i] = x[i] * (*inv)[i];
  };
  p.factor = p.factor_t = [n, inv_sqrt](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "jacobi");
    for (int i = 0; i < n; ++i) y[i] = x[i] * (*inv_sqrt)[i];
  };
  p.nnz_cost = n;
  p.label = "jacobi";
  return p;
}

Preconditioner ic_droptol(const CsrMatrix& a, double droptol) {
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "ic_droptol: matrix not square");
  if (!(droptol >= 0.0)) fail(ErrorCategory::invalid_input, "ic_droptol: droptol must be >= 0");
  const int n = a.rows();
  const CsrMatrix at = a.transpose();
  Vector col_norm(n);
  double diag_sum = 0.0;
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int k = at.row_ptr()[j]; k < at.row_ptr()[j + 1]; ++k) s += at.values()[k] * at.values()[k];
    col_norm[j] = std::sqrt(s);
    diag_sum += a.at(j, j);
  }

  auto factor = std::make_shared<ColumnFactor>();
  double shift = 0.0;
  bool ok = factorize_ic(at, col_norm, droptol, 0.0, *factor);
  if (!ok) {
    shift = 1e-3 * diag_sum / n;
    if (!(shift > 0.0))
      fail(ErrorCategory::numerical_failure, "ic_droptol: nonpositive mean diagonal");
    for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
      if (attempt > 0) shift *= 2.0;
      ok = factorize_ic(at, col_norm, droptol, shift, *factor);
    }
    if (!ok)
      fail(ErrorCategory::numerical_failure,
           "ic_droptol: pivot breakdown persists after five diagonal shifts");
  }

  Preconditioner p;
  p.kind = PreconditionerKind::ic_droptol;
  p.n = n;
  p.apply = [n, factor](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "ic_droptol");
    Vector t(n);
    factor->forward(x, t);
    factor->backward(t, y);
  };
  // P = L^-T L^-1, so F = L^-T.
  p.factor = [n, factor](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "ic_droptol");
    factor->backward(x, y);
  };
  p.factor_t = [n, factor](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "ic_droptol");
    factor->forward(x, y);
  };
  p.nnz_cost = 2LL * static_cast<long long>(factor->values.size());
  p.label = "ic_droptol(" + format_tol(droptol) + ")";
  p.shift = shift;
  return p;
}

Preconditioner spai_precond(CsrMatrix r) {
  if (!r.square()) fail(ErrorCategory::dimension_mismatch, "spai_precond: R must be square");
  const int n = r.rows();
  auto rr = std::make_shared<CsrMatrix>(std::move(r));
  Preconditioner p;
  p.kind = PreconditionerKind::spai;
  p.n = n;
  p.apply = [n, rr](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "spai");
    const Vector t = spmv_transposed(*rr, x);
    const Vector v = spmv(*rr, t);
    std::copy(v.begin(), v.end(), y.begin());
  };
  p.factor = [n, rr](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "spai");
    const Vector v = spmv(*rr, x);
    std::copy(v.begin(), v.end(), y.begin());
  };
  p.factor_t = [n, rr](std::span<const double> x, std::span<double> y) {
    check_length(x, y, n, "spai");
    const Vector v = spmv_transposed(*rr, x);
    std::copy(v.begin(), v.end(), y.begin());
  };
  p.nnz_cost = rr->nnz();
  p.label = "spai";
  return p;
}

Preconditioner dense_precond(DenseMatrix pm) {
  if (pm.rows() != pm.cols()) fail(ErrorCategory::dimension_mismatch, "dense_precond: not square");
  const int n = static_cast<int>(pm.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(pm).selfadjointView<Eigen::Lower>());
  if (llt.info() != Eigen::Success)
    fail(ErrorCategory::numerical_failure, "dense_precond: operator is not SPD");
  auto op = std::make_shared<Eigen::MatrixXd>(pm);
  auto lower = std::make_shared<Eigen::MatrixXd>(llt.matrixL());
  auto mul = [n](const Eigen::MatrixXd& m, bool transpose, std::span<const double> x,
                 std::span<double> y) {
    check_length(x, y, n, "dense");
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), n);
    Eigen::Map<Eigen::VectorXd> yv(y.data(), n);
    if (transpose) yv.noalias() = m.transpose() * xv;
    else yv.noalias() = m * xv;
  };
  Preconditioner p;
  p.kind = PreconditionerKind::dense;
  p.n = n;
  p.apply = [op, mul](std::span<const double> x, std::span<double> y) { mul(*op, false, x, y); };
  p.factor = [lower, mul](std::span<const double> x, std::span<double> y) {
    mul(*lower, false, x, y);
  };
  p.factor_t = [lower, mul](std::span<const double> x, std::span<double> y) {
    mul(*lower, true, x, y);
  };
  p.nnz_cost = static_cast<long long>(n) * n;
  p.label = "dense";
  return p;
}

CGResult pcg(const CsrMatrix& a, std::span<const double> b, const Preconditioner& p, double tol,
             int max_iter, std::vector<Vector>* iterates) {
  const auto start = std::chrono::steady_clock::now();
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "pcg: matrix not square");
  const int n = a.rows();
  if (static_cast<int>(b.size()) != n || p.n != n)
    fail(ErrorCategory::dimension_mismatch, "pcg: right-hand side or preconditioner size differs");
  if (!(tol > 0.0)) fail(ErrorCategory::invalid_input, "pcg: tol must be > 0");
  if (max_iter < 0) fail(ErrorCategory::invalid_input, "pcg: max_iter must be >= 0");

  CGResult out;
  out.x.assign(n, 0.0);
  CGReport& rep = out.report;
  Vector r(b.begin(), b.end());
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    rep.converged = true;
    rep.rel_residuals.push_back(0.0);
    return out;
  }
  rep.rel_residuals.push_back(norm2(r) / bnorm);
  if (rep.rel_residuals.back() <= tol) rep.converged = true;

  Vector z(n);
  p.apply(r, z);
  Vector dir = z;
  double rz = dot(r, z);
  if (!rep.converged && !(rz > 0.0))
    fail(ErrorCategory::numerical_failure, "pcg breakdown: r^T P r <= 0 (P not SPD)");

  for (int k = 1; k <= max_iter && !rep.converged; ++k) {
    const Vector q = spmv(a, dir);
    const double pap = dot(dir, q);
    if (!(pap > 0.0))
      fail(ErrorCategory::numerical_failure,
           "pcg breakdown at iteration " + std::to_string(k) + ": p^T A p <= 0 (A not SPD)");
    const double step = rz / pap;
    for (int i = 0; i < n; ++i) {
      out.x[i] += step * dir[i];
      r[i] -= step * q[i];
    }
    rep.iterations = k;
    rep.rel_residuals.push_back(norm2(r) / bnorm);
    if (iterates) iterates->push_back(out.x);
    if (rep.rel_residuals.back() <= tol) {
      rep.converged = true;
      break;
    }
    p.apply(r, z);
    const double rz_next = dot(r, z);
    if (!(rz_next > 0.0))
      fail(ErrorCategory::numerical_failure,
           "pcg breakdown at iteration " + std::to_string(k) + ": r^T P r <= 0 (P not SPD)");
    const double beta = rz_next / rz;
    for (int i = 0; i < n; ++i) dir[i] = z[i] + beta * dir[i];
    rz = rz_next;
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

CGResult cg(const CsrMatrix& a, std::span<const double> b, double tol, int max_iter,
            std::vector<Vector>* iterates) {
  const auto start = std::chrono::steady_clock::now();
  if (!a.square()) fail(ErrorCategory::dimension_mismatch, "cg: matrix not square");
  const int n = a.rows();
  if (static_cast<int>(b.size()) != n)
    fail(ErrorCategory::dimension_mismatch, "cg: right-hand side size differs");
  if (!(tol > 0.0)) fail(ErrorCategory::invalid_input, "cg: tol must be > 0");

  CGResult out;
  out.x.assign(n, 0.0);
  CGReport& rep = out.report;
  Vector r(b.begin(), b.end());
  const double bnorm = norm2(b);
  if (bnorm == 0.0) {
    rep.converged = true;
    rep.rel_residuals.push_back(0.0);
    return out;
  }
  Vector dir = r;
  double rr = dot(r, r);
  rep.rel_residuals.push_back(std::sqrt(rr) / bnorm);
  rep.converged = rep.rel_residuals.back() <= tol;
  for (int k = 1; k <= max_iter && !rep.converged; ++k) {
    const Vector q = spmv(a, dir);
    const double pap = dot(dir, q);
    if (!(pap > 0.0))
      fail(ErrorCategory::numerical_failure, "cg breakdown: p^T A p <= 0 (A not SPD)");
    const double step = rr / pap;
    for (int i = 0; i < n; ++i) {
      out.x[i] += step * dir[i];
      r[i] -= step * q[i];
    }
    rep.iterations = k;
    const double rr_next = dot(r, r);
    rep.rel_residuals.push_back(norm2(r) / bnorm);
    if (iterates) iterates->push_back(out.x);
    if (rep.rel_residuals.back() <= tol) {
      rep.converged = true;
      break;
    }
    const double beta = rr_next / rr;
    for (int i = 0; i < n; ++i) dir[i] = r[i] + beta * dir[i];
    rr = rr_next;
  }
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace spaigen
