#include "spaigen/sparse.hpp"

#include "spaigen/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

namespace spaigen {

namespace {

void check_csr(int rows, int cols, const std::vector<int>& row_ptr,
               const std::vector<int>& col_idx, const std::vector<double>& values) {
  if (rows < 0 || cols < 0) fail(ErrorCategory::invalid_input, "negative matrix dimension");
  if (static_cast<int>(row_ptr.size()) != rows + 1)
    fail(ErrorCategory::invalid_input, "row_ptr length must be rows + 1");
  if (row_ptr.front() != 0) fail(ErrorCategory::invalid_input, "row_ptr[0] must be 0");
  if (col_idx.size() != values.size())
    fail(ErrorCategory::invalid_input, "col_idx and values differ in length");
  if (row_ptr.back() != static_cast<int>(col_idx.size()))
    fail(ErrorCategory::invalid_input, "row_ptr[rows] must equal nnz");
  for (int i = 0; i < rows; ++i) {
    if (row_ptr[i + 1] < row_ptr[i])
      fail(ErrorCategory::invalid_input, "row_ptr must be non-decreasing");
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      const int c = col_idx[k];
      if (c < 0 || c >= cols)
        fail(ErrorCategory::invalid_input, "column index out of range in row " + std::to_string(i));
      if (k > row_ptr[i] && col_idx[k - 1] >= c)
        fail(ErrorCategory::invalid_input,
             "column indices must be strictly increasing in row " + std::to_string(i));
    }
  }
}

void require_square(const CsrMatrix& a, const char* what) {
  if (!a.square())
    fail(ErrorCategory::dimension_mismatch, std::string(what) + " must be square");
}

}  // namespace

CsrMatrix::CsrMatrix(int rows, int cols, std::vector<int> row_ptr, std::vector<int> col_idx,
                     std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  check_csr(rows_, cols_, row_ptr_, col_idx_, values_);
}

CsrMatrix CsrMatrix::from_triplets(int rows, int cols, std::vector<Triplet> entries) {
  for (const auto& t : entries) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
      fail(ErrorCategory::invalid_input, "triplet index out of range");
  }
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  std::vector<int> row_ptr(rows + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  col_idx.reserve(entries.size());
  values.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& t = entries[k];
    if (k > 0 && entries[k - 1].row == t.row && entries[k - 1].col == t.col) {
      values.back() += t.value;
      continue;
    }
    col_idx.push_back(t.col);
    values.push_back(t.value);
    ++row_ptr[t.row + 1];
  }
  std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
  return CsrMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
}

CsrMatrix CsrMatrix::identity(int n) {
  Vector ones(static_cast<std::size_t>(n), 1.0);
  return diagonal(ones);
}

CsrMatrix CsrMatrix::diagonal(std::span<const double> d) {
  const int n = static_cast<int>(d.size());
  std::vector<int> row_ptr(n + 1);
  std::iota(row_ptr.begin(), row_ptr.end(), 0);
  std::vector<int> col_idx(n);
  std::iota(col_idx.begin(), col_idx.end(), 0);
  return CsrMatrix(n, n, std::move(row_ptr), std::move(col_idx), Vector(d.begin(), d.end()));
}

CsrMatrix CsrMatrix::from_dense(const DenseMatrix& d, double drop) {
  std::vector<int> row_ptr(d.rows() + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (std::abs(d(i, j)) > drop) {
        col_idx.push_back(static_cast<int>(j));
        values.push_back(d(i, j));
      }
    }
    row_ptr[i + 1] = static_cast<int>(col_idx.size());
  }
  return CsrMatrix(static_cast<int>(d.rows()), static_cast<int>(d.cols()), std::move(row_ptr),
                   std::move(col_idx), std::move(values));
}

int CsrMatrix::find(int i, int j) const noexcept {
  if (i < 0 || i >= rows_) return -1;
  const auto first = col_idx_.begin() + row_ptr_[i];
  const auto last = col_idx_.begin() + row_ptr_[i + 1];
  const auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return -1;
  return static_cast<int>(it - col_idx_.begin());
}

double CsrMatrix::at(int i, int j) const noexcept {
  const int k = find(i, j);
  return k < 0 ? 0.0 : values_[k];
}

DenseMatrix CsrMatrix::to_dense() const {
  DenseMatrix d = DenseMatrix::Zero(rows_, cols_);
  for (int i = 0; i < rows_; ++i)
    for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d(i, col_idx_[k]) = values_[k];
  return d;
}

CsrMatrix CsrMatrix::transpose() const {
  std::vector<int> row_ptr(cols_ + 1, 0);
  for (int c : col_idx_) ++row_ptr[c + 1];
  std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
  std::vector<int> next(row_ptr.begin(), row_ptr.end() - 1);
  std::vector<int> col_idx(col_idx_.size());
  std::vector<double> values(values_.size());
  for (int i = 0; i < rows_; ++i) {
    for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
      const int dst = next[col_idx_[k]]++;
      col_idx[dst] = i;
      values[dst] = values_[k];
    }
  }
  return CsrMatrix(cols_, rows_, std::move(row_ptr), std::move(col_idx), std::move(values));
}

bool CsrMatrix::same_pattern(const CsrMatrix& other) const noexcept {
  return rows_ == other.rows_ && cols_ == other.cols_ && row_ptr_ == other.row_ptr_ &&
         col_idx_ == other.col_idx_;
}

SparsityMask::SparsityMask(int n, std::vector<std::pair<int, int>> positions) : n_(n) {
  if (n < 0) fail(ErrorCategory::invalid_input, "negative mask dimension");
  for (const auto& [i, j] : positions) {
    if (i < 0 || i >= n || j < 0 || j >= n)
      fail(ErrorCategory::invalid_input, "mask position out of range");
  }
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  row_ptr_.assign(n + 1, 0);
  col_idx_.reserve(positions.size());
  for (const auto& [i, j] : positions) {
    ++row_ptr_[i + 1];
    col_idx_.push_back(j);
  }
  std::partial_sum(row_ptr_.begin(), row_ptr_.end(), row_ptr_.begin());
  for (int i = 0; i < n; ++i) {
    if (!contains(i, i))
      fail(ErrorCategory::invalid_input,
           "mask is missing diagonal position " + std::to_string(i));
  }
}

bool SparsityMask::contains(int i, int j) const noexcept {
  if (i < 0 || i >= n_) return false;
  const auto first = col_idx_.begin() + row_ptr_[i];
  const auto last = col_idx_.begin() + row_ptr_[i + 1];
  return std::binary_search(first, last, j);
}

std::vector<std::pair<int, int>> SparsityMask::positions() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(col_idx_.size());
  for (int i = 0; i < n_; ++i)
    for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) out.emplace_back(i, col_idx_[k]);
  return out;
}

SparsityMask SparsityMask::diagonal(int n) {
  std::vector<std::pair<int, int>> pos;
  pos.reserve(n);
  for (int i = 0; i < n; ++i) pos.emplace_back(i, i);
  return SparsityMask(n, std::move(pos));
}

SparsityMask SparsityMask::full(int n) {
  std::vector<std::pair<int, int>> pos;
  pos.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pos.emplace_back(i, j);
  return SparsityMask(n, std::move(pos));
}

Vector spmv(const CsrMatrix& a, std::span<const double> x) {
  if (static_cast<int>(x.size()) != a.cols())
    fail(ErrorCategory::dimension_mismatch,
         "spmv: vector length " + std::to_string(x.size()) + " != " + std::to_string(a.cols()));
  Vector y(a.rows(), 0.0);
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (int k = rp[i]; k < rp[i + 1]; ++k) s += v[k] * x[ci[k]];
    y[i] = s;
  }
  return y;
}

Vector spmv_transposed(const CsrMatrix& a, std::span<const double> x) {
  if (static_cast<int>(x.size()) != a.rows())
    fail(ErrorCategory::dimension_mismatch, "spmv_transposed: vector length mismatch");
  Vector y(a.cols(), 0.0);
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  for (int i = 0; i < a.rows(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k) y[ci[k]] += v[k] * x[i];
  return y;
}

CongruenceResidual congruence_residual(const CsrMatrix& a, const CsrMatrix& r) {
  require_square(a, "A");
  require_square(r, "R");
  if (a.rows() != r.rows())
    fail(ErrorCategory::dimension_mismatch, "frobenius_residual: A and R differ in dimension");
  const int n = a.rows();
  const DenseMatrix rd = r.to_dense();

  CongruenceResidual out;
  out.a_r = DenseMatrix::Zero(n, n);
  {
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto v = a.values();
    for (int i = 0; i < n; ++i)
      for (int k = rp[i]; k < rp[i + 1]; ++k) out.a_r.row(i) += v[k] * rd.row(ci[k]);
  }
  // R^T (A R): row j of the product accumulates R(i, j) * (AR).row(i).
  DenseMatrix c = DenseMatrix::Zero(n, n);
  {
    const auto rp = r.row_ptr();
    const auto ci = r.col_idx();
    const auto v = r.values();
    for (int i = 0; i < n; ++i)
      for (int k = rp[i]; k < rp[i + 1]; ++k) c.row(ci[k]) += v[k] * out.a_r.row(i);
  }
  out.residual = DenseMatrix::Identity(n, n) - c;
  out.norm = out.residual.norm();
  return out;
}

double frobenius_residual(const CsrMatrix& a, const CsrMatrix& r) {
  return congruence_residual(a, r).norm;
}

CsrMatrix apply_mask(const DenseMatrix& d, const SparsityMask& m) {
  if (d.rows() != m.dim() || d.cols() != m.dim())
    fail(ErrorCategory::dimension_mismatch, "apply_mask: dense matrix and mask differ in size");
  const auto rp = m.row_ptr();
  const auto ci = m.col_idx();
  std::vector<double> values(ci.size());
  for (int i = 0; i < m.dim(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k) values[k] = d(i, ci[k]);
  return CsrMatrix(m.dim(), m.dim(), std::vector<int>(rp.begin(), rp.end()),
                   std::vector<int>(ci.begin(), ci.end()), std::move(values));
}

SparsityMask pattern_of(const CsrMatrix& a) {
  require_square(a, "A");
  std::vector<std::pair<int, int>> pos;
  pos.reserve(a.nnz() + a.rows());
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  for (int i = 0; i < a.rows(); ++i) {
    pos.emplace_back(i, i);
    for (int k = rp[i]; k < rp[i + 1]; ++k) pos.emplace_back(i, ci[k]);
  }
  return SparsityMask(a.rows(), std::move(pos));
}

int extra_budget(double extra_fraction, int nnz) {
  if (!(extra_fraction >= 0.0))
    fail(ErrorCategory::invalid_input, "extra_fraction must be non-negative");
  // Shave a relative epsilon so that e.g. 0.2 * 1500 does not round up to 301.
  return static_cast<int>(std::ceil(extra_fraction * nnz * (1.0 - 1e-12)));
}

CsrMatrix multiply(const CsrMatrix& a, const CsrMatrix& b) {
  if (a.cols() != b.rows()) fail(ErrorCategory::dimension_mismatch, "multiply: inner dimensions differ");
  std::vector<int> row_ptr(a.rows() + 1, 0);
  std::vector<int> col_idx;
  std::vector<double> values;
  std::vector<double> acc(b.cols(), 0.0);
  std::vector<char> used(b.cols(), 0);
  std::vector<int> touched;
  const auto arp = a.row_ptr();
  const auto aci = a.col_idx();
  const auto av = a.values();
  const auto brp = b.row_ptr();
  const auto bci = b.col_idx();
  const auto bv = b.values();
  for (int i = 0; i < a.rows(); ++i) {
    touched.clear();
    for (int k = arp[i]; k < arp[i + 1]; ++k) {
      const int mid = aci[k];
      for (int l = brp[mid]; l < brp[mid + 1]; ++l) {
        const int j = bci[l];
        if (!used[j]) {
          used[j] = 1;
          touched.push_back(j);
        }
        acc[j] += av[k] * bv[l];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (int j : touched) {
      col_idx.push_back(j);
      values.push_back(acc[j]);
      acc[j] = 0.0;
      used[j] = 0;
    }
    row_ptr[i + 1] = static_cast<int>(col_idx.size());
  }
  return CsrMatrix(a.rows(), b.cols(), std::move(row_ptr), std::move(col_idx), std::move(values));
}

SparsityMask build_mask(const CsrMatrix& a, double extra_fraction) {
  require_square(a, "A");
  const int budget = extra_budget(extra_fraction, a.nnz());
  std::vector<std::pair<int, int>> pos = pattern_of(a).positions();
  if (budget == 0) return SparsityMask(a.rows(), std::move(pos));

  struct Candidate {
    double magnitude;
    int row;
    int col;
  };
  std::vector<Candidate> candidates;
  const CsrMatrix a2 = multiply(a, a);
  const auto rp = a2.row_ptr();
  const auto ci = a2.col_idx();
  const auto v = a2.values();
  for (int i = 0; i < a2.rows(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k)
      if (ci[k] != i && !a.contains(i, ci[k])) candidates.push_back({std::abs(v[k]), i, ci[k]});

  std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.magnitude != y.magnitude) return x.magnitude > y.magnitude;
    return std::tie(x.row, x.col) < std::tie(y.row, y.col);
  });
  const std::size_t take = std::min<std::size_t>(budget, candidates.size());
  for (std::size_t k = 0; k < take; ++k) pos.emplace_back(candidates[k].row, candidates[k].col);
  return SparsityMask(a.rows(), std::move(pos));
}

GraphForm to_graph(const CsrMatrix& a) {
  require_square(a, "A");
  const int n = a.rows();
  std::vector<Triplet> entries;
  entries.reserve(a.nnz() + n);
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  GraphForm g;
  g.node_features.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    bool has_diag = false;
    for (int k = rp[i]; k < rp[i + 1]; ++k) {
      entries.push_back({i, ci[k], v[k]});
      if (ci[k] == i) {
        has_diag = true;
        g.node_features[i] = v[k];
      }
    }
    if (!has_diag) entries.push_back({i, i, 0.0});
  }
  g.adjacency = CsrMatrix::from_triplets(n, n, std::move(entries));
  return g;
}

double asymmetry(const CsrMatrix& a) {
  require_square(a, "A");
  double worst = 0.0;
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  for (int i = 0; i < a.rows(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k)
      worst = std::max(worst, std::abs(v[k] - a.at(ci[k], i)));
  return worst;
}

CsrMatrix symmetrize(const CsrMatrix& a) {
  require_square(a, "A");
  const CsrMatrix at = a.transpose();
  if (!a.same_pattern(at))
    fail(ErrorCategory::invalid_input, "symmetrize: pattern is not structurally symmetric");
  std::vector<double> values(a.nnz());
  const auto v = a.values();
  const auto vt = at.values();
  for (int k = 0; k < a.nnz(); ++k) values[k] = 0.5 * (v[k] + vt[k]);
  return CsrMatrix(a.rows(), a.cols(), std::vector<int>(a.row_ptr().begin(), a.row_ptr().end()),
                   std::vector<int>(a.col_idx().begin(), a.col_idx().end()), std::move(values));
}

}  // namespace spaigen
