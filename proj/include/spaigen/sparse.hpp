#pragma once

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace spaigen {

using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = std::vector<double>;

struct Triplet {
  int row;
  int col;
  double value;
};

/// Compressed sparse row matrix. Stored zeros are legal and are kept: they carry
/// pattern information (mask positions, structurally coupled dofs).
class CsrMatrix {
 public:
  CsrMatrix() = default;

  /// Validates every structural invariant; throws Error(invalid_input) otherwise.
  CsrMatrix(int rows, int cols, std::vector<int> row_ptr, std::vector<int> col_idx,
            std::vector<double> values);

  /// Duplicates are summed. Entries are kept even when their value is zero.
  static CsrMatrix from_triplets(int rows, int cols, std::vector<Triplet> entries);
  static CsrMatrix identity(int n);
  static CsrMatrix diagonal(std::span<const double> d);
  /// Stores every entry with |value| > drop.
  static CsrMatrix from_dense(const DenseMatrix& d, double drop = 0.0);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int nnz() const noexcept { return static_cast<int>(col_idx_.size()); }
  bool square() const noexcept { return rows_ == cols_; }

  std::span<const int> row_ptr() const noexcept { return row_ptr_; }
  std::span<const int> col_idx() const noexcept { return col_idx_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values_mut() noexcept { return values_; }

  /// Index into values() of entry (i, j), or -1 when not stored.
  int find(int i, int j) const noexcept;
  bool contains(int i, int j) const noexcept { return find(i, j) >= 0; }
  double at(int i, int j) const noexcept;

  DenseMatrix to_dense() const;
  CsrMatrix transpose() const;
  bool same_pattern(const CsrMatrix& other) const noexcept;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_idx_;
  std::vector<double> values_;
};

/// Sparsity pattern for a square n x n preconditioner factor. Always holds the diagonal.
class SparsityMask {
 public:
  SparsityMask() = default;
  /// Positions are deduplicated and sorted; throws if out of range or a diagonal is missing.
  SparsityMask(int n, std::vector<std::pair<int, int>> positions);

  int dim() const noexcept { return n_; }
  int size() const noexcept { return static_cast<int>(col_idx_.size()); }
  bool contains(int i, int j) const noexcept;
  std::span<const int> row_ptr() const noexcept { return row_ptr_; }
  std::span<const int> col_idx() const noexcept { return col_idx_; }
  std::vector<std::pair<int, int>> positions() const;

  bool operator==(const SparsityMask& o) const noexcept {
    return n_ == o.n_ && row_ptr_ == o.row_ptr_ && col_idx_ == o.col_idx_;
  }

  static SparsityMask diagonal(int n);
  static SparsityMask full(int n);

 private:
  int n_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> col_idx_;
};

/// Weighted directed graph view of a square matrix: A with guaranteed self-loops,
/// one scalar feature per node (the diagonal entry).
struct GraphForm {
  CsrMatrix adjacency;
  Vector node_features;

  int num_nodes() const noexcept { return adjacency.rows(); }
};

Vector spmv(const CsrMatrix& a, std::span<const double> x);
/// y = A^T x without forming the transpose.
Vector spmv_transposed(const CsrMatrix& a, std::span<const double> x);

/// Dense intermediates of ||I - R^T A R||_F, kept for gradient evaluation.
struct CongruenceResidual {
  DenseMatrix a_r;       // A R
  DenseMatrix residual;  // I - R^T A R
  double norm = 0.0;     // Frobenius norm of residual
};

CongruenceResidual congruence_residual(const CsrMatrix& a, const CsrMatrix& r);
double frobenius_residual(const CsrMatrix& a, const CsrMatrix& r);

/// Keeps exactly the mask positions of d, including those where d is zero.
CsrMatrix apply_mask(const DenseMatrix& d, const SparsityMask& m);

/// Pattern of A with the diagonal added.
SparsityMask pattern_of(const CsrMatrix& a);

/// Number of extra positions granted for a fraction of nnz(A): ceil(fraction * nnz).
int extra_budget(double extra_fraction, int nnz);

/// pattern(A) plus the ceil(extra_fraction * nnz(A)) largest-magnitude positions of
/// pattern(A^2) \ pattern(A); ties broken by (row, col).
SparsityMask build_mask(const CsrMatrix& a, double extra_fraction);

GraphForm to_graph(const CsrMatrix& a);

/// Structural and numerical product A * B (both sparse).
CsrMatrix multiply(const CsrMatrix& a, const CsrMatrix& b);

/// max |A - A^T| over stored entries of either.
double asymmetry(const CsrMatrix& a);

/// (A + A^T) / 2 for a structurally symmetric A; the result is bitwise symmetric.
CsrMatrix symmetrize(const CsrMatrix& a);

}  // namespace spaigen
