#pragma once

#include "spaigen/fem.hpp"
#include "spaigen/mesh.hpp"
#include "spaigen/sparse.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace spaigen {

/// One linear system of the family together with its training target.
struct ProblemSample {
  int index = 0;  // draw index within the generating run
  CsrMatrix a;
  std::optional<DenseMatrix> a_inv;
  Vector b;
  ProblemFamily family = ProblemFamily::poisson;
  CoefficientField coefficient;
  SparsityMask mask;

  int dim() const noexcept { return a.rows(); }
};

struct DatasetSplit {
  std::vector<ProblemSample> train;
  std::vector<ProblemSample> test;
  std::uint64_t seed = 0;
  std::string mesh_id;
  ProblemFamily family = ProblemFamily::poisson;
  double extra_fraction = 0.0;
  int requested = 0;                  // N asked for
  std::vector<std::string> failures;  // one line per discarded draw

  int dim() const noexcept;
  std::size_t size() const noexcept { return train.size() + test.size(); }
};

/// Number of test samples for a dataset of n_total: the 4:1 split.
int test_count(int n_total);

/// N samples on one shared mesh with independent coefficient draws, an 80/20 seeded
/// shuffle split, and per-sample masks from build_mask(A, extra_fraction). Draws that fail
/// assembly or inversion are dropped and listed in `failures`.
DatasetSplit generate_dataset(ProblemFamily family, const TriMesh& mesh, int n_samples,
                              double extra_fraction, std::uint64_t seed);

/// Raw inverse blob: 8-byte little-endian dimension followed by n*n row-major doubles.
void write_dense_blob(const std::filesystem::path& path, const DenseMatrix& m);
DenseMatrix read_dense_blob(const std::filesystem::path& path);

void write_vector_text(const std::filesystem::path& path, const Vector& v);
Vector read_vector_text(const std::filesystem::path& path);

/// Content hash (hex FNV-1a) of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

/// Writes train/ and test/ subdirectories plus manifest.json into `dir` (created if needed).
/// The manifest is written last.
void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);

/// Loads and validates a dataset directory. Inverses are optional to save memory when only
/// A is needed (benchmarking, inference).
DatasetSplit load_dataset(const std::filesystem::path& dir, bool load_inverses = true);

/// Throws unless `dir` holds a manifest whose listed files exist with matching hashes.
void validate_manifest(const std::filesystem::path& dir);

}  // namespace spaigen
