#pragma once

#include "spaigen/sparse.hpp"

#include <filesystem>
#include <iosfwd>

namespace spaigen::mm {

/// Reads `coordinate` files with field real/integer/pattern and symmetry
/// general/symmetric. Symmetric files are expanded; pattern entries read as 1.
CsrMatrix read_matrix(std::istream& in);
CsrMatrix read_matrix(const std::filesystem::path& path);

/// Writes `coordinate real general` with round-trip precision. Stored zeros are written.
void write_matrix(std::ostream& out, const CsrMatrix& a);
void write_matrix(const std::filesystem::path& path, const CsrMatrix& a);

/// Masks travel as `coordinate pattern general` files.
SparsityMask read_mask(std::istream& in);
SparsityMask read_mask(const std::filesystem::path& path);
void write_mask(std::ostream& out, const SparsityMask& m);
void write_mask(const std::filesystem::path& path, const SparsityMask& m);

}  // namespace spaigen::mm
