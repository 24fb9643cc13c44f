#include "spaigen/matrix_market.hpp"

#include "spaigen/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace spaigen::mm {

namespace {

struct Header {
  bool pattern = false;
  bool symmetric = false;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

Header parse_banner(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCategory::io_error, "empty Matrix Market stream");
  std::istringstream ss(line);
  std::string banner, object, format, field, symmetry;
  ss >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") fail(ErrorCategory::io_error, "missing %%MatrixMarket banner");
  object = lower(object);
  format = lower(format);
  field = lower(field);
  symmetry = lower(symmetry);
  if (object != "matrix" || format != "coordinate")
    fail(ErrorCategory::io_error, "only 'matrix coordinate' files are supported");
  Header h;
  if (field == "pattern") {
    h.pattern = true;
  } else if (field != "real" && field != "integer" && field != "double") {
    fail(ErrorCategory::io_error, "unsupported Matrix Market field '" + field + "'");
  }
  if (symmetry == "symmetric") {
    h.symmetric = true;
  } else if (symmetry != "general") {
    fail(ErrorCategory::io_error, "unsupported Matrix Market symmetry '" + symmetry + "'");
  }
  return h;
}

struct Coordinates {
  int rows = 0;
  int cols = 0;
  std::vector<Triplet> entries;
};

Coordinates read_coordinates(std::istream& in, const Header& h) {
  std::string line;
  do {
    if (!std::getline(in, line)) fail(ErrorCategory::io_error, "missing size line");
  } while (line.empty() || line[0] == '%');
  Coordinates c;
  long long nnz = 0;
  {
    std::istringstream ss(line);
    if (!(ss >> c.rows >> c.cols >> nnz) || c.rows < 0 || c.cols < 0 || nnz < 0)
      fail(ErrorCategory::io_error, "malformed size line");
  }
  c.entries.reserve(static_cast<std::size_t>(h.symmetric ? 2 * nnz : nnz));
  for (long long k = 0; k < nnz; ++k) {
    int i = 0, j = 0;
    double v = 1.0;
    if (!(in >> i >> j)) fail(ErrorCategory::io_error, "truncated entry list");
    if (!h.pattern && !(in >> v)) fail(ErrorCategory::io_error, "missing entry value");
    if (i < 1 || i > c.rows || j < 1 || j > c.cols)
      fail(ErrorCategory::io_error, "entry index out of range");
    c.entries.push_back({i - 1, j - 1, v});
    if (h.symmetric && i != j) c.entries.push_back({j - 1, i - 1, v});
  }
  return c;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io_error, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  return out;
}

}  // namespace

CsrMatrix read_matrix(std::istream& in) {
  const Header h = parse_banner(in);
  Coordinates c = read_coordinates(in, h);
  return CsrMatrix::from_triplets(c.rows, c.cols, std::move(c.entries));
}

CsrMatrix read_matrix(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_matrix(in);
}

void write_matrix(std::ostream& out, const CsrMatrix& a) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.rows() << ' ' << a.cols() << ' ' << a.nnz() << '\n';
  out << std::setprecision(17);
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto v = a.values();
  for (int i = 0; i < a.rows(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k) out << i + 1 << ' ' << ci[k] + 1 << ' ' << v[k] << '\n';
  if (!out) fail(ErrorCategory::io_error, "write failed");
}

void write_matrix(const std::filesystem::path& path, const CsrMatrix& a) {
  auto out = open_out(path);
  write_matrix(out, a);
}

SparsityMask read_mask(std::istream& in) {
  const Header h = parse_banner(in);
  Coordinates c = read_coordinates(in, h);
  if (c.rows != c.cols) fail(ErrorCategory::dimension_mismatch, "mask file is not square");
  std::vector<std::pair<int, int>> pos;
  pos.reserve(c.entries.size());
  for (const auto& t : c.entries) pos.emplace_back(t.row, t.col);
  return SparsityMask(c.rows, std::move(pos));
}

SparsityMask read_mask(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_mask(in);
}

void write_mask(std::ostream& out, const SparsityMask& m) {
  out << "%%MatrixMarket matrix coordinate pattern general\n";
  out << m.dim() << ' ' << m.dim() << ' ' << m.size() << '\n';
  for (const auto& [i, j] : m.positions()) out << i + 1 << ' ' << j + 1 << '\n';
  if (!out) fail(ErrorCategory::io_error, "write failed");
}

void write_mask(const std::filesystem::path& path, const SparsityMask& m) {
  auto out = open_out(path);
  write_mask(out, m);
}

}  // namespace spaigen::mm
