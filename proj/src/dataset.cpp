#include "spaigen/dataset.hpp"

#include "spaigen/error.hpp"
#include "spaigen/matrix_market.hpp"
#include "spaigen/seeding.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <sstream>

namespace spaigen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string sample_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05d", index);
  return buf;
}

json sample_entry(const ProblemSample& s, const fs::path& dir, const std::string& split) {
  const std::string stem = sample_stem(s.index);
  json files = {
      {"A", split + "/" + stem + "_A.mtx"},
      {"A_inv", split + "/" + stem + "_Ainv.bin"},
      {"b", split + "/" + stem + "_b.txt"},
      {"mask", split + "/" + stem + "_mask.mtx"},
  };
  json hashes = json::object();
  for (const auto& [key, rel] : files.items()) {
    if (key == "A_inv" && !s.a_inv) continue;
    hashes[key] = file_hash(dir / rel.get<std::string>());
  }
  return {{"index", s.index},
          {"coefficients", s.coefficient.coeffs},
          {"dim", s.dim()},
          {"nnz", s.a.nnz()},
          {"mask_nnz", s.mask.size()},
          {"files", files},
          {"hashes", hashes}};
}

void write_sample(const ProblemSample& s, const fs::path& dir, const std::string& split) {
  const std::string stem = sample_stem(s.index);
  mm::write_matrix(dir / split / (stem + "_A.mtx"), s.a);
  if (s.a_inv) write_dense_blob(dir / split / (stem + "_Ainv.bin"), *s.a_inv);
  write_vector_text(dir / split / (stem + "_b.txt"), s.b);
  mm::write_mask(dir / split / (stem + "_mask.mtx"), s.mask);
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCategory::io_error, "missing manifest.json in " + dir.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    fail(ErrorCategory::io_error, std::string("malformed manifest: ") + e.what());
  }
  if (m.value("format_version", 0) != kManifestVersion)
    fail(ErrorCategory::io_error, "unsupported manifest version");
  return m;
}

}  // namespace

int DatasetSplit::dim() const noexcept {
  if (!train.empty()) return train.front().dim();
  if (!test.empty()) return test.front().dim();
  return 0;
}

int test_count(int n_total) { return n_total / 5; }

DatasetSplit generate_dataset(ProblemFamily family, const TriMesh& mesh, int n_samples,
                              double extra_fraction, std::uint64_t seed) {
  if (n_samples < 5) fail(ErrorCategory::invalid_input, "generate_dataset needs N >= 5");
  if (!(extra_fraction >= 0.0) || extra_fraction > 1.0)
    fail(ErrorCategory::invalid_input, "extra_fraction must lie in [0, 1]");

  DatasetSplit split;
  split.seed = seed;
  split.mesh_id = mesh_fingerprint(mesh);
  split.family = family;
  split.extra_fraction = extra_fraction;
  split.requested = n_samples;

  const Vector b = assemble_rhs(mesh, family);
  std::vector<ProblemSample> samples;
  samples.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(derive_seed(seed, "coefficient", static_cast<std::uint64_t>(i)));
    ProblemSample s;
    s.index = i;
    s.family = family;
    s.b = b;
    try {
      s.coefficient = sample_coefficient(rng);
      s.a = assemble_system(family, mesh, s.coefficient);
      s.a_inv = compute_inverse(s.a);
      s.mask = build_mask(s.a, extra_fraction);
    } catch (const Error& e) {
      split.failures.push_back("sample " + std::to_string(i) + ": " + e.what());
      continue;
    }
    samples.push_back(std::move(s));
  }
  const int total = static_cast<int>(samples.size());
  if (total < 5)
    fail(ErrorCategory::numerical_failure,
         "only " + std::to_string(total) + " of " + std::to_string(n_samples) + " samples succeeded");

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), split_rng);
  const int n_test = test_count(total);
  // Keep each side in draw order so files and iteration are stable.
  std::sort(order.begin(), order.begin() + n_test);
  std::sort(order.begin() + n_test, order.end());
  for (int k = 0; k < total; ++k) {
    auto& dst = k < n_test ? split.test : split.train;
    dst.push_back(std::move(samples[order[k]]));
  }
  return split;
}

void write_dense_blob(const fs::path& path, const DenseMatrix& m) {
  if (m.rows() != m.cols()) fail(ErrorCategory::invalid_input, "dense blob must be square");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  const std::uint64_t n = static_cast<std::uint64_t>(m.rows());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * n * n));
  if (!out) fail(ErrorCategory::io_error, "write failed: " + path.string());
}

DenseMatrix read_dense_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io_error, "cannot open " + path.string());
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n > (1u << 16)) fail(ErrorCategory::io_error, "bad dense blob header: " + path.string());
  DenseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * n * n));
  if (!in) fail(ErrorCategory::io_error, "truncated dense blob: " + path.string());
  return m;
}

void write_vector_text(const fs::path& path, const Vector& v) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  out << std::setprecision(17);
  for (double x : v) out << x << '\n';
}

Vector read_vector_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io_error, "cannot open " + path.string());
  return Vector(std::istream_iterator<double>(in), std::istream_iterator<double>());
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io_error, "cannot open " + path.string());
  std::uint64_t h = fnv1a("");
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void save_dataset(const DatasetSplit& split, const fs::path& dir) {
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  json manifest = {{"format_version", kManifestVersion},
                   {"family", std::string(family_name(split.family))},
                   {"mesh_id", split.mesh_id},
                   {"seed", split.seed},
                   {"extra_fraction", split.extra_fraction},
                   {"requested", split.requested},
                   {"dim", split.dim()},
                   {"failures", split.failures}};
  json train = json::array();
  json test = json::array();
  for (const auto& s : split.train) {
    write_sample(s, dir, "train");
    train.push_back(sample_entry(s, dir, "train"));
  }
  for (const auto& s : split.test) {
    write_sample(s, dir, "test");
    test.push_back(sample_entry(s, dir, "test"));
  }
  manifest["train"] = std::move(train);
  manifest["test"] = std::move(test);
  const fs::path tmp = dir / "manifest.json.partial";
  {
    std::ofstream out(tmp);
    if (!out) fail(ErrorCategory::io_error, "cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
    if (!out) fail(ErrorCategory::io_error, "manifest write failed");
  }
  fs::rename(tmp, dir / "manifest.json");
}

void validate_manifest(const fs::path& dir) {
  const json m = read_manifest(dir);
  for (const char* split : {"train", "test"}) {
    if (!m.contains(split) || !m[split].is_array())
      fail(ErrorCategory::io_error, std::string("manifest lacks '") + split + "' list");
    for (const auto& entry : m[split]) {
      for (const auto& [key, hash] : entry.at("hashes").items()) {
        const fs::path file = dir / entry.at("files").at(key).get<std::string>();
        if (!fs::exists(file)) fail(ErrorCategory::io_error, "missing dataset file " + file.string());
        if (file_hash(file) != hash.get<std::string>())
          fail(ErrorCategory::io_error, "hash mismatch for " + file.string());
      }
    }
  }
}

DatasetSplit load_dataset(const fs::path& dir, bool load_inverses) {
  const json m = read_manifest(dir);
  DatasetSplit split;
  try {
    split.family = parse_family(m.at("family").get<std::string>());
    split.mesh_id = m.at("mesh_id").get<std::string>();
    split.seed = m.at("seed").get<std::uint64_t>();
    split.extra_fraction = m.at("extra_fraction").get<double>();
    split.requested = m.at("requested").get<int>();
    split.failures = m.at("failures").get<std::vector<std::string>>();
    for (const char* name : {"train", "test"}) {
      auto& dst = std::string(name) == "train" ? split.train : split.test;
      for (const auto& entry : m.at(name)) {
        ProblemSample s;
        s.index = entry.at("index").get<int>();
        s.family = split.family;
        s.coefficient.coeffs = entry.at("coefficients").get<std::array<double, 6>>();
        const auto& files = entry.at("files");
        s.a = mm::read_matrix(dir / files.at("A").get<std::string>());
        s.b = read_vector_text(dir / files.at("b").get<std::string>());
        s.mask = mm::read_mask(dir / files.at("mask").get<std::string>());
        if (load_inverses) s.a_inv = read_dense_blob(dir / files.at("A_inv").get<std::string>());
        if (s.dim() != entry.at("dim").get<int>() || s.mask.dim() != s.dim() ||
            static_cast<int>(s.b.size()) != s.dim() || (s.a_inv && s.a_inv->rows() != s.dim()))
          fail(ErrorCategory::dimension_mismatch, "inconsistent sample " + std::to_string(s.index));
        dst.push_back(std::move(s));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCategory::io_error, std::string("malformed manifest: ") + e.what());
  }
  return split;
}

}  // namespace spaigen
