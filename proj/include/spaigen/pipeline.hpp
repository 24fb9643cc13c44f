#pragma once

#include "spaigen/fem.hpp"
#include "spaigen/metrics.hpp"
#include "spaigen/mesh.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spaigen {

/// Everything a pipeline run needs. Unset optionals take family-dependent defaults in
/// resolved(); all output locations derive from `out` unless overridden.
struct RunConfig {
  ProblemFamily family = ProblemFamily::poisson;
  int target_n = 225;
  int samples = 2000;  // N before the 4:1 split
  std::optional<double> extra_fraction;
  std::optional<std::string> model_profile;
  std::optional<std::string> train_profile;
  std::uint64_t seed = 0;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  double tol = 1e-5;
  std::string methods = "jacobi,ic_droptol,gcvae";
  LatentPolicy latent = LatentPolicy::prior_mean;
  std::filesystem::path out = "run";
  std::optional<std::filesystem::path> dataset;     // defaults to out/dataset
  std::optional<std::filesystem::path> checkpoint;  // defaults to out/model/model.ckpt

  /// Fills every optional with its default (extra_fraction 0 for Poisson, 0.2 for the
  /// biharmonic family; profiles named after the family) and validates.
  RunConfig resolved() const;
  /// Throws Error(config_error) naming the offending key.
  void validate() const;

  std::filesystem::path dataset_dir() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path model_dir() const { return checkpoint_path().parent_path(); }
  std::filesystem::path bench_dir() const { return out / "bench"; }

  /// Flat `key = value` text that parse_run_config reads back to an equal config.
  std::string to_toml() const;
};

/// Sets one schema key from its textual value; used by both config files and CLI flags.
void set_run_option(RunConfig& config, std::string_view key, std::string_view value);

/// Parses `key = value` lines (TOML subset: comments, quoted or bare values, no sections)
/// and checks every key against the schema before anything runs.
RunConfig parse_run_config(std::istream& in, std::string_view source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// One master seed fans out to independent streams per stage.
struct SeedPlan {
  std::uint64_t mesh = 0;
  std::uint64_t dataset = 0;  // coefficients and split
  std::uint64_t model = 0;    // parameter init
  std::uint64_t train = 0;    // shuffles and eps draws
  std::uint64_t bench = 0;    // latent draws when sampling
  std::uint64_t infer = 0;
};
SeedPlan derive_seeds(std::uint64_t master) noexcept;

/// Interior-vertex count whose biharmonic system size is closest to target_n, from
/// n = 4T + B - 3 with B = 4 (floor(sqrt T) + 1) boundary vertices.
int biharmonic_interior_target(int target_n);

/// Mesh whose system dimension for `family` is as close to target_n as the generator allows.
TriMesh mesh_for_target(ProblemFamily family, int target_n, std::uint64_t seed,
                        MeshReport* report = nullptr);

/// Creates `dir` if needed and proves it writable with a probe file.
void ensure_writable_dir(const std::filesystem::path& dir);

struct GenDataResult {
  std::filesystem::path dir;
  std::string manifest_hash;
  int n = 0;
  int train = 0;
  int test = 0;
  std::vector<std::string> failures;
};

/// Builds the dataset in a staging directory and renames it into place only after its
/// manifest validates. On failure the staging directory moves to <dataset>.quarantine with
/// its manifest removed.
GenDataResult cmd_gen_data(const RunConfig& config, std::ostream* progress = nullptr);

struct TrainOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  int epochs_run = 0;
  bool early_stopped = false;
  int lr_halvings = 0;
  double final_recon = 0.0;
};

TrainOutcome cmd_train(const RunConfig& config, std::ostream* progress = nullptr);

struct InferOptions {
  std::optional<std::filesystem::path> mask;  // pattern file; otherwise build_mask(A, extra)
  double extra_fraction = 0.0;
  int count = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
};

/// Writes R_000.mtx .. R_<k-1>.mtx, each on the mask pattern, from k prior latent draws.
std::vector<std::filesystem::path> cmd_infer(const std::filesystem::path& checkpoint,
                                             const std::filesystem::path& matrix,
                                             const InferOptions& options);

struct BenchOutcome {
  std::filesystem::path csv;
  std::filesystem::path json;
  std::vector<std::filesystem::path> plots;
  BenchmarkReport report;
};

BenchOutcome cmd_bench(const RunConfig& config, std::ostream* progress = nullptr);

/// Merges benchmark CSVs (for instance one per n) and draws the three comparison plots.
std::vector<std::filesystem::path> cmd_plot(const std::vector<std::filesystem::path>& csvs,
                                            const std::filesystem::path& out_dir);

}  // namespace spaigen
