#include "spaigen/pipeline.hpp"

#include "spaigen/dataset.hpp"
#include "spaigen/error.hpp"
#include "spaigen/matrix_market.hpp"
#include "spaigen/plot.hpp"
#include "spaigen/seeding.hpp"
#include "spaigen/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace spaigen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kProfiles[] = {"poisson", "biharmonic", "small", "smoke"};

[[noreturn]] void bad_key(std::string_view key, const std::string& why) {
  fail(ErrorCategory::config_error, "config key '" + std::string(key) + "': " + why);
}

template <class Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_key(key, "expected an integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    bad_key(key, "expected a finite number, got '" + s + "'");
  return out;
}

bool known_profile(std::string_view p) {
  for (auto k : kProfiles)
    if (k == p) return true;
  return false;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void say(std::ostream* progress, const std::string& line) {
  if (progress) *progress << line << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCategory::io_error, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCategory::io_error, "write failed: " + path.string());
}

int system_dimension(ProblemFamily family, const TriMesh& mesh) {
  return family == ProblemFamily::poisson ? mesh.num_interior_vertices() : p2_dof_map(mesh).size;
}

}  // namespace

// ---------------------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::resolved() const {
  RunConfig c = *this;
  const std::string fam(family_name(family));
  if (!c.extra_fraction) c.extra_fraction = family == ProblemFamily::poisson ? 0.0 : 0.2;
  if (!c.model_profile) c.model_profile = fam;
  if (!c.train_profile) c.train_profile = fam;
  if (!c.dataset) c.dataset = out / "dataset";
  if (!c.checkpoint) c.checkpoint = out / "model" / "model.ckpt";
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (target_n < 1) bad_key("target_n", "must be >= 1");
  if (samples < 5) bad_key("samples", "must be >= 5");
  if (extra_fraction && !(*extra_fraction >= 0.0 && *extra_fraction <= 1.0))
    bad_key("extra_fraction", "must lie in [0, 1]");
  if (model_profile && !known_profile(*model_profile))
    bad_key("model_profile", "unknown profile '" + *model_profile + "'");
  if (train_profile && !known_profile(*train_profile))
    bad_key("train_profile", "unknown profile '" + *train_profile + "'");
  if (epochs && *epochs < 1) bad_key("epochs", "must be >= 1");
  if (batch_size && *batch_size < 1) bad_key("batch_size", "must be >= 1");
  if (learning_rate && !(*learning_rate > 0.0)) bad_key("learning_rate", "must be > 0");
  if (!(tol > 0.0 && tol < 1.0)) bad_key("tol", "must lie in (0, 1)");
  try {
    parse_methods(methods);
  } catch (const Error& e) {
    bad_key("methods", e.what());
  }
  if (out.empty()) bad_key("out", "must not be empty");
}

fs::path RunConfig::dataset_dir() const { return dataset ? *dataset : out / "dataset"; }

fs::path RunConfig::checkpoint_path() const {
  return checkpoint ? *checkpoint : out / "model" / "model.ckpt";
}

std::string RunConfig::to_toml() const {
  std::ostringstream o;
  o << "family = " << quote(std::string(family_name(family))) << '\n';
  o << "target_n = " << target_n << '\n';
  o << "samples = " << samples << '\n';
  if (extra_fraction) o << "extra_fraction = " << real_text(*extra_fraction) << '\n';
  if (model_profile) o << "model_profile = " << quote(*model_profile) << '\n';
  if (train_profile) o << "train_profile = " << quote(*train_profile) << '\n';
  o << "seed = " << seed << '\n';
  if (epochs) o << "epochs = " << *epochs << '\n';
  if (batch_size) o << "batch_size = " << *batch_size << '\n';
  if (learning_rate) o << "learning_rate = " << real_text(*learning_rate) << '\n';
  o << "tol = " << real_text(tol) << '\n';
  o << "methods = " << quote(methods) << '\n';
  o << "latent = " << quote(latent == LatentPolicy::prior_mean ? "prior_mean" : "prior_sample")
    << '\n';
  o << "out = " << quote(out.generic_string()) << '\n';
  if (dataset) o << "dataset = " << quote(dataset->generic_string()) << '\n';
  if (checkpoint) o << "checkpoint = " << quote(checkpoint->generic_string()) << '\n';
  return o.str();
}

void set_run_option(RunConfig& c, std::string_view key, std::string_view v) {
  if (key == "family") {
    try {
      c.family = parse_family(v);
    } catch (const Error& e) {
      bad_key(key, e.what());
    }
  } else if (key == "target_n") {
    c.target_n = parse_int<int>(key, v);
  } else if (key == "samples") {
    c.samples = parse_int<int>(key, v);
  } else if (key == "extra_fraction") {
    c.extra_fraction = parse_real(key, v);
  } else if (key == "model_profile") {
    c.model_profile = std::string(v);
  } else if (key == "train_profile") {
    c.train_profile = std::string(v);
  } else if (key == "seed") {
    c.seed = parse_int<std::uint64_t>(key, v);
  } else if (key == "epochs") {
    c.epochs = parse_int<int>(key, v);
  } else if (key == "batch_size") {
    c.batch_size = parse_int<int>(key, v);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_real(key, v);
  } else if (key == "tol") {
    c.tol = parse_real(key, v);
  } else if (key == "methods") {
    c.methods = std::string(v);
  } else if (key == "latent") {
    if (v == "prior_mean") c.latent = LatentPolicy::prior_mean;
    else if (v == "prior_sample") c.latent = LatentPolicy::prior_sample;
    else bad_key(key, "expected prior_mean or prior_sample");
  } else if (key == "out") {
    c.out = fs::path(std::string(v));
  } else if (key == "dataset") {
    c.dataset = fs::path(std::string(v));
  } else if (key == "checkpoint") {
    c.checkpoint = fs::path(std::string(v));
  } else {
    bad_key(key, "not a recognised setting");
  }
}

RunConfig parse_run_config(std::istream& in, std::string_view source) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    fail(ErrorCategory::config_error, std::string(source) + ": " + e.what());
  }
  RunConfig c;
  std::vector<std::string> seen;
  for (const auto& item : items) {
    // Section markers come through as "++"/"--" entries.
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "default"))
      fail(ErrorCategory::config_error,
           std::string(source) + ": sections are not supported (key '" + item.name + "')");
    if (std::find(seen.begin(), seen.end(), item.name) != seen.end())
      bad_key(item.name, "given twice in " + std::string(source));
    seen.push_back(item.name);
    if (item.inputs.size() != 1) bad_key(item.name, "expected exactly one value");
    set_run_option(c, item.name, item.inputs.front());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io_error, "cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

SeedPlan derive_seeds(std::uint64_t master) noexcept {
  return {derive_seed(master, "mesh"),  derive_seed(master, "dataset"),
          derive_seed(master, "model"), derive_seed(master, "train"),
          derive_seed(master, "bench"), derive_seed(master, "infer")};
}

int biharmonic_interior_target(int target_n) {
  if (target_n < 1) fail(ErrorCategory::invalid_input, "target_n must be >= 1");
  int best = 1;
  long best_gap = -1;
  for (int t = 1; 4L * t <= target_n + 8L; ++t) {
    const long m = static_cast<long>(std::floor(std::sqrt(static_cast<double>(t))));
    const long n = 4L * t + 4L * (m + 1) - 3;
    const long gap = std::labs(n - target_n);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best = t;
    }
  }
  return best;
}

TriMesh mesh_for_target(ProblemFamily family, int target_n, std::uint64_t seed,
                        MeshReport* report) {
  const int interior =
      family == ProblemFamily::poisson ? target_n : biharmonic_interior_target(target_n);
  return generate_mesh(interior, seed, report);
}

void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::io_error, "cannot create " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) fail(ErrorCategory::io_error, dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------------------------------
// Commands

GenDataResult cmd_gen_data(const RunConfig& raw, std::ostream* progress) {
  const RunConfig cfg = raw.resolved();
  const SeedPlan seeds = derive_seeds(cfg.seed);
  const fs::path final_dir = cfg.dataset_dir();
  ensure_writable_dir(final_dir.parent_path().empty() ? fs::path(".") : final_dir.parent_path());
  const fs::path staging = final_dir.string() + ".partial";
  const fs::path quarantine = final_dir.string() + ".quarantine";
  fs::remove_all(staging);
  fs::create_directories(staging);

  GenDataResult result;
  try {
    MeshReport mesh_report;
    const TriMesh mesh = mesh_for_target(cfg.family, cfg.target_n, seeds.mesh, &mesh_report);
    result.n = system_dimension(cfg.family, mesh);
    say(progress, "mesh: " + std::to_string(mesh.num_interior_vertices()) +
                      " interior vertices, system size n = " + std::to_string(result.n) +
                      (mesh_report.note.empty() ? "" : " (" + mesh_report.note + ")"));
    const DatasetSplit split =
        generate_dataset(cfg.family, mesh, cfg.samples, *cfg.extra_fraction, seeds.dataset);
    save_dataset(split, staging);
    validate_manifest(staging);
    write_text(staging / "run_config.toml", cfg.to_toml());
    result.train = static_cast<int>(split.train.size());
    result.test = static_cast<int>(split.test.size());
    result.failures = split.failures;
  } catch (...) {
    std::error_code ec;
    fs::remove(staging / "manifest.json", ec);
    fs::remove_all(quarantine, ec);
    fs::rename(staging, quarantine, ec);
    throw;
  }
  fs::remove_all(final_dir);
  fs::rename(staging, final_dir);
  result.dir = final_dir;
  result.manifest_hash = file_hash(final_dir / "manifest.json");
  say(progress, "dataset: " + std::to_string(result.train) + " train / " +
                    std::to_string(result.test) + " test samples in " + final_dir.string() +
                    ", manifest " + result.manifest_hash);
  return result;
}

TrainOutcome cmd_train(const RunConfig& raw, std::ostream* progress) {
  const RunConfig cfg = raw.resolved();
  const SeedPlan seeds = derive_seeds(cfg.seed);
  const fs::path model_dir = cfg.model_dir();
  ensure_writable_dir(model_dir);
  validate_manifest(cfg.dataset_dir());
  const DatasetSplit split = load_dataset(cfg.dataset_dir(), true);
  if (split.family != cfg.family)
    fail(ErrorCategory::config_error, "dataset family is " + std::string(family_name(split.family)) +
                                          " but the config says " +
                                          std::string(family_name(cfg.family)));

  ModelConfig mc = ModelConfig::for_profile(*cfg.model_profile, split.dim(), seeds.model);
  mc.output_scale = suggest_output_scale(split);
  TrainConfig tc = TrainConfig::for_profile(*cfg.train_profile, seeds.train);
  if (cfg.epochs) tc.epochs = *cfg.epochs;
  if (cfg.batch_size) tc.batch_size = *cfg.batch_size;
  if (cfg.learning_rate) tc.learning_rate = *cfg.learning_rate;
  tc.log_path = model_dir / "train_log.csv";
  tc.validate();

  say(progress, "training " + *cfg.model_profile + " model (n = " + std::to_string(mc.n) + ", " +
                    std::to_string(split.train.size()) + " samples, up to " +
                    std::to_string(tc.epochs) + " epochs)");
  const auto start = std::chrono::steady_clock::now();
  TrainResult res = train(split, mc, tc, [&](const TrainRecord& r) {
    if (progress && (r.epoch == 1 || r.epoch % 10 == 0))
      say(progress, "  epoch " + std::to_string(r.epoch) + "  recon " + real_text(r.mean_recon) +
                        "  kl " + real_text(r.mean_kl));
  });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  TrainOutcome out;
  out.checkpoint = cfg.checkpoint_path();
  out.log = tc.log_path;
  out.epochs_run = static_cast<int>(res.records.size());
  out.early_stopped = res.early_stopped;
  out.lr_halvings = res.lr_halvings;
  out.final_recon = res.records.empty() ? 0.0 : res.records.back().mean_recon;
  res.model.save(out.checkpoint);
  write_text(model_dir / "run_config.toml", cfg.to_toml());
  const json summary = {{"epochs_run", out.epochs_run},
                        {"early_stopped", out.early_stopped},
                        {"lr_halvings", out.lr_halvings},
                        {"final_mean_recon", out.final_recon},
                        {"wall_seconds", seconds},
                        {"model", json::parse(mc.to_json())}};
  write_text(model_dir / "train_summary.json", summary.dump(2) + "\n");
  say(progress, "checkpoint: " + out.checkpoint.string());
  return out;
}

std::vector<fs::path> cmd_infer(const fs::path& checkpoint, const fs::path& matrix,
                                const InferOptions& options) {
  if (options.count < 1) fail(ErrorCategory::config_error, "infer: count must be >= 1");
  if (!fs::exists(checkpoint))
    fail(ErrorCategory::io_error, "checkpoint not found: " + checkpoint.string());
  const Gcvae model = Gcvae::load(checkpoint);
  const CsrMatrix a = mm::read_matrix(matrix);
  if (!a.square() || a.rows() != model.config().n)
    fail(ErrorCategory::dimension_mismatch,
         "matrix " + matrix.string() + " is " + std::to_string(a.rows()) + "x" +
             std::to_string(a.cols()) + " but the checkpoint expects n = " +
             std::to_string(model.config().n));
  const SparsityMask mask = options.mask ? mm::read_mask(*options.mask)
                                         : build_mask(a, options.extra_fraction);
  if (mask.dim() != a.rows())
    fail(ErrorCategory::dimension_mismatch,
         "mask has n = " + std::to_string(mask.dim()) + ", expected n = " +
             std::to_string(a.rows()));
  ensure_writable_dir(options.out);
  std::vector<fs::path> written;
  for (int k = 0; k < options.count; ++k) {
    const Vector z = standard_normal(model.config().latent_dim,
                                     derive_seed(options.seed, "infer", static_cast<std::uint64_t>(k)));
    const CsrMatrix r = model.infer(a, mask, z);
    char name[32];
    std::snprintf(name, sizeof name, "R_%03d.mtx", k);
    mm::write_matrix(options.out / name, r);
    written.push_back(options.out / name);
  }
  return written;
}

BenchOutcome cmd_bench(const RunConfig& raw, std::ostream* progress) {
  const RunConfig cfg = raw.resolved();
  const SeedPlan seeds = derive_seeds(cfg.seed);
  const std::vector<MethodSpec> methods = parse_methods(cfg.methods);
  const bool needs_model = std::any_of(methods.begin(), methods.end(), [](const MethodSpec& m) {
    return m.kind == MethodSpec::Kind::gcvae || m.kind == MethodSpec::Kind::ic_matched;
  });
  std::optional<Gcvae> model;
  if (needs_model) {
    if (!fs::exists(cfg.checkpoint_path()))
      fail(ErrorCategory::config_error, "methods include gcvae but no checkpoint exists at " +
                                            cfg.checkpoint_path().string() + " (run train first)");
    model.emplace(Gcvae::load(cfg.checkpoint_path()));
  }
  ensure_writable_dir(cfg.bench_dir());
  validate_manifest(cfg.dataset_dir());
  const DatasetSplit split = load_dataset(cfg.dataset_dir(), false);

  BenchmarkOptions opt;
  opt.tol = cfg.tol;
  opt.model = model ? &*model : nullptr;
  opt.latent = cfg.latent;
  opt.seed = seeds.bench;
  opt.keep_generated = true;
  say(progress, "benchmarking " + cfg.methods + " on " + std::to_string(split.test.size()) +
                    " test samples (tol " + real_text(cfg.tol) + ")");

  BenchOutcome out;
  out.report = run_benchmark(split.test, methods, opt);
  out.csv = cfg.bench_dir() / "benchmark.csv";
  out.json = cfg.bench_dir() / "benchmark.json";
  write_benchmark_csv(out.csv, out.report.rows);
  write_text(out.json, benchmark_json(out.report) + "\n");
  write_text(cfg.bench_dir() / "run_config.toml", cfg.to_toml());
  out.plots = write_benchmark_plots(out.report.rows, cfg.bench_dir());
  for (const auto& r : out.report.rows)
    say(progress, "  " + r.method + ": iterations " + real_text(r.mean_iterations) +
                      ", kappa (two-sided) " + real_text(r.mean_condition) + ", density " +
                      real_text(r.mean_density));
  return out;
}

std::vector<fs::path> cmd_plot(const std::vector<fs::path>& csvs, const fs::path& out_dir) {
  if (csvs.empty()) fail(ErrorCategory::config_error, "plot: no CSV files given");
  std::vector<BenchmarkRow> rows;
  for (const auto& p : csvs) {
    const auto more = read_benchmark_csv(p);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  return write_benchmark_plots(rows, out_dir);
}

}  // namespace spaigen
