// spaigen: dataset generation, training, inference, benchmarking and plotting.
//
// Failures print a single line `error[<category>]: <message>` on stderr and exit nonzero.

#include "spaigen/error.hpp"
#include "spaigen/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using namespace spaigen;

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config_error: return 2;
    case ErrorCategory::invalid_input: return 3;
    case ErrorCategory::dimension_mismatch: return 4;
    case ErrorCategory::io_error: return 5;
    case ErrorCategory::numerical_failure: return 6;
    case ErrorCategory::not_converged: return 7;
  }
  return 1;
}

// Flags shared by the run-config driven verbs. Values stay textual until the schema sees them.
struct RunFlags {
  std::string config;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "TOML-style run configuration")->check(CLI::ExistingFile);
    add(cmd, "--seed", "seed", "master seed");
    add(cmd, "--family", "family", "poisson or biharmonic");
    add(cmd, "--n", "target_n", "target system dimension");
    add(cmd, "--samples", "samples", "number of matrices N (split 4:1)");
    add(cmd, "--extra-fraction", "extra_fraction", "mask extras as a fraction of nnz(A)");
    add(cmd, "--model-profile", "model_profile", "poisson, biharmonic, small or smoke");
    add(cmd, "--train-profile", "train_profile", "poisson, biharmonic, small or smoke");
    add(cmd, "--epochs", "epochs", "training epochs");
    add(cmd, "--batch-size", "batch_size", "minibatch size");
    add(cmd, "--lr", "learning_rate", "Adam learning rate");
    add(cmd, "--tol", "tol", "PCG relative residual tolerance");
    add(cmd, "--methods", "methods", "comma list: jacobi, ic_droptol[(t)], ic_matched, gcvae");
    add(cmd, "--latent", "latent", "prior_mean or prior_sample");
    add(cmd, "--out", "out", "run directory");
    add(cmd, "--dataset", "dataset", "dataset directory (default <out>/dataset)");
    add(cmd, "--checkpoint", "checkpoint", "checkpoint path (default <out>/model/model.ckpt)");
  }

  void add(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  RunConfig build() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    for (const auto& [key, value] : values) set_run_option(c, key, value);
    return c.resolved();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate and benchmark learned sparse approximate inverse preconditioners"};
  app.require_subcommand(1);

  RunFlags gen_flags, train_flags, bench_flags;
  auto* gen = app.add_subcommand("gen-data", "generate a dataset of FEM matrices");
  gen_flags.attach(gen);
  auto* tr = app.add_subcommand("train", "train the generative model on a dataset");
  train_flags.attach(tr);
  auto* bench = app.add_subcommand("bench", "benchmark preconditioners on the test split");
  bench_flags.attach(bench);

  auto* infer = app.add_subcommand("infer", "generate preconditioner factors for one matrix");
  std::string ckpt, matrix, mask, infer_out = ".";
  double infer_extra = 0.0;
  int count = 1;
  std::uint64_t infer_seed = 0;
  infer->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  infer->add_option("--matrix", matrix, "Matrix Market file")->required()->check(CLI::ExistingFile);
  infer->add_option("--mask", mask, "pattern file; default builds one from A")
      ->check(CLI::ExistingFile);
  infer->add_option("--extra-fraction", infer_extra, "mask extras when no --mask is given")
      ->check(CLI::Range(0.0, 1.0));
  infer->add_option("--count", count, "number of factors")->check(CLI::PositiveNumber);
  infer->add_option("--seed", infer_seed, "master seed for latent draws");
  infer->add_option("--out", infer_out, "output directory");

  auto* plot = app.add_subcommand("plot", "draw comparison plots from benchmark CSVs");
  std::vector<std::string> csvs;
  std::string plot_out = "plots";
  plot->add_option("csv", csvs, "benchmark CSV files")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << '\n';
    return 64;
  }

  try {
    if (*gen) {
      const GenDataResult r = cmd_gen_data(gen_flags.build(), &std::cout);
      for (const auto& f : r.failures) std::cout << "discarded: " << f << '\n';
    } else if (*tr) {
      cmd_train(train_flags.build(), &std::cout);
    } else if (*bench) {
      const BenchOutcome r = cmd_bench(bench_flags.build(), &std::cout);
      std::cout << "wrote " << r.csv.string() << ", " << r.json.string() << '\n';
    } else if (*infer) {
      InferOptions o;
      if (!mask.empty()) o.mask = fs::path(mask);
      o.extra_fraction = infer_extra;
      o.count = count;
      o.seed = derive_seeds(infer_seed).infer;
      o.out = infer_out;
      for (const auto& p : cmd_infer(ckpt, matrix, o)) std::cout << p.string() << '\n';
    } else if (*plot) {
      std::vector<fs::path> paths(csvs.begin(), csvs.end());
      for (const auto& p : cmd_plot(paths, plot_out)) std::cout << p.string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io_error]: " << e.what() << '\n';
    return exit_code(ErrorCategory::io_error);
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
