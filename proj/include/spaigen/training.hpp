#pragma once

#include "spaigen/dataset.hpp"
#include "spaigen/model.hpp"
#include "spaigen/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string_view>
#include <vector>

namespace spaigen {

struct TrainConfig {
  double alpha = 0.1;  // KL weight
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;  // CSV log; empty disables
  // Stop once mean_recon improved by less than early_stop_tol (relative) over the window.
  int early_stop_window = 10;
  double early_stop_tol = 1e-3;
  int max_lr_halvings = 3;

  void validate() const;

  /// "poisson" (200 epochs), "biharmonic" (260), "small" (60), "smoke" (10).
  static TrainConfig for_profile(std::string_view name, std::uint64_t seed);
};

struct TrainRecord {
  int epoch = 0;  // 1-based
  double mean_recon = 0.0;
  double mean_kl = 0.0;
  double mean_total = 0.0;
  double learning_rate = 0.0;
  double wall_seconds = 0.0;  // not logged to CSV, so logs compare byte for byte
};

struct LossTerms {
  double recon = 0.0;  // ||I - R^T A R||_F^2
  double kl = 0.0;
  double total = 0.0;
};

/// -1/2 sum(1 + log_var - mu^2 - exp(log_var)).
double kl_divergence(const Vector& mu, const Vector& log_var);

/// ||I - R^T A R||_F^2 + alpha * KL.
double total_loss(const CsrMatrix& a, const CsrMatrix& r, const Vector& mu, const Vector& log_var,
                  double alpha);

/// Gradient of ||I - R^T A R||_F^2 with respect to the stored entries of R, in CSR order.
/// Writes the loss value to *loss when given.
Vector reconstruction_gradient(const CsrMatrix& a, const CsrMatrix& r, double* loss = nullptr);

/// Loss of one sample at fixed eps. When grad is given, weight * dLoss/dparams is added to it.
LossTerms sample_loss(const Gcvae& model, const ProblemSample& sample, const Vector& eps,
                      double alpha, nn::ParameterSet* grad = nullptr, double weight = 1.0);

/// 1 / sqrt(mean diagonal of A) over the training samples: the scale of a Jacobi-like
/// factor, used as ModelConfig::output_scale.
double suggest_output_scale(const DatasetSplit& split);

struct TrainResult {
  Gcvae model;
  std::vector<TrainRecord> records;
  bool early_stopped = false;
  int lr_halvings = 0;
};

/// Minibatch Adam on the mean total loss with one fresh eps draw per sample per epoch.
/// A non-finite loss rolls the epoch back and halves the learning rate, at most
/// max_lr_halvings times.
TrainResult train(const DatasetSplit& split, const ModelConfig& model_config,
                  const TrainConfig& config,
                  const std::function<void(const TrainRecord&)>& on_epoch = {});

void write_train_log_header(std::ostream& out);
void write_train_log_row(std::ostream& out, const TrainRecord& r);

/// Central-difference check of an analytic gradient at `samples` parameter coordinates drawn
/// uniformly over all scalars; `stratified` additionally forces min(size, 4) coordinates from
/// every tensor. Reports the max relative error with denominator max(|analytic|, |numeric|,
/// 1e-8).
struct GradientCheckReport {
  double max_relative_error = 0.0;
  int checked = 0;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradientCheckReport gradient_check(const std::function<double(const nn::ParameterSet&)>& loss,
                                   const nn::ParameterSet& at, const nn::ParameterSet& analytic,
                                   double step, int samples, std::uint64_t seed,
                                   bool stratified = false);

/// Full-model check of total_loss at a fixed eps drawn from `seed`.
GradientCheckReport gradient_check(const ModelConfig& config, const ProblemSample& sample,
                                   double step, int samples = 200, std::uint64_t seed = 0,
                                   double alpha = 0.1, bool stratified = false);

/// Standard normal vector from a seeded stream.
Vector standard_normal(int n, std::uint64_t seed);

}  // namespace spaigen
