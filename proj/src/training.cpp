#include "spaigen/training.hpp"

#include "spaigen/error.hpp"
#include "spaigen/seeding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

namespace spaigen {

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCategory::config_error, what); };
  if (!(alpha >= 0.0)) bad("train: alpha must be >= 0");
  if (epochs < 1) bad("train: epochs must be >= 1");
  if (batch_size < 1) bad("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) bad("train: learning_rate must be positive");
  if (checkpoint_every < 0) bad("train: checkpoint_every must be >= 0");
  if (checkpoint_every > 0 && checkpoint_dir.empty())
    bad("train: checkpoint_every needs a checkpoint directory");
  if (early_stop_window < 1) bad("train: early_stop_window must be >= 1");
  if (max_lr_halvings < 0) bad("train: max_lr_halvings must be >= 0");
}

TrainConfig TrainConfig::for_profile(std::string_view name, std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  if (name == "poisson") {
    c.epochs = 200;
  } else if (name == "biharmonic") {
    c.epochs = 260;
  } else if (name == "small") {
    c.epochs = 60;
  } else if (name == "smoke") {
    c.epochs = 10;
    c.batch_size = 4;
  } else {
    fail(ErrorCategory::config_error, "unknown train profile '" + std::string(name) + "'");
  }
  return c;
}

double kl_divergence(const Vector& mu, const Vector& log_var) {
  if (mu.size() != log_var.size())
    fail(ErrorCategory::dimension_mismatch, "kl_divergence: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    s += 1.0 + log_var[i] - mu[i] * mu[i] - std::exp(log_var[i]);
  return -0.5 * s;
}

double total_loss(const CsrMatrix& a, const CsrMatrix& r, const Vector& mu, const Vector& log_var,
                  double alpha) {
  const double f = frobenius_residual(a, r);
  return f * f + alpha * kl_divergence(mu, log_var);
}

Vector reconstruction_gradient(const CsrMatrix& a, const CsrMatrix& r, double* loss) {
  const CongruenceResidual cr = congruence_residual(a, r);
  if (loss) *loss = cr.norm * cr.norm;
  const int n = a.rows();
  // d/dR ||E||^2 with E = I - R^T A R is -2 (A R E^T + A^T R E).
  const DenseMatrix et = cr.residual.transpose();
  DenseMatrix at_r = DenseMatrix::Zero(n, n);
  {
    const DenseMatrix rd = r.to_dense();
    const auto rp = a.row_ptr();
    const auto ci = a.col_idx();
    const auto v = a.values();
    for (int i = 0; i < n; ++i)
      for (int k = rp[i]; k < rp[i + 1]; ++k) at_r.row(ci[k]) += v[k] * rd.row(i);
  }
  Vector g(r.nnz());
  const auto rp = r.row_ptr();
  const auto ci = r.col_idx();
  for (int i = 0; i < n; ++i) {
    for (int k = rp[i]; k < rp[i + 1]; ++k) {
      const int j = ci[k];
      g[k] = -2.0 * (cr.a_r.row(i).dot(cr.residual.row(j)) + at_r.row(i).dot(et.row(j)));
    }
  }
  return g;
}

LossTerms sample_loss(const Gcvae& model, const ProblemSample& sample, const Vector& eps,
                      double alpha, nn::ParameterSet* grad, double weight) {
  ForwardTrace trace;
  const ForwardResult fwd = model.forward_train(sample, eps, grad ? &trace : nullptr);
  LossTerms out;
  const auto& mu = fwd.latent.mu;
  const auto& lv = fwd.latent.log_var;
  out.kl = kl_divergence(mu, lv);
  if (!grad) {
    const double f = frobenius_residual(sample.a, fwd.r);
    out.recon = f * f;
    out.total = out.recon + alpha * out.kl;
    return out;
  }
  Vector d_r = reconstruction_gradient(sample.a, fwd.r, &out.recon);
  out.total = out.recon + alpha * out.kl;
  if (!std::isfinite(out.total)) return out;
  for (double& d : d_r) d *= weight;
  Vector d_mu(mu.size()), d_lv(lv.size());
  for (std::size_t k = 0; k < mu.size(); ++k) {
    d_mu[k] = weight * alpha * mu[k];
    d_lv[k] = weight * alpha * 0.5 * (std::exp(lv[k]) - 1.0);
  }
  model.backward(trace, d_r, d_mu, d_lv, *grad);
  return out;
}

double suggest_output_scale(const DatasetSplit& split) {
  double sum = 0.0;
  long count = 0;
  for (const auto& s : split.train) {
    for (int i = 0; i < s.dim(); ++i) sum += s.a.at(i, i);
    count += s.dim();
  }
  if (count == 0 || !(sum > 0.0))
    fail(ErrorCategory::invalid_input, "cannot derive an output scale from an empty split");
  return 1.0 / std::sqrt(sum / static_cast<double>(count));
}

Vector standard_normal(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(static_cast<std::size_t>(n));
  for (double& x : v) x = normal(rng);
  return v;
}

void write_train_log_header(std::ostream& out) {
  out << "epoch,mean_recon,mean_kl,mean_total,learning_rate\n";
}

void write_train_log_row(std::ostream& out, const TrainRecord& r) {
  out << r.epoch << ',' << std::setprecision(17) << r.mean_recon << ',' << r.mean_kl << ','
      << r.mean_total << ',' << r.learning_rate << '\n';
}

namespace {

void check_split(const DatasetSplit& split, const ModelConfig& mc) {
  if (split.train.empty()) fail(ErrorCategory::invalid_input, "train: empty training split");
  const auto& first = split.train.front();
  for (const auto& s : split.train) {
    if (s.dim() != mc.n)
      fail(ErrorCategory::dimension_mismatch, "train: sample dimension " +
                                                  std::to_string(s.dim()) + " != model n " +
                                                  std::to_string(mc.n));
    if (!s.a_inv) fail(ErrorCategory::invalid_input, "train: samples must carry A_inv");
    if (!s.a.same_pattern(first.a))
      fail(ErrorCategory::invalid_input, "train: samples do not share one sparsity pattern");
  }
}

}  // namespace

TrainResult train(const DatasetSplit& split, const ModelConfig& model_config,
                  const TrainConfig& config,
                  const std::function<void(const TrainRecord&)>& on_epoch) {
  config.validate();
  check_split(split, model_config);
  TrainResult result{Gcvae(model_config), {}, false, 0};
  Gcvae& model = result.model;
  nn::ParameterSet& params = model.parameters();
  nn::ParameterSet grad = params.zeros_like();
  nn::Adam adam(params, config.learning_rate);

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path);
    if (!log) fail(ErrorCategory::io_error, "cannot write training log " + config.log_path.string());
    write_train_log_header(log);
  }
  if (config.checkpoint_every > 0) std::filesystem::create_directories(config.checkpoint_dir);

  const int n_train = static_cast<int>(split.train.size());
  const int latent = model_config.latent_dim;
  std::vector<int> order(n_train);
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t eps_seed = derive_seed(config.seed, "eps", static_cast<std::uint64_t>(epoch));

    const nn::ParameterSet snapshot = params;
    const nn::Adam adam_snapshot = adam;
    TrainRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = adam.learning_rate();
    bool diverged = false;
    for (int begin = 0; begin < n_train && !diverged; begin += config.batch_size) {
      const int end = std::min(n_train, begin + config.batch_size);
      const double weight = 1.0 / (end - begin);
      grad.set_zero();
      for (int k = begin; k < end; ++k) {
        const ProblemSample& s = split.train[order[k]];
        const Vector eps =
            standard_normal(latent, derive_seed(eps_seed, "sample", static_cast<std::uint64_t>(s.index)));
        LossTerms terms;
        try {
          terms = sample_loss(model, s, eps, config.alpha, &grad, weight);
        } catch (const Error& e) {
          if (e.category() != ErrorCategory::numerical_failure) throw;
          terms.total = std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isfinite(terms.total)) {
          diverged = true;
          break;
        }
        rec.mean_recon += terms.recon;
        rec.mean_kl += terms.kl;
        rec.mean_total += terms.total;
      }
      if (!diverged && !grad.all_finite()) diverged = true;
      if (!diverged) adam.step(params, grad);
    }
    if (diverged || !params.all_finite()) {
      if (result.lr_halvings >= config.max_lr_halvings)
        fail(ErrorCategory::numerical_failure,
             "training diverged at epoch " + std::to_string(epoch) + " after " +
                 std::to_string(result.lr_halvings) + " learning-rate halvings");
      params = snapshot;
      adam = adam_snapshot;
      adam.set_learning_rate(adam.learning_rate() * 0.5);
      ++result.lr_halvings;
      --epoch;
      continue;
    }
    rec.mean_recon /= n_train;
    rec.mean_kl /= n_train;
    rec.mean_total /= n_train;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.records.push_back(rec);
    if (log) {
      write_train_log_row(log, rec);
      log.flush();
    }
    if (on_epoch) on_epoch(rec);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      model.save(config.checkpoint_dir / name);
    }
    const int w = config.early_stop_window;
    if (static_cast<int>(result.records.size()) > w) {
      const double before = result.records[result.records.size() - 1 - w].mean_recon;
      if (before - rec.mean_recon < config.early_stop_tol * before) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

GradientCheckReport gradient_check(const std::function<double(const nn::ParameterSet&)>& loss,
                                   const nn::ParameterSet& at, const nn::ParameterSet& analytic,
                                   double step, int samples, std::uint64_t seed,
                                   bool stratified) {
  if (!(step > 0.0)) fail(ErrorCategory::invalid_input, "gradient_check: step must be positive");
  if (!at.same_layout(analytic))
    fail(ErrorCategory::dimension_mismatch, "gradient_check: gradient layout mismatch");
  Rng rng(seed);
  const std::size_t total = at.num_scalars();
  std::set<std::size_t> picks;
  std::size_t offset = 0;
  if (stratified) {
    for (int t = 0; t < at.count(); ++t) {
      const std::size_t size = at[t].size();
      std::uniform_int_distribution<std::size_t> u(0, size - 1);
      const std::size_t want = std::min<std::size_t>(size, 4);
      std::set<std::size_t> local;
      while (local.size() < want) local.insert(u(rng));
      for (std::size_t k : local) picks.insert(offset + k);
      offset += size;
    }
  }
  std::uniform_int_distribution<std::size_t> any(0, total - 1);
  while (picks.size() < std::min<std::size_t>(total, static_cast<std::size_t>(samples)))
    picks.insert(any(rng));

  // Names for reporting.
  std::vector<std::size_t> starts;
  offset = 0;
  for (int t = 0; t < at.count(); ++t) {
    starts.push_back(offset);
    offset += at[t].size();
  }

  GradientCheckReport report;
  nn::ParameterSet probe = at;
  for (std::size_t k : picks) {
    const double original = probe.flat(k);
    probe.flat(k) = original + step;
    const double up = loss(probe);
    probe.flat(k) = original - step;
    const double down = loss(probe);
    probe.flat(k) = original;
    const double numeric = (up - down) / (2.0 * step);
    const double exact = analytic.flat(k);
    const double err =
        std::abs(numeric - exact) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      const auto it = std::upper_bound(starts.begin(), starts.end(), k);
      report.worst_parameter = at.name(static_cast<int>(it - starts.begin()) - 1);
      report.worst_analytic = exact;
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  return report;
}

GradientCheckReport gradient_check(const ModelConfig& config, const ProblemSample& sample,
                                   double step, int samples, std::uint64_t seed, double alpha,
                                   bool stratified) {
  Gcvae model(config);
  const Vector eps = standard_normal(config.latent_dim, derive_seed(seed, "gradcheck-eps"));
  nn::ParameterSet analytic = model.parameters().zeros_like();
  sample_loss(model, sample, eps, alpha, &analytic);
  const nn::ParameterSet base = model.parameters();
  auto loss = [&](const nn::ParameterSet& p) {
    model.parameters() = p;
    return sample_loss(model, sample, eps, alpha).total;
  };
  GradientCheckReport report =
      gradient_check(loss, base, analytic, step, samples, derive_seed(seed, "gradcheck-pick"),
                     stratified);
  model.parameters() = base;
  return report;
}

}  // namespace spaigen
