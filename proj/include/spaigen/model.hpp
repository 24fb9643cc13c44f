#pragma once

#include "spaigen/dataset.hpp"
#include "spaigen/nn.hpp"
#include "spaigen/sparse.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace spaigen {

struct ModelConfig {
  std::string profile = "custom";
  int n = 0;  // matrix dimension served by the model
  int gnn_layers = 3;
  int gnn_hidden = 32;
  std::vector<int> cnn_channels{16, 32, 64};
  int latent_dim = 64;
  int mlp_hidden = 128;
  // Decoded factor is R = output_scale * (I + X) on the mask, X the decoder image. Set from
  // training data so the initial R has the right order of magnitude. Not learned.
  double output_scale = 1.0;
  std::uint64_t seed = 0;

  int cnn_layers() const noexcept { return static_cast<int>(cnn_channels.size()); }
  /// ceil(n / 2^cnn_layers): side of the decoder's first feature map.
  int decoder_base_resolution() const noexcept;
  /// Side of the zero-padded square image the CNNs work on (>= n).
  int padded_side() const noexcept { return decoder_base_resolution() << cnn_layers(); }
  int cnn_feature_size() const noexcept;

  /// Throws Error(config_error) when a field is out of range.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  /// Named presets: "poisson", "biharmonic", "small", "smoke".
  static ModelConfig for_profile(std::string_view name, int n, std::uint64_t seed);
};

struct LatentSample {
  Vector mu;
  Vector log_var;
  Vector eps;
  Vector z;
};

struct ConditionEmbedding {
  Vector g;              // mean of per_node rows
  DenseMatrix per_node;  // n x gnn_hidden
};

/// z = mu + exp(log_var / 2) * eps, elementwise.
Vector reparameterize(const Vector& mu, const Vector& log_var, const Vector& eps);

/// Signed logarithm sign(x) log(1 + |x|), applied to matrix entries before the GNN.
double signed_log(double x) noexcept;

/// Activations kept by a traced forward pass for the backward sweep.
struct ForwardTrace {
  CsrMatrix adjacency;  // transformed edge weights
  std::vector<DenseMatrix> gnn_in, gnn_pre;
  std::vector<nn::GatCache> gnn_cache;
  std::vector<DenseMatrix> cnn_in, cnn_pre;
  DenseMatrix head_in, head_pre;
  DenseMatrix dec_in, dec_pre, map_pre;
  std::vector<DenseMatrix> up_in, up_pre;
  LatentSample latent;
  SparsityMask mask;
};

struct ForwardResult {
  CsrMatrix r;
  LatentSample latent;
};

class Gcvae {
 public:
  /// Registers all parameter tensors and initialises them from config.seed.
  explicit Gcvae(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }

  ConditionEmbedding graph_encode(const GraphForm& graph, ForwardTrace* trace = nullptr) const;
  Vector cnn_encode(const DenseMatrix& a_inv, ForwardTrace* trace = nullptr) const;
  void latent_head(const Vector& g, const Vector& c, Vector& mu, Vector& log_var,
                   ForwardTrace* trace = nullptr) const;
  CsrMatrix decode(const Vector& z, const Vector& g, const SparsityMask& mask,
                   ForwardTrace* trace = nullptr) const;

  /// Full training-time pass with a caller-supplied eps. Requires sample.a_inv.
  ForwardResult forward_train(const ProblemSample& sample, const Vector& eps,
                              ForwardTrace* trace = nullptr) const;

  /// Generation from A alone: graph condition plus a latent draw, decoded on the mask.
  CsrMatrix infer(const CsrMatrix& a, const SparsityMask& mask, const Vector& z) const;

  /// Accumulates into grad the parameter gradient of a scalar loss, given dL/dR on the
  /// stored entries of R (CSR order, i.e. mask order) and the direct dL/dmu, dL/dlog_var.
  void backward(const ForwardTrace& trace, std::span<const double> d_r, const Vector& d_mu,
                const Vector& d_log_var, nn::ParameterSet& grad) const;

  void save(const std::filesystem::path& path) const;
  /// Fails with a dimension_mismatch or io_error on any format or layout disagreement.
  static Gcvae load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  nn::ParameterSet params_;
  std::vector<nn::GatLayer> gnn_;
  std::vector<nn::Conv2d> encoder_;
  nn::Linear head_hidden_, head_mu_, head_log_var_;
  nn::Linear dec_hidden_, dec_map_;
  std::vector<nn::ConvTranspose2d> decoder_;

  void check_dim(int n, const char* what) const;
};

}  // namespace spaigen
