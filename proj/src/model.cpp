#include "spaigen/model.hpp"

#include "spaigen/error.hpp"
#include "spaigen/seeding.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace spaigen {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'I', 'G', 'C', 'V', 'A'};
constexpr double kDecoderOutputInitGain = 0.01;
constexpr std::uint32_t kCheckpointVersion = 2;  // 2: identity-anchored decoder output

DenseMatrix row(const Vector& v) {
  DenseMatrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

Vector to_vector(const DenseMatrix& m) { return Vector(m.data(), m.data() + m.size()); }

DenseMatrix concat(const Vector& a, const Vector& b) {
  DenseMatrix m(1, static_cast<Eigen::Index>(a.size() + b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = a[i];
  for (std::size_t i = 0; i < b.size(); ++i)
    m(0, static_cast<Eigen::Index>(a.size() + i)) = b[i];
  return m;
}

// Row-major reinterpretation with a copy (Eigen's resize discards contents).
DenseMatrix reshape(const DenseMatrix& m, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const DenseMatrix>(m.data(), rows, cols);
}

void require_finite(const DenseMatrix& m, const char* where) {
  if (!m.allFinite())
    fail(ErrorCategory::numerical_failure, std::string("non-finite activations in ") + where);
}

}  // namespace

// ---------------------------------------------------------------------------------------
// ModelConfig

int ModelConfig::decoder_base_resolution() const noexcept {
  const int stride = 1 << cnn_layers();
  return std::max(1, (n + stride - 1) / stride);
}

int ModelConfig::cnn_feature_size() const noexcept {
  const int base = decoder_base_resolution();
  return cnn_channels.empty() ? 0 : cnn_channels.back() * base * base;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCategory::config_error, what); };
  if (n < 1) bad("model: n must be >= 1");
  if (gnn_layers < 1) bad("model: gnn_layers must be >= 1");
  if (gnn_hidden < 1) bad("model: gnn_hidden must be >= 1");
  if (cnn_layers() < 1 || cnn_layers() > 6) bad("model: cnn_layers must lie in [1, 6]");
  for (int c : cnn_channels)
    if (c < 1) bad("model: cnn channel counts must be >= 1");
  if (latent_dim < 1) bad("model: latent_dim must be >= 1");
  if (mlp_hidden < 1) bad("model: mlp_hidden must be >= 1");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale))
    bad("model: output_scale must be positive");
}

std::string ModelConfig::to_json() const {
  json j = {{"profile", profile},
            {"n", n},
            {"gnn_layers", gnn_layers},
            {"gnn_hidden", gnn_hidden},
            {"cnn_channels", cnn_channels},
            {"latent_dim", latent_dim},
            {"mlp_hidden", mlp_hidden},
            {"output_scale", output_scale},
            {"seed", seed},
            {"decoder_base_resolution", decoder_base_resolution()},
            {"padded_side", padded_side()}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.profile = j.at("profile").get<std::string>();
    c.n = j.at("n").get<int>();
    c.gnn_layers = j.at("gnn_layers").get<int>();
    c.gnn_hidden = j.at("gnn_hidden").get<int>();
    c.cnn_channels = j.at("cnn_channels").get<std::vector<int>>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.output_scale = j.at("output_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.at("decoder_base_resolution").get<int>() != c.decoder_base_resolution() ||
        j.at("padded_side").get<int>() != c.padded_side())
      fail(ErrorCategory::dimension_mismatch, "model config: derived sizes disagree");
  } catch (const json::exception& e) {
    fail(ErrorCategory::io_error, std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::for_profile(std::string_view name, int n, std::uint64_t seed) {
  ModelConfig c;
  c.profile = std::string(name);
  c.n = n;
  c.seed = seed;
  if (name == "poisson") {
    c.cnn_channels = {16, 32, 64};
  } else if (name == "biharmonic") {
    c.cnn_channels = {16, 32, 64, 128};
  } else if (name == "small") {
    c.gnn_layers = 2;
    c.gnn_hidden = 16;
    c.cnn_channels = {4, 8, 16};
    c.latent_dim = 16;
    c.mlp_hidden = 64;
  } else if (name == "smoke") {
    c.gnn_layers = 2;
    c.gnn_hidden = 8;
    c.cnn_channels = {2, 4, 4};
    c.latent_dim = 4;
    c.mlp_hidden = 16;
  } else {
    fail(ErrorCategory::config_error, "unknown model profile '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------
// Free functions

Vector reparameterize(const Vector& mu, const Vector& log_var, const Vector& eps) {
  if (mu.size() != log_var.size() || mu.size() != eps.size())
    fail(ErrorCategory::dimension_mismatch, "reparameterize: length mismatch");
  Vector z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * log_var[i]) * eps[i];
  return z;
}

double signed_log(double x) noexcept { return std::copysign(std::log1p(std::abs(x)), x); }

// ---------------------------------------------------------------------------------------
// Gcvae

Gcvae::Gcvae(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int hidden = config_.gnn_hidden;
  for (int l = 0; l < config_.gnn_layers; ++l)
    gnn_.emplace_back(params_, "gnn." + std::to_string(l), l == 0 ? 1 : hidden, hidden);
  int channels = 1;
  for (int l = 0; l < config_.cnn_layers(); ++l) {
    encoder_.emplace_back(params_, "encoder." + std::to_string(l), channels,
                          config_.cnn_channels[l]);
    channels = config_.cnn_channels[l];
  }
  head_hidden_ =
      nn::Linear(params_, "head.hidden", hidden + config_.cnn_feature_size(), config_.mlp_hidden);
  head_mu_ = nn::Linear(params_, "head.mu", config_.mlp_hidden, config_.latent_dim);
  head_log_var_ = nn::Linear(params_, "head.log_var", config_.mlp_hidden, config_.latent_dim);
  dec_hidden_ =
      nn::Linear(params_, "decoder.hidden", config_.latent_dim + hidden, config_.mlp_hidden);
  dec_map_ = nn::Linear(params_, "decoder.map", config_.mlp_hidden, config_.cnn_feature_size());
  for (int l = config_.cnn_layers() - 1; l >= 0; --l) {
    const int out = l == 0 ? 1 : config_.cnn_channels[l - 1];
    decoder_.emplace_back(params_, "decoder.up." + std::to_string(config_.cnn_layers() - 1 - l),
                          config_.cnn_channels[l], out);
  }

  Rng rng(derive_seed(config_.seed, "model-init"));
  for (const auto& layer : gnn_) layer.init(params_, rng);
  for (const auto& layer : encoder_) layer.init(params_, rng);
  head_hidden_.init(params_, rng);
  head_mu_.init(params_, rng);
  head_log_var_.init(params_, rng);
  dec_hidden_.init(params_, rng);
  dec_map_.init(params_, rng);
  for (const auto& layer : decoder_) layer.init(params_, rng);
  // Start near R = s I: a small last layer keeps the identity anchor in charge early on.
  const std::string last = "decoder.up." + std::to_string(decoder_.size() - 1);
  for (const char* part : {".weight", ".bias"}) {
    const int idx = params_.index_of(last + part);
    if (idx >= 0)
      for (double& v : params_[idx].data) v *= kDecoderOutputInitGain;
  }
}

void Gcvae::check_dim(int n, const char* what) const {
  if (n != config_.n)
    fail(ErrorCategory::dimension_mismatch, std::string(what) + " has dimension " +
                                                std::to_string(n) + ", model expects n = " +
                                                std::to_string(config_.n));
}

ConditionEmbedding Gcvae::graph_encode(const GraphForm& graph, ForwardTrace* trace) const {
  const int n = graph.num_nodes();
  check_dim(n, "graph");
  if (static_cast<int>(graph.node_features.size()) != n)
    fail(ErrorCategory::invalid_input, "graph: node feature length differs from node count");
  for (int i = 0; i < n; ++i)
    if (!graph.adjacency.contains(i, i))
      fail(ErrorCategory::invalid_input, "graph: missing self-loop at node " + std::to_string(i));

  CsrMatrix adjacency = graph.adjacency;
  for (double& w : adjacency.values_mut()) w = signed_log(w);
  DenseMatrix h(n, 1);
  for (int i = 0; i < n; ++i) h(i, 0) = signed_log(graph.node_features[i]);

  for (int l = 0; l < config_.gnn_layers; ++l) {
    nn::GatCache cache;
    DenseMatrix pre = gnn_[l].forward(params_, adjacency, h, trace ? &cache : nullptr);
    if (trace) {
      trace->gnn_in.push_back(h);
      trace->gnn_pre.push_back(pre);
      trace->gnn_cache.push_back(std::move(cache));
    }
    h = l + 1 < config_.gnn_layers ? nn::tanh(pre) : std::move(pre);
  }
  require_finite(h, "graph encoder");
  if (trace) trace->adjacency = std::move(adjacency);

  ConditionEmbedding out;
  out.per_node = std::move(h);
  out.g = to_vector(out.per_node.colwise().mean());
  return out;
}

Vector Gcvae::cnn_encode(const DenseMatrix& a_inv, ForwardTrace* trace) const {
  if (a_inv.rows() != a_inv.cols())
    fail(ErrorCategory::dimension_mismatch, "cnn_encode: inverse must be square");
  check_dim(static_cast<int>(a_inv.rows()), "inverse");
  if (!a_inv.allFinite()) fail(ErrorCategory::invalid_input, "cnn_encode: non-finite inverse");
  const int n = config_.n;
  int side = config_.padded_side();
  const double peak = a_inv.cwiseAbs().maxCoeff();
  const double scale = peak > 0.0 ? 1.0 / peak : 1.0;
  DenseMatrix x = DenseMatrix::Zero(1, static_cast<Eigen::Index>(side) * side);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) x(0, i * side + j) = a_inv(i, j) * scale;

  for (const auto& conv : encoder_) {
    DenseMatrix pre = conv.forward(params_, x, side);
    if (trace) {
      trace->cnn_in.push_back(std::move(x));
      trace->cnn_pre.push_back(pre);
    }
    x = nn::softplus(pre);
    side /= 2;
  }
  require_finite(x, "CNN encoder");
  return to_vector(x);
}

void Gcvae::latent_head(const Vector& g, const Vector& c, Vector& mu, Vector& log_var,
                        ForwardTrace* trace) const {
  if (static_cast<int>(g.size()) != config_.gnn_hidden ||
      static_cast<int>(c.size()) != config_.cnn_feature_size())
    fail(ErrorCategory::dimension_mismatch, "latent_head: input sizes do not match config");
  DenseMatrix in = concat(g, c);
  DenseMatrix pre = head_hidden_.forward(params_, in);
  const DenseMatrix h = nn::softplus(pre);
  const DenseMatrix m = head_mu_.forward(params_, h);
  const DenseMatrix lv = head_log_var_.forward(params_, h);
  require_finite(m, "latent head");
  require_finite(lv, "latent head");
  mu = to_vector(m);
  log_var = to_vector(lv);
  if (trace) {
    trace->head_in = std::move(in);
    trace->head_pre = std::move(pre);
  }
}

CsrMatrix Gcvae::decode(const Vector& z, const Vector& g, const SparsityMask& mask,
                        ForwardTrace* trace) const {
  if (static_cast<int>(z.size()) != config_.latent_dim ||
      static_cast<int>(g.size()) != config_.gnn_hidden)
    fail(ErrorCategory::dimension_mismatch, "decode: latent or condition size mismatch");
  check_dim(mask.dim(), "mask");
  DenseMatrix in = concat(z, g);
  DenseMatrix pre = dec_hidden_.forward(params_, in);
  DenseMatrix map_pre = dec_map_.forward(params_, nn::softplus(pre));
  int side = config_.decoder_base_resolution();
  DenseMatrix x = reshape(nn::softplus(map_pre), config_.cnn_channels.back(),
                          static_cast<Eigen::Index>(side) * side);
  if (trace) {
    trace->dec_in = std::move(in);
    trace->dec_pre = std::move(pre);
    trace->map_pre = std::move(map_pre);
  }
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    DenseMatrix up = decoder_[l].forward(params_, x, side);
    if (trace) {
      trace->up_in.push_back(std::move(x));
      trace->up_pre.push_back(up);
    }
    x = l + 1 < decoder_.size() ? nn::softplus(up) : std::move(up);
    side *= 2;
  }
  require_finite(x, "decoder");

  std::vector<int> row_ptr(mask.row_ptr().begin(), mask.row_ptr().end());
  std::vector<int> col_idx(mask.col_idx().begin(), mask.col_idx().end());
  std::vector<double> values(col_idx.size());
  // R = s (I + X) on the mask. The loss cannot see column signs of R (R and R diag(+-1)
  // give the same R^T A R), so without the identity anchor the decoder settles on arbitrary
  // signs and the prior-mean decode averages them towards a singular factor.
  for (int i = 0; i < mask.dim(); ++i)
    for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      values[k] = config_.output_scale * (x(0, i * side + col_idx[k]) + (col_idx[k] == i ? 1.0 : 0.0));
  if (trace) trace->mask = mask;
  return CsrMatrix(mask.dim(), mask.dim(), std::move(row_ptr), std::move(col_idx),
                   std::move(values));
}

ForwardResult Gcvae::forward_train(const ProblemSample& sample, const Vector& eps,
                                   ForwardTrace* trace) const {
  if (!sample.a_inv) fail(ErrorCategory::invalid_input, "forward_train needs the exact inverse");
  if (static_cast<int>(eps.size()) != config_.latent_dim)
    fail(ErrorCategory::dimension_mismatch, "forward_train: eps length differs from latent_dim");
  const ConditionEmbedding cond = graph_encode(to_graph(sample.a), trace);
  const Vector c = cnn_encode(*sample.a_inv, trace);
  ForwardResult out;
  LatentSample& lat = out.latent;
  latent_head(cond.g, c, lat.mu, lat.log_var, trace);
  lat.eps = eps;
  lat.z = reparameterize(lat.mu, lat.log_var, eps);
  out.r = decode(lat.z, cond.g, sample.mask, trace);
  if (trace) trace->latent = lat;
  return out;
}

CsrMatrix Gcvae::infer(const CsrMatrix& a, const SparsityMask& mask, const Vector& z) const {
  check_dim(a.rows(), "matrix");
  const ConditionEmbedding cond = graph_encode(to_graph(a));
  return decode(z, cond.g, mask);
}

void Gcvae::backward(const ForwardTrace& t, std::span<const double> d_r, const Vector& d_mu,
                     const Vector& d_log_var, nn::ParameterSet& grad) const {
  if (!grad.same_layout(params_))
    fail(ErrorCategory::dimension_mismatch, "backward: gradient layout differs from parameters");
  if (static_cast<int>(d_r.size()) != t.mask.size())
    fail(ErrorCategory::dimension_mismatch, "backward: dR length differs from mask size");
  const int hidden = config_.gnn_hidden;
  const int latent = config_.latent_dim;

  // Decoder.
  const int full_side = config_.padded_side();
  DenseMatrix dx = DenseMatrix::Zero(1, static_cast<Eigen::Index>(full_side) * full_side);
  const auto rp = t.mask.row_ptr();
  const auto ci = t.mask.col_idx();
  for (int i = 0; i < t.mask.dim(); ++i)
    for (int k = rp[i]; k < rp[i + 1]; ++k)
      dx(0, i * full_side + ci[k]) = config_.output_scale * d_r[k];
  int side = full_side;
  for (int l = static_cast<int>(decoder_.size()) - 1; l >= 0; --l) {
    side /= 2;
    const DenseMatrix d_up =
        l + 1 < static_cast<int>(decoder_.size()) ? nn::softplus_backward(t.up_pre[l], dx) : dx;
    dx = decoder_[l].backward(params_, grad, t.up_in[l], side, d_up);
  }
  const DenseMatrix d_map = nn::softplus_backward(t.map_pre, reshape(dx, 1, dx.size()));
  const DenseMatrix d_dec_h = dec_map_.backward(params_, grad, nn::softplus(t.dec_pre), d_map);
  const DenseMatrix d_dec_in =
      dec_hidden_.backward(params_, grad, t.dec_in, nn::softplus_backward(t.dec_pre, d_dec_h));

  // Reparameterization: z = mu + exp(lv/2) eps.
  DenseMatrix dmu = row(d_mu);
  DenseMatrix dlv = row(d_log_var);
  for (int k = 0; k < latent; ++k) {
    const double dz = d_dec_in(0, k);
    dmu(0, k) += dz;
    dlv(0, k) += dz * t.latent.eps[k] * 0.5 * std::exp(0.5 * t.latent.log_var[k]);
  }

  // Latent head.
  const DenseMatrix h = nn::softplus(t.head_pre);
  DenseMatrix dh = head_mu_.backward(params_, grad, h, dmu);
  dh += head_log_var_.backward(params_, grad, h, dlv);
  const DenseMatrix d_head_in =
      head_hidden_.backward(params_, grad, t.head_in, nn::softplus_backward(t.head_pre, dh));

  // CNN encoder; the input image needs no gradient.
  side = config_.decoder_base_resolution();
  DenseMatrix dc = reshape(d_head_in.rightCols(config_.cnn_feature_size()),
                           config_.cnn_channels.back(), static_cast<Eigen::Index>(side) * side);
  for (int l = static_cast<int>(encoder_.size()) - 1; l >= 0; --l) {
    side *= 2;
    dc = encoder_[l].backward(params_, grad, t.cnn_in[l], side,
                              nn::softplus_backward(t.cnn_pre[l], dc));
  }

  // Graph encoder: g feeds both the head and the decoder; mean pooling spreads it evenly.
  Eigen::RowVectorXd dg = d_head_in.leftCols(hidden).row(0) + d_dec_in.rightCols(hidden).row(0);
  const int n = t.adjacency.rows();
  DenseMatrix dh_node(n, hidden);
  dh_node.rowwise() = dg / n;
  for (int l = config_.gnn_layers - 1; l >= 0; --l) {
    const DenseMatrix d_pre =
        l + 1 < config_.gnn_layers ? nn::tanh_backward(t.gnn_pre[l], dh_node) : dh_node;
    dh_node = gnn_[l].backward(params_, grad, t.adjacency, t.gnn_in[l], t.gnn_cache[l], d_pre);
  }
}

void Gcvae::save(const std::filesystem::path& path) const {
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorCategory::io_error, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    const std::string cfg = config_.to_json();
    const std::uint64_t len = cfg.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(cfg.data(), static_cast<std::streamsize>(len));
    params_.write(out);
    if (!out) fail(ErrorCategory::io_error, "checkpoint write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Gcvae Gcvae::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io_error, "cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    fail(ErrorCategory::io_error, path.string() + " is not a model checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion)
    fail(ErrorCategory::io_error, "unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) fail(ErrorCategory::io_error, "corrupt checkpoint header");
  std::string cfg(len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCategory::io_error, "truncated checkpoint header");
  Gcvae model(ModelConfig::from_json(cfg));
  model.params_.read_into(in);
  if (in.peek() != std::char_traits<char>::eof())
    fail(ErrorCategory::io_error, "trailing bytes in checkpoint " + path.string());
  if (!model.params_.all_finite())
    fail(ErrorCategory::numerical_failure, "checkpoint holds non-finite parameters");
  return model;
}

}  // namespace spaigen
