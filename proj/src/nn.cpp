#include "spaigen/nn.hpp"

#include "spaigen/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace spaigen::nn {

namespace {

using ConstMap = Eigen::Map<const DenseMatrix>;
using Map = Eigen::Map<DenseMatrix>;

constexpr int kKernel = 4;
constexpr int kTaps = kKernel * kKernel;

ConstMap view(const Tensor& t, int rows, int cols) { return ConstMap(t.data.data(), rows, cols); }
Map view(Tensor& t, int rows, int cols) { return Map(t.data.data(), rows, cols); }

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& x : t.data) x = u(rng);
}

// Columns of the stride-2, padding-1 4x4 convolution over an image of the given side.
DenseMatrix im2col(const DenseMatrix& x, int side) {
  const int channels = static_cast<int>(x.rows());
  const int out_side = side / 2;
  DenseMatrix cols = DenseMatrix::Zero(channels * kTaps, out_side * out_side);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kKernel; ++ki) {
      for (int kj = 0; kj < kKernel; ++kj) {
        const int row = c * kTaps + ki * kKernel + kj;
        for (int oy = 0; oy < out_side; ++oy) {
          const int iy = 2 * oy - 1 + ki;
          if (iy < 0 || iy >= side) continue;
          for (int ox = 0; ox < out_side; ++ox) {
            const int ix = 2 * ox - 1 + kj;
            if (ix < 0 || ix >= side) continue;
            cols(row, oy * out_side + ox) = x(c, iy * side + ix);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatters columns back onto a channels x side^2 image.
DenseMatrix col2im(const DenseMatrix& cols, int channels, int side) {
  const int out_side = side / 2;
  DenseMatrix x = DenseMatrix::Zero(channels, side * side);
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kKernel; ++ki) {
      for (int kj = 0; kj < kKernel; ++kj) {
        const int row = c * kTaps + ki * kKernel + kj;
        for (int oy = 0; oy < out_side; ++oy) {
          const int iy = 2 * oy - 1 + ki;
          if (iy < 0 || iy >= side) continue;
          for (int ox = 0; ox < out_side; ++ox) {
            const int ix = 2 * ox - 1 + kj;
            if (ix < 0 || ix >= side) continue;
            x(c, iy * side + ix) += cols(row, oy * out_side + ox);
          }
        }
      }
    }
  }
  return x;
}

void check_side(int side, const char* who) {
  if (side <= 0 || side % 2 != 0)
    fail(ErrorCategory::dimension_mismatch, std::string(who) + ": spatial side must be even");
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) fail(ErrorCategory::io_error, "truncated parameter stream");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------------------
// ParameterSet

int ParameterSet::add(const std::string& name, std::vector<int> shape) {
  if (index_of(name) >= 0) fail(ErrorCategory::invalid_input, "duplicate parameter " + name);
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail(ErrorCategory::invalid_input, "parameter " + name + " has empty dimension");
    n *= static_cast<std::size_t>(d);
  }
  names_.push_back(name);
  tensors_.push_back({std::move(shape), std::vector<double>(n, 0.0)});
  return count() - 1;
}

std::size_t ParameterSet::num_scalars() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

int ParameterSet::index_of(std::string_view name) const noexcept {
  for (int i = 0; i < count(); ++i)
    if (names_[i] == name) return i;
  return -1;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  out.set_zero();
  return out;
}

void ParameterSet::set_zero() {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), 0.0);
}

bool ParameterSet::same_layout(const ParameterSet& other) const noexcept {
  if (count() != other.count()) return false;
  for (int i = 0; i < count(); ++i)
    if (names_[i] != other.names_[i] || tensors_[i].shape != other.tensors_[i].shape) return false;
  return true;
}

bool ParameterSet::all_finite() const noexcept {
  for (const auto& t : tensors_)
    for (double x : t.data)
      if (!std::isfinite(x)) return false;
  return true;
}

double& ParameterSet::flat(std::size_t k) {
  for (auto& t : tensors_) {
    if (k < t.size()) return t.data[k];
    k -= t.size();
  }
  fail(ErrorCategory::invalid_input, "flat parameter index out of range");
}

double ParameterSet::flat(std::size_t k) const {
  return const_cast<ParameterSet*>(this)->flat(k);
}

void ParameterSet::write(std::ostream& out) const {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(count()));
  for (int i = 0; i < count(); ++i) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(names_[i].size()));
    out.write(names_[i].data(), static_cast<std::streamsize>(names_[i].size()));
    const auto& t = tensors_[i];
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCategory::io_error, "failed writing parameters");
}

void ParameterSet::read_into(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (static_cast<int>(n) != count())
    fail(ErrorCategory::dimension_mismatch,
         "checkpoint holds " + std::to_string(n) + " tensors, model expects " +
             std::to_string(count()));
  for (int i = 0; i < count(); ++i) {
    const auto len = read_pod<std::uint32_t>(in);
    if (len > 4096) fail(ErrorCategory::io_error, "corrupt parameter name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto ndim = read_pod<std::uint32_t>(in);
    if (ndim > 8) fail(ErrorCategory::io_error, "corrupt parameter rank");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = read_pod<std::int32_t>(in);
    if (name != names_[i] || shape != tensors_[i].shape)
      fail(ErrorCategory::dimension_mismatch,
           "checkpoint tensor '" + name + "' does not match model tensor '" + names_[i] + "'");
    auto& t = tensors_[i];
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) fail(ErrorCategory::io_error, "truncated tensor " + name);
  }
}

// ---------------------------------------------------------------------------------------
// Activations

DenseMatrix softplus(const DenseMatrix& x) {
  return x.unaryExpr([](double v) { return v > 30 ? v : std::log1p(std::exp(v)); });
}

DenseMatrix softplus_backward(const DenseMatrix& x, const DenseMatrix& dy) {
  return x.binaryExpr(dy, [](double v, double d) {
    return d / (1.0 + std::exp(-v));
  });
}

DenseMatrix tanh(const DenseMatrix& x) {
  return x.unaryExpr([](double v) { return std::tanh(v); });
}

DenseMatrix tanh_backward(const DenseMatrix& x, const DenseMatrix& dy) {
  return x.binaryExpr(dy, [](double v, double d) {
    const double t = std::tanh(v);
    return d * (1.0 - t * t);
  });
}

// ---------------------------------------------------------------------------------------
// Linear

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out)
    : w_(ps.add(name + ".weight", {out, in})),
      b_(ps.add(name + ".bias", {out})),
      in_(in),
      out_(out) {}

void Linear::init(ParameterSet& ps, Rng& rng) const {
  fill_uniform(ps[w_], std::sqrt(3.0 / in_), rng);
  std::fill(ps[b_].data.begin(), ps[b_].data.end(), 0.0);
}

DenseMatrix Linear::forward(const ParameterSet& ps, const DenseMatrix& x) const {
  if (x.cols() != in_) fail(ErrorCategory::dimension_mismatch, "Linear: input width mismatch");
  DenseMatrix y = x * view(ps[w_], out_, in_).transpose();
  y.rowwise() += view(ps[b_], 1, out_).row(0);
  return y;
}

DenseMatrix Linear::backward(const ParameterSet& ps, ParameterSet& g, const DenseMatrix& x,
                             const DenseMatrix& dy) const {
  view(g[w_], out_, in_).noalias() += dy.transpose() * x;
  view(g[b_], 1, out_).noalias() += dy.colwise().sum();
  return dy * view(ps[w_], out_, in_);
}

// ---------------------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(ParameterSet& ps, const std::string& name, int cin, int cout)
    : w_(ps.add(name + ".weight", {cout, cin, kKernel, kKernel})),
      b_(ps.add(name + ".bias", {cout})),
      cin_(cin),
      cout_(cout) {}

void Conv2d::init(ParameterSet& ps, Rng& rng) const {
  fill_uniform(ps[w_], std::sqrt(3.0 / (cin_ * kTaps)), rng);
  std::fill(ps[b_].data.begin(), ps[b_].data.end(), 0.0);
}

DenseMatrix Conv2d::forward(const ParameterSet& ps, const DenseMatrix& x, int side) const {
  check_side(side, "Conv2d");
  if (x.rows() != cin_ || x.cols() != static_cast<Eigen::Index>(side) * side)
    fail(ErrorCategory::dimension_mismatch, "Conv2d: input shape mismatch");
  DenseMatrix y = view(ps[w_], cout_, cin_ * kTaps) * im2col(x, side);
  y.colwise() += view(ps[b_], cout_, 1).col(0);
  return y;
}

DenseMatrix Conv2d::backward(const ParameterSet& ps, ParameterSet& g, const DenseMatrix& x,
                             int side, const DenseMatrix& dy) const {
  const DenseMatrix cols = im2col(x, side);
  view(g[w_], cout_, cin_ * kTaps).noalias() += dy * cols.transpose();
  view(g[b_], cout_, 1).noalias() += dy.rowwise().sum();
  const DenseMatrix dcols = view(ps[w_], cout_, cin_ * kTaps).transpose() * dy;
  return col2im(dcols, cin_, side);
}

// ---------------------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(ParameterSet& ps, const std::string& name, int cin, int cout)
    : w_(ps.add(name + ".weight", {cin, cout, kKernel, kKernel})),
      b_(ps.add(name + ".bias", {cout})),
      cin_(cin),
      cout_(cout) {}

void ConvTranspose2d::init(ParameterSet& ps, Rng& rng) const {
  // Each output pixel receives 2x2 taps per input channel.
  fill_uniform(ps[w_], std::sqrt(3.0 / (cin_ * 4)), rng);
  std::fill(ps[b_].data.begin(), ps[b_].data.end(), 0.0);
}

DenseMatrix ConvTranspose2d::forward(const ParameterSet& ps, const DenseMatrix& x,
                                     int side) const {
  if (side <= 0 || x.rows() != cin_ || x.cols() != static_cast<Eigen::Index>(side) * side)
    fail(ErrorCategory::dimension_mismatch, "ConvTranspose2d: input shape mismatch");
  const DenseMatrix cols = view(ps[w_], cin_, cout_ * kTaps).transpose() * x;
  DenseMatrix y = col2im(cols, cout_, 2 * side);
  y.colwise() += view(ps[b_], cout_, 1).col(0);
  return y;
}

DenseMatrix ConvTranspose2d::backward(const ParameterSet& ps, ParameterSet& g,
                                      const DenseMatrix& x, int side,
                                      const DenseMatrix& dy) const {
  const DenseMatrix dcols = im2col(dy, 2 * side);
  view(g[w_], cin_, cout_ * kTaps).noalias() += x * dcols.transpose();
  view(g[b_], cout_, 1).noalias() += dy.rowwise().sum();
  return view(ps[w_], cin_, cout_ * kTaps) * dcols;
}

// ---------------------------------------------------------------------------------------
// GatLayer

GatLayer::GatLayer(ParameterSet& ps, const std::string& name, int in, int out)
    : ws_(ps.add(name + ".weight", {out, in})),
      we_(ps.add(name + ".w_edge", {out})),
      att_(ps.add(name + ".attention", {out})),
      bias_(ps.add(name + ".bias", {out})),
      in_(in),
      out_(out) {}

void GatLayer::init(ParameterSet& ps, Rng& rng) const {
  fill_uniform(ps[ws_], std::sqrt(3.0 / in_), rng);
  fill_uniform(ps[we_], 1.0, rng);
  fill_uniform(ps[att_], std::sqrt(3.0 / out_), rng);
  std::fill(ps[bias_].data.begin(), ps[bias_].data.end(), 0.0);
}

DenseMatrix GatLayer::forward(const ParameterSet& ps, const CsrMatrix& adjacency,
                              const DenseMatrix& h, GatCache* cache) const {
  const int n = adjacency.rows();
  if (h.rows() != n || h.cols() != in_)
    fail(ErrorCategory::dimension_mismatch, "GatLayer: feature matrix shape mismatch");
  const auto rp = adjacency.row_ptr();
  const auto ci = adjacency.col_idx();
  const auto wv = adjacency.values();
  const auto we = view(ps[we_], 1, out_).row(0);
  const auto att = view(ps[att_], 1, out_).row(0);

  GatCache local;
  GatCache& c = cache ? *cache : local;
  c.source = h * view(ps[ws_], out_, in_).transpose();
  c.score.resize(adjacency.nnz(), out_);
  c.alpha.assign(adjacency.nnz(), 0.0);

  DenseMatrix y(n, out_);
  y.rowwise() = view(ps[bias_], 1, out_).row(0);
  for (int i = 0; i < n; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (int k = rp[i]; k < rp[i + 1]; ++k) {
      c.score.row(k) = (c.source.row(ci[k]) + c.source.row(i) + wv[k] * we).array().tanh();
      c.alpha[k] = c.score.row(k).dot(att);
      top = std::max(top, c.alpha[k]);
    }
    double total = 0.0;
    for (int k = rp[i]; k < rp[i + 1]; ++k) {
      c.alpha[k] = std::exp(c.alpha[k] - top);
      total += c.alpha[k];
    }
    for (int k = rp[i]; k < rp[i + 1]; ++k) {
      c.alpha[k] /= total;
      y.row(i) += c.alpha[k] * c.source.row(ci[k]);
    }
  }
  return y;
}

DenseMatrix GatLayer::backward(const ParameterSet& ps, ParameterSet& g,
                               const CsrMatrix& adjacency, const DenseMatrix& h,
                               const GatCache& c, const DenseMatrix& dy) const {
  const int n = adjacency.rows();
  const auto rp = adjacency.row_ptr();
  const auto ci = adjacency.col_idx();
  const auto wv = adjacency.values();
  const auto att = view(ps[att_], 1, out_).row(0);

  DenseMatrix d_source = DenseMatrix::Zero(n, out_);
  Eigen::RowVectorXd d_att = Eigen::RowVectorXd::Zero(out_);
  Eigen::RowVectorXd d_we = Eigen::RowVectorXd::Zero(out_);
  std::vector<double> d_alpha;

  for (int i = 0; i < n; ++i) {
    const int begin = rp[i], end = rp[i + 1];
    d_alpha.assign(end - begin, 0.0);
    double weighted = 0.0;
    for (int k = begin; k < end; ++k) {
      d_alpha[k - begin] = dy.row(i).dot(c.source.row(ci[k]));
      weighted += c.alpha[k] * d_alpha[k - begin];
      d_source.row(ci[k]) += c.alpha[k] * dy.row(i);
    }
    for (int k = begin; k < end; ++k) {
      const double d_logit = c.alpha[k] * (d_alpha[k - begin] - weighted);
      d_att += d_logit * c.score.row(k);
      const Eigen::RowVectorXd d_pre =
          (d_logit * att.array() * (1.0 - c.score.row(k).array().square())).matrix();
      d_source.row(ci[k]) += d_pre;
      d_source.row(i) += d_pre;
      d_we += wv[k] * d_pre;
    }
  }

  view(g[bias_], 1, out_).noalias() += dy.colwise().sum();
  view(g[att_], 1, out_).noalias() += d_att;
  view(g[we_], 1, out_).noalias() += d_we;
  view(g[ws_], out_, in_).noalias() += d_source.transpose() * h;
  return d_source * view(ps[ws_], out_, in_);
}

// ---------------------------------------------------------------------------------------
// Adam

Adam::Adam(const ParameterSet& layout, double learning_rate, double beta1, double beta2,
           double epsilon)
    : m_(layout.zeros_like()),
      v_(layout.zeros_like()),
      lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon) {}

void Adam::step(ParameterSet& params, const ParameterSet& grad) {
  if (!params.same_layout(m_) || !grad.same_layout(m_))
    fail(ErrorCategory::dimension_mismatch, "Adam: parameter layout changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < params.count(); ++i) {
    auto& p = params[i].data;
    const auto& gr = grad[i].data;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gr[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gr[k] * gr[k];
      p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

}  // namespace spaigen::nn
