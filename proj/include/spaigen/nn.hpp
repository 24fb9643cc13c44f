#pragma once

#include "spaigen/seeding.hpp"
#include "spaigen/sparse.hpp"

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

// Minimal reverse-mode building blocks. Every layer is stateless apart from the indices of
// its tensors inside a ParameterSet; forward passes take the set by const reference and
// backward passes accumulate into a second set with the same layout.
namespace spaigen::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  std::size_t size() const noexcept { return data.size(); }
};

class ParameterSet {
 public:
  /// Registers a zero-filled tensor and returns its index. Names must be unique.
  int add(const std::string& name, std::vector<int> shape);

  int count() const noexcept { return static_cast<int>(tensors_.size()); }
  std::size_t num_scalars() const noexcept;
  Tensor& operator[](int i) { return tensors_.at(i); }
  const Tensor& operator[](int i) const { return tensors_.at(i); }
  const std::string& name(int i) const { return names_.at(i); }
  /// -1 when absent.
  int index_of(std::string_view name) const noexcept;

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParameterSet& other) const noexcept;
  bool all_finite() const noexcept;

  /// Flat view across tensors in registration order.
  double& flat(std::size_t k);
  double flat(std::size_t k) const;

  void write(std::ostream& out) const;
  /// Reads a set written by write(); layout must match this one exactly.
  void read_into(std::istream& in);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Elementwise activations on dense matrices. Backward variants take the pre-activation.
DenseMatrix softplus(const DenseMatrix& x);
DenseMatrix softplus_backward(const DenseMatrix& x, const DenseMatrix& dy);
DenseMatrix tanh(const DenseMatrix& x);
DenseMatrix tanh_backward(const DenseMatrix& x, const DenseMatrix& dy);

/// Y = X W^T + b, one sample per row of X.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out);

  int in() const noexcept { return in_; }
  int out() const noexcept { return out_; }
  void init(ParameterSet& ps, Rng& rng) const;

  DenseMatrix forward(const ParameterSet& ps, const DenseMatrix& x) const;
  /// Accumulates dW, db into g and returns dX.
  DenseMatrix backward(const ParameterSet& ps, ParameterSet& g, const DenseMatrix& x,
                       const DenseMatrix& dy) const;

 private:
  int w_ = -1, b_ = -1, in_ = 0, out_ = 0;
};

// Images are (channels x height*width) matrices, row-major within a channel.

/// 4x4 kernel, stride 2, padding 1: halves each spatial side (side must be even).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& ps, const std::string& name, int cin, int cout);

  int cin() const noexcept { return cin_; }
  int cout() const noexcept { return cout_; }
  void init(ParameterSet& ps, Rng& rng) const;

  DenseMatrix forward(const ParameterSet& ps, const DenseMatrix& x, int side) const;
  DenseMatrix backward(const ParameterSet& ps, ParameterSet& g, const DenseMatrix& x, int side,
                       const DenseMatrix& dy) const;

 private:
  int w_ = -1, b_ = -1, cin_ = 0, cout_ = 0;
};

/// Adjoint geometry of Conv2d: doubles each spatial side.
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet& ps, const std::string& name, int cin, int cout);

  int cin() const noexcept { return cin_; }
  int cout() const noexcept { return cout_; }
  void init(ParameterSet& ps, Rng& rng) const;

  /// x is cin x side^2; output is cout x (2 side)^2.
  DenseMatrix forward(const ParameterSet& ps, const DenseMatrix& x, int side) const;
  DenseMatrix backward(const ParameterSet& ps, ParameterSet& g, const DenseMatrix& x, int side,
                       const DenseMatrix& dy) const;

 private:
  int w_ = -1, b_ = -1, cin_ = 0, cout_ = 0;
};

struct GatCache {
  DenseMatrix source;  // H W^T
  DenseMatrix score;   // per stored edge: tanh(source_j + source_i + w_e a_ij)
  Vector alpha;        // attention weights, aligned with adjacency values
};

/// GATv2-style attention (shared source/target transform) with scalar edge weights entering
/// the logits:
///   e_ij = a . tanh(W h_j + W h_i + w_e a_ij),  alpha_i. = softmax over row i,
///   out_i = sum_j alpha_ij W h_j + bias.
/// Messages flow along the stored entries of each adjacency row.
class GatLayer {
 public:
  GatLayer() = default;
  GatLayer(ParameterSet& ps, const std::string& name, int in, int out);

  int in() const noexcept { return in_; }
  int out() const noexcept { return out_; }
  void init(ParameterSet& ps, Rng& rng) const;

  DenseMatrix forward(const ParameterSet& ps, const CsrMatrix& adjacency, const DenseMatrix& h,
                      GatCache* cache = nullptr) const;
  DenseMatrix backward(const ParameterSet& ps, ParameterSet& g, const CsrMatrix& adjacency,
                       const DenseMatrix& h, const GatCache& cache, const DenseMatrix& dy) const;

 private:
  int ws_ = -1, we_ = -1, att_ = -1, bias_ = -1, in_ = 0, out_ = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& layout, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void step(ParameterSet& params, const ParameterSet& grad);
  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  long steps() const noexcept { return t_; }

 private:
  ParameterSet m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

}  // namespace spaigen::nn
