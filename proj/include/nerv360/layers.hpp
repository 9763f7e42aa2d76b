#pragma once

#include <Eigen/Core>

#include <random>
#include <string>
#include <vector>

#include "nerv360/tensor.hpp"

namespace nerv360 {

// A trainable array and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  RowMatrix<Scalar> value;
  RowMatrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)),
        value(RowMatrix<Scalar>::Zero(rows, cols)),
        grad(RowMatrix<Scalar>::Zero(rows, cols)) {}

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
  void init_uniform(double bound, std::mt19937_64& rng);
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

// k x k convolution (k odd), zero padding k/2, arbitrary stride.
// Weight rows are output channels; columns are (in_channel, ky, kx).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, Index in_channels, Index out_channels, int kernel, int stride);

  void init(std::mt19937_64& rng);
  Shape output_shape(const Shape& in) const;

  Tensor<Scalar> forward(const Tensor<Scalar>& x) const;
  // Accumulates parameter gradients; returns dL/dx unless input_grad is false.
  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out,
                          bool input_grad = true);

  void collect(ParameterList<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1; }
  Index rows_per_chunk(Index out_w) const;

  Index in_ = 0;
  Index out_ = 0;
  int kernel_ = 3;
  int stride_ = 1;
};

// Layer normalization across channels at every pixel, with per-channel affine.
template <typename Scalar>
class ChannelLayerNorm {
 public:
  struct Cache {
    RowMatrix<Scalar> normalized;
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std;
  };

  ChannelLayerNorm() = default;
  ChannelLayerNorm(const std::string& name, Index channels, double eps = 1e-6);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Cache* cache = nullptr) const;
  Tensor<Scalar> backward(const Cache& cache, const Tensor<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out) {
    out.push_back(&gain);
    out.push_back(&shift);
  }

  Parameter<Scalar> gain;
  Parameter<Scalar> shift;

 private:
  double eps_ = 1e-6;
};

// Dense layer on a vector.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out);

  void init(std::mt19937_64& rng);
  Vector<Scalar> forward(const Vector<Scalar>& x) const;
  Vector<Scalar> backward(const Vector<Scalar>& x, const Vector<Scalar>& grad_out);
  void collect(ParameterList<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  Index in_features() const { return weight.value.cols(); }
  Index out_features() const { return weight.value.rows(); }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;
};

// Exact (erf) GELU.
template <typename Scalar>
Scalar gelu(Scalar x);
template <typename Scalar>
Scalar gelu_derivative(Scalar x);

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> gelu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out);

template <typename Scalar>
Tensor<Scalar> sine(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sine_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
// Takes the sigmoid output, not its input.
template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_out);

// (C*s*s, H, W) -> (C, H*s, W*s); channel c*s*s + i*s + j fills offset (i, j).
template <typename Scalar>
Tensor<Scalar> depth_to_space(const Tensor<Scalar>& x, Index factor);
template <typename Scalar>
Tensor<Scalar> space_to_depth(const Tensor<Scalar>& x, Index factor);

template <typename Scalar>
void add_inplace(Tensor<Scalar>& dst, const Tensor<Scalar>& src) {
  require_shape(src, dst.shape(), "add_inplace");
  dst.array() += src.array();
}

// Rounds every value through IEEE half precision (mixed-precision emulation).
template <typename Scalar>
void round_to_half(Tensor<Scalar>& x);

}  // namespace nerv360
