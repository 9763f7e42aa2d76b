#include "nerv360/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nerv360 {
namespace {

// Upper bound on im2col workspace columns per GEMM call.
constexpr Index kChunkPixels = 16384;

template <typename Scalar>
using Workspace = std::vector<Scalar, memory::TrackingAllocator<Scalar>>;

template <typename Scalar>
void im2col(const Tensor<Scalar>& x, int kernel, int stride, Index out_w, Index oy0, Index oy1,
            Scalar* cols) {
  const Index h = x.height(), w = x.width();
  const Index n = (oy1 - oy0) * out_w;
  const int pad = kernel / 2;
  Index row = 0;
  for (Index ci = 0; ci < x.channels(); ++ci) {
    const Scalar* plane = x.data() + ci * x.pixels();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx, ++row) {
        Scalar* dst = cols + row * n;
        for (Index oy = oy0; oy < oy1; ++oy) {
          Scalar* drow = dst + (oy - oy0) * out_w;
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + out_w, Scalar(0));
            continue;
          }
          const Scalar* srow = plane + iy * w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + kx - pad;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, int kernel, int stride, Index out_w, Index oy0, Index oy1,
                Tensor<Scalar>& dx) {
  const Index h = dx.height(), w = dx.width();
  const Index n = (oy1 - oy0) * out_w;
  const int pad = kernel / 2;
  Index row = 0;
  for (Index ci = 0; ci < dx.channels(); ++ci) {
    Scalar* plane = dx.data() + ci * dx.pixels();
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx, ++row) {
        const Scalar* src = cols + row * n;
        for (Index oy = oy0; oy < oy1; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const Scalar* srow = src + (oy - oy0) * out_w;
          Scalar* drow = plane + iy * w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
void Parameter<Scalar>::init_uniform(double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < value.size(); ++i) value.data()[i] = static_cast<Scalar>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const std::string& name, Index in_channels, Index out_channels, int kernel,
                       int stride)
    : weight(name + ".weight", out_channels, in_channels * kernel * kernel),
      bias(name + ".bias", out_channels, 1),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("conv kernel must be odd");
  if (stride < 1) throw std::invalid_argument("conv stride must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("conv channels must be >= 1");
}

template <typename Scalar>
void Conv2d<Scalar>::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.cols()));
  weight.init_uniform(bound, rng);
  bias.init_uniform(bound, rng);
}

template <typename Scalar>
Shape Conv2d<Scalar>::output_shape(const Shape& in) const {
  if (in.channels != in_) {
    throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     to_string(in));
  }
  const int pad = kernel_ / 2;
  const Index oh = (in.height + 2 * pad - kernel_) / stride_ + 1;
  const Index ow = (in.width + 2 * pad - kernel_) / stride_ + 1;
  return {out_, oh, ow};
}

template <typename Scalar>
Index Conv2d<Scalar>::rows_per_chunk(Index out_w) const {
  return std::max<Index>(1, kChunkPixels / std::max<Index>(out_w, 1));
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::forward(const Tensor<Scalar>& x) const {
  const Shape os = output_shape(x.shape());
  Tensor<Scalar> out(os);
  if (pointwise()) {
    out.mat().noalias() = weight.value * x.mat();
  } else {
    const Index k = weight.value.cols();
    const Index step = rows_per_chunk(os.width);
    Workspace<Scalar> cols(static_cast<std::size_t>(k * std::min(step, os.height) * os.width));
    for (Index oy0 = 0; oy0 < os.height; oy0 += step) {
      const Index oy1 = std::min(os.height, oy0 + step);
      const Index n = (oy1 - oy0) * os.width;
      im2col(x, kernel_, stride_, os.width, oy0, oy1, cols.data());
      Eigen::Map<const RowMatrix<Scalar>> colmat(cols.data(), k, n);
      out.mat().middleCols(oy0 * os.width, n).noalias() = weight.value * colmat;
    }
  }
  out.mat().colwise() += bias.value.col(0);
  return out;
}

template <typename Scalar>
Tensor<Scalar> Conv2d<Scalar>::backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out,
                                        bool input_grad) {
  const Shape os = output_shape(x.shape());
  require_shape(grad_out, os, "conv backward");
  bias.grad.col(0) += grad_out.mat().rowwise().sum();
  Tensor<Scalar> dx;
  if (input_grad) dx = Tensor<Scalar>(x.shape());
  if (pointwise()) {
    weight.grad.noalias() += grad_out.mat() * x.mat().transpose();
    if (input_grad) dx.mat().noalias() = weight.value.transpose() * grad_out.mat();
    return dx;
  }
  const Index k = weight.value.cols();
  const Index step = rows_per_chunk(os.width);
  const std::size_t chunk = static_cast<std::size_t>(k * std::min(step, os.height) * os.width);
  Workspace<Scalar> cols(chunk);
  Workspace<Scalar> dcols(input_grad ? chunk : 0);
  for (Index oy0 = 0; oy0 < os.height; oy0 += step) {
    const Index oy1 = std::min(os.height, oy0 + step);
    const Index n = (oy1 - oy0) * os.width;
    im2col(x, kernel_, stride_, os.width, oy0, oy1, cols.data());
    Eigen::Map<const RowMatrix<Scalar>> colmat(cols.data(), k, n);
    const auto g = grad_out.mat().middleCols(oy0 * os.width, n);
    weight.grad.noalias() += g * colmat.transpose();
    if (input_grad) {
      Eigen::Map<RowMatrix<Scalar>> dcolmat(dcols.data(), k, n);
      dcolmat.noalias() = weight.value.transpose() * g;
      col2im_add(dcols.data(), kernel_, stride_, os.width, oy0, oy1, dx);
    }
  }
  return dx;
}

// ------------------------------------------------------ ChannelLayerNorm

template <typename Scalar>
ChannelLayerNorm<Scalar>::ChannelLayerNorm(const std::string& name, Index channels, double eps)
    : gain(name + ".gain", channels, 1), shift(name + ".shift", channels, 1), eps_(eps) {
  gain.value.setOnes();
}

template <typename Scalar>
Tensor<Scalar> ChannelLayerNorm<Scalar>::forward(const Tensor<Scalar>& x, Cache* cache) const {
  if (x.channels() != gain.value.rows()) throw ShapeError(gain.name + ": channel mismatch");
  const auto in = x.mat();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = in.colwise().mean();
  RowMatrix<Scalar> normalized = in.rowwise() - mean;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std =
      (normalized.array().square().colwise().mean() + static_cast<Scalar>(eps_)).rsqrt().matrix();
  normalized.array().rowwise() *= inv_std.array();

  Tensor<Scalar> out(x.shape());
  out.mat() = (normalized.array().colwise() * gain.value.col(0).array()).colwise() +
              shift.value.col(0).array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ChannelLayerNorm<Scalar>::backward(const Cache& cache,
                                                  const Tensor<Scalar>& grad_out) {
  const auto dy = grad_out.mat();
  const auto& xhat = cache.normalized;
  gain.grad.col(0) += (dy.array() * xhat.array()).rowwise().sum().matrix();
  shift.grad.col(0) += dy.rowwise().sum();

  const RowArray<Scalar> dxhat = dy.array().colwise() * gain.value.col(0).array();
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_d = dxhat.colwise().mean();
  const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_dx = (dxhat * xhat.array()).colwise().mean();
  Tensor<Scalar> dx(grad_out.shape());
  dx.mat() = (((dxhat.rowwise() - mean_d) - xhat.array().rowwise() * mean_dx).rowwise() *
              cache.inv_std.array())
                 .matrix();
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(const std::string& name, Index in, Index out)
    : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {}

template <typename Scalar>
void Linear<Scalar>::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.cols()));
  weight.init_uniform(bound, rng);
  bias.init_uniform(bound, rng);
}

template <typename Scalar>
Vector<Scalar> Linear<Scalar>::forward(const Vector<Scalar>& x) const {
  if (x.size() != weight.value.cols()) throw ShapeError(weight.name + ": input size mismatch");
  return weight.value * x + bias.value.col(0);
}

template <typename Scalar>
Vector<Scalar> Linear<Scalar>::backward(const Vector<Scalar>& x, const Vector<Scalar>& grad_out) {
  weight.grad.noalias() += grad_out * x.transpose();
  bias.grad.col(0) += grad_out;
  return weight.value.transpose() * grad_out;
}

// ----------------------------------------------------------- activations

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * static_cast<Scalar>(std::numbers::sqrt2 / 2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) *
                     static_cast<Scalar>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = x.array().unaryExpr([](Scalar v) { return gelu(v); });
  return y;
}

template <typename Scalar>
Tensor<Scalar> gelu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx(x.shape());
  dx.array() = x.array().unaryExpr([](Scalar v) { return gelu_derivative(v); }) * grad_out.array();
  return dx;
}

template <typename Scalar>
Tensor<Scalar> sine(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = x.array().sin();
  return y;
}

template <typename Scalar>
Tensor<Scalar> sine_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx(x.shape());
  dx.array() = x.array().cos() * grad_out.array();
  return dx;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape());
  y.array() = (Scalar(1) + (-x.array()).exp()).inverse();
  return y;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> dx(y.shape());
  dx.array() = y.array() * (Scalar(1) - y.array()) * grad_out.array();
  return dx;
}

template <typename Scalar>
Tensor<Scalar> depth_to_space(const Tensor<Scalar>& x, Index factor) {
  if (factor == 1) return x;
  const Index s2 = factor * factor;
  if (x.channels() % s2 != 0) throw ShapeError("depth_to_space: channels not divisible");
  const Index c_out = x.channels() / s2, h = x.height(), w = x.width();
  Tensor<Scalar> out(c_out, h * factor, w * factor);
  for (Index c = 0; c < c_out; ++c) {
    for (Index i = 0; i < factor; ++i) {
      for (Index j = 0; j < factor; ++j) {
        const Scalar* src = x.data() + (c * s2 + i * factor + j) * x.pixels();
        for (Index y = 0; y < h; ++y) {
          Scalar* drow = out.data() + (c * h * factor + y * factor + i) * w * factor + j;
          for (Index xx = 0; xx < w; ++xx) drow[xx * factor] = src[y * w + xx];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> space_to_depth(const Tensor<Scalar>& x, Index factor) {
  if (factor == 1) return x;
  if (x.height() % factor != 0 || x.width() % factor != 0) {
    throw ShapeError("space_to_depth: spatial dims not divisible");
  }
  const Index s2 = factor * factor;
  const Index h = x.height() / factor, w = x.width() / factor;
  Tensor<Scalar> out(x.channels() * s2, h, w);
  for (Index c = 0; c < x.channels(); ++c) {
    for (Index i = 0; i < factor; ++i) {
      for (Index j = 0; j < factor; ++j) {
        Scalar* dst = out.data() + (c * s2 + i * factor + j) * out.pixels();
        for (Index y = 0; y < h; ++y) {
          const Scalar* srow = x.data() + (c * h * factor + y * factor + i) * w * factor + j;
          for (Index xx = 0; xx < w; ++xx) dst[y * w + xx] = srow[xx * factor];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
void round_to_half(Tensor<Scalar>& x) {
  x.array() = x.array().unaryExpr(
      [](Scalar v) { return static_cast<Scalar>(static_cast<float>(Eigen::half(static_cast<float>(v)))); });
}

#define NERV360_INSTANTIATE_LAYERS(S)                                              \
  template struct Parameter<S>;                                                    \
  template class Conv2d<S>;                                                        \
  template class ChannelLayerNorm<S>;                                              \
  template class Linear<S>;                                                        \
  template S gelu<S>(S);                                                           \
  template S gelu_derivative<S>(S);                                                \
  template Tensor<S> gelu(const Tensor<S>&);                                       \
  template Tensor<S> gelu_backward(const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> sine(const Tensor<S>&);                                       \
  template Tensor<S> sine_backward(const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> sigmoid(const Tensor<S>&);                                    \
  template Tensor<S> sigmoid_backward(const Tensor<S>&, const Tensor<S>&);         \
  template Tensor<S> depth_to_space(const Tensor<S>&, Index);                      \
  template Tensor<S> space_to_depth(const Tensor<S>&, Index);                      \
  template void round_to_half(Tensor<S>&);

NERV360_INSTANTIATE_LAYERS(float)
NERV360_INSTANTIATE_LAYERS(double)

}  // namespace nerv360
