#include "nerv360/objective.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace nerv360 {
namespace {

double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

using Plane = RowArray<double>;
using ComplexPlane = Eigen::Array<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void require_same(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename Scalar>
Plane plane(const Tensor<Scalar>& t, Index c) {
  return t.channel(c).template cast<double>().array();
}

// In-place 2D DFT; the inverse is unnormalized.
void dft2(ComplexPlane& m, bool inverse) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<std::complex<double>> in, out;
  for (Index r = 0; r < m.rows(); ++r) {
    in.assign(m.row(r).data(), m.row(r).data() + m.cols());
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = out[c];
  }
  in.resize(m.rows());
  for (Index c = 0; c < m.cols(); ++c) {
    for (Index r = 0; r < m.rows(); ++r) in[r] = m(r, c);
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    for (Index r = 0; r < m.rows(); ++r) m(r, c) = out[r];
  }
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" Gaussian filtering and its adjoint.
Plane filter_valid(const Plane& in) {
  static const auto g = gaussian_window();
  const Index h = in.rows() - kSsimWindow + 1, w = in.cols() - kSsimWindow + 1;
  Plane horiz = Plane::Zero(in.rows(), w);
  for (int k = 0; k < kSsimWindow; ++k) horiz += g[k] * in.middleCols(k, w);
  Plane out = Plane::Zero(h, w);
  for (int k = 0; k < kSsimWindow; ++k) out += g[k] * horiz.middleRows(k, h);
  return out;
}

Plane filter_valid_adjoint(const Plane& grad, Index in_h, Index in_w) {
  static const auto g = gaussian_window();
  const Index h = grad.rows(), w = grad.cols();
  Plane horiz = Plane::Zero(in_h, w);
  for (int k = 0; k < kSsimWindow; ++k) horiz.middleRows(k, h) += g[k] * grad;
  Plane out = Plane::Zero(in_h, in_w);
  for (int k = 0; k < kSsimWindow; ++k) out.middleCols(k, w) += g[k] * horiz;
  return out;
}

Plane downsample(const Plane& in) {
  const Index h = in.rows() / 2, w = in.cols() / 2;
  Plane out(h, w);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      out(i, j) = 0.25 * (in(2 * i, 2 * j) + in(2 * i + 1, 2 * j) + in(2 * i, 2 * j + 1) +
                          in(2 * i + 1, 2 * j + 1));
    }
  }
  return out;
}

void downsample_adjoint_add(const Plane& grad, Plane& dst) {
  for (Index i = 0; i < grad.rows(); ++i) {
    for (Index j = 0; j < grad.cols(); ++j) {
      const double v = 0.25 * grad(i, j);
      dst(2 * i, 2 * j) += v;
      dst(2 * i + 1, 2 * j) += v;
      dst(2 * i, 2 * j + 1) += v;
      dst(2 * i + 1, 2 * j + 1) += v;
    }
  }
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct SsimMoments {
  Plane mu_x, mu_y, b1, b2, luminance, contrast;
};

SsimMoments moments(const Plane& x, const Plane& y) {
  SsimMoments m;
  m.mu_x = filter_valid(x);
  m.mu_y = filter_valid(y);
  const Plane sxx = filter_valid(x.square()) - m.mu_x.square();
  const Plane syy = filter_valid(y.square()) - m.mu_y.square();
  const Plane sxy = filter_valid(x * y) - m.mu_x * m.mu_y;
  m.b1 = m.mu_x.square() + m.mu_y.square() + kC1;
  m.b2 = sxx + syy + kC2;
  m.luminance = (2.0 * m.mu_x * m.mu_y + kC1) / m.b1;
  m.contrast = (2.0 * sxy + kC2) / m.b2;
  return m;
}

// d/dy of (g_cs * mean(cs) + g_ssim * mean(l * cs)).
Plane moments_backward(const Plane& x, const Plane& y, double g_cs, double g_ssim) {
  const SsimMoments m = moments(x, y);
  const double n = static_cast<double>(m.mu_x.size());
  const Plane d_cs = (g_cs + g_ssim * m.luminance) / n;
  const Plane d_l = (g_ssim / n) * m.contrast;
  const Plane d_mu = d_cs * (2.0 * m.mu_y * m.contrast - 2.0 * m.mu_x) / m.b2 +
                     d_l * (2.0 * m.mu_x - 2.0 * m.mu_y * m.luminance) / m.b1;
  const Plane d_syy = -d_cs * m.contrast / m.b2;
  const Plane d_sxy = 2.0 * d_cs / m.b2;
  const Index h = x.rows(), w = x.cols();
  return filter_valid_adjoint(d_mu, h, w) + 2.0 * y * filter_valid_adjoint(d_syy, h, w) +
         x * filter_valid_adjoint(d_sxy, h, w);
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
}

int ms_ssim_scales(Index height, Index width) {
  const Index side = std::min(height, width);
  if (side < kSsimWindow) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than the 11x11 SSIM window");
  }
  int scales = 1;
  while (scales < 5 && side >= kSsimWindow * (Index{1} << scales)) ++scales;
  return scales;
}

template <typename Scalar>
double psnr(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat) {
  require_same(x, x_hat, "psnr");
  const double mse = (x.array().template cast<double>() - x_hat.array().template cast<double>())
                         .square()
                         .mean();
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

template <typename Scalar>
double l1_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat, Tensor<Scalar>* grad) {
  require_same(x, x_hat, "l1_loss");
  const auto diff = x_hat.array().template cast<double>() - x.array().template cast<double>();
  const double n = static_cast<double>(x.size());
  if (grad) {
    *grad = Tensor<Scalar>(x.shape());
    grad->array() = (diff.sign() / n).template cast<Scalar>();
  }
  return diff.abs().sum() / n;
}

template <typename Scalar>
double frequency_l1(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat, FrequencyMode mode,
                    Tensor<Scalar>* grad) {
  require_same(x, x_hat, "frequency_l1");
  const double n = static_cast<double>(x.size());
  if (grad) *grad = Tensor<Scalar>(x.shape());
  double total = 0.0;
  for (Index c = 0; c < x.channels(); ++c) {
    ComplexPlane spec = (plane(x_hat, c) - plane(x, c)).template cast<std::complex<double>>();
    dft2(spec, false);
    ComplexPlane sub_grad(spec.rows(), spec.cols());
    for (Index i = 0; i < spec.size(); ++i) {
      const std::complex<double> f = spec.data()[i];
      if (mode == FrequencyMode::complex_parts) {
        total += std::abs(f.real()) + std::abs(f.imag());
        sub_grad.data()[i] = {sign(f.real()), sign(f.imag())};
      } else {
        const double mag = std::abs(f);
        total += mag;
        sub_grad.data()[i] = mag > 0.0 ? f / mag : std::complex<double>{};
      }
    }
    if (grad) {
      dft2(sub_grad, true);
      grad->channel(c) = (sub_grad.real() / n).template cast<Scalar>().matrix();
    }
  }
  return total / n;
}

template <typename Scalar>
double ms_ssim(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat, Tensor<Scalar>* grad) {
  require_same(x, x_hat, "ms_ssim");
  const int scales = ms_ssim_scales(x.height(), x.width());
  std::array<double, 5> w{};
  double wsum = 0.0;
  for (int j = 0; j < scales; ++j) wsum += kMsSsimWeights[j];
  for (int j = 0; j < scales; ++j) w[j] = kMsSsimWeights[j] / wsum;

  const double channels = static_cast<double>(x.channels());
  if (grad) *grad = Tensor<Scalar>(x.shape());
  double result = 0.0;
  for (Index c = 0; c < x.channels(); ++c) {
    std::vector<Plane> px{plane(x, c)}, py{plane(x_hat, c)};
    for (int j = 1; j < scales; ++j) {
      px.push_back(downsample(px.back()));
      py.push_back(downsample(py.back()));
    }
    // Per-scale factor: contrast-structure mean, full SSIM at the coarsest scale.
    std::array<double, 5> v{};
    for (int j = 0; j < scales; ++j) {
      const SsimMoments m = moments(px[j], py[j]);
      v[j] = std::max(j + 1 < scales ? m.contrast.mean() : (m.luminance * m.contrast).mean(), 0.0);
    }
    double prod = 1.0;
    for (int j = 0; j < scales; ++j) prod *= std::pow(v[j], w[j]);
    result += prod / channels;

    if (grad && prod > 0.0) {
      Plane carry;
      for (int j = scales - 1; j >= 0; --j) {
        const double g = w[j] * prod / v[j] / channels;
        const bool last = j + 1 == scales;
        Plane dy = moments_backward(px[j], py[j], last ? 0.0 : g, last ? g : 0.0);
        if (carry.size() > 0) downsample_adjoint_add(carry, dy);
        carry = std::move(dy);
      }
      grad->channel(c) = carry.template cast<Scalar>().matrix();
    }
  }
  return result;
}

template <typename Scalar>
LossTerms distortion_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
                          const LossConfig& cfg, Tensor<Scalar>* grad) {
  cfg.validate();
  require_same(x, x_hat, "distortion_loss");
  Tensor<Scalar> g_freq, g_l1, g_ssim;
  LossTerms terms;
  terms.frequency = frequency_l1(x, x_hat, cfg.frequency, grad ? &g_freq : nullptr);
  terms.l1 = l1_loss(x, x_hat, grad ? &g_l1 : nullptr);
  terms.ms_ssim = ms_ssim(x, x_hat, grad ? &g_ssim : nullptr);
  const double w_l1 = cfg.lambda * cfg.alpha;
  const double w_ssim = cfg.lambda * (1.0 - cfg.alpha);
  terms.total = terms.frequency + w_l1 * terms.l1 + w_ssim * (1.0 - terms.ms_ssim);
  if (grad) {
    *grad = std::move(g_freq);
    grad->array() += static_cast<Scalar>(w_l1) * g_l1.array() -
                     static_cast<Scalar>(w_ssim) * g_ssim.array();
  }
  return terms;
}

#define NERV360_INSTANTIATE_OBJECTIVE(S)                                                   \
  template double psnr(const Tensor<S>&, const Tensor<S>&);                                \
  template double l1_loss(const Tensor<S>&, const Tensor<S>&, Tensor<S>*);                 \
  template double frequency_l1(const Tensor<S>&, const Tensor<S>&, FrequencyMode,          \
                               Tensor<S>*);                                                \
  template double ms_ssim(const Tensor<S>&, const Tensor<S>&, Tensor<S>*);                 \
  template LossTerms distortion_loss(const Tensor<S>&, const Tensor<S>&, const LossConfig&, \
                                     Tensor<S>*);

NERV360_INSTANTIATE_OBJECTIVE(float)
NERV360_INSTANTIATE_OBJECTIVE(double)

}  // namespace nerv360
