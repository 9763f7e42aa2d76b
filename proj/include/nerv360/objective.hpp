#pragma once

#include <array>

#include "nerv360/tensor.hpp"

namespace nerv360 {

enum class FrequencyMode {
  complex_parts,  // L1 over real and imaginary parts
  magnitude,      // L1 over spectral magnitudes
};

struct LossConfig {
  double lambda = 60.0;
  double alpha = 0.7;
  FrequencyMode frequency = FrequencyMode::complex_parts;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Canonical five-scale MS-SSIM exponents.
inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Largest scale count (<= 5) with min(h, w) >= 11 * 2^(scales - 1).
// Throws ShapeError for images smaller than one window.
int ms_ssim_scales(Index height, Index width);

// 10 log10(1 / MSE) for data in [0, 1], capped at 100 dB.
template <typename Scalar>
double psnr(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat);

// Mean absolute difference; `grad` (optional) receives d/dx_hat.
template <typename Scalar>
double l1_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat, Tensor<Scalar>* grad = nullptr);

// L1 distance between per-channel 2D DFTs, normalized by the element count
// C*H*W so that constant images a, b give |a - b|.
template <typename Scalar>
double frequency_l1(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
                    FrequencyMode mode = FrequencyMode::complex_parts,
                    Tensor<Scalar>* grad = nullptr);

// Multi-scale SSIM (11x11 Gaussian window, sigma 1.5, data range 1) averaged
// over channels. Scale count is reduced for small images with the exponents
// renormalized to sum to one.
template <typename Scalar>
double ms_ssim(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
               Tensor<Scalar>* grad = nullptr);

struct LossTerms {
  double total = 0.0;
  double frequency = 0.0;
  double l1 = 0.0;
  double ms_ssim = 1.0;
};

// frequency_l1 + lambda*alpha*L1 + lambda*(1 - alpha)*(1 - MS-SSIM).
template <typename Scalar>
LossTerms distortion_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
                          const LossConfig& cfg, Tensor<Scalar>* grad = nullptr);

}  // namespace nerv360
