#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <numbers>
#include <vector>

#include "nerv360/tensor.hpp"

namespace nerv360 {

inline constexpr double kPi = std::numbers::pi;

inline double degrees_to_radians(double deg) { return deg * kPi / 180.0; }
inline double radians_to_degrees(double rad) { return rad * 180.0 / kPi; }

// Longitude wrapped into [-pi, pi).
double wrap_longitude(double theta);
// Latitude clamped (never wrapped) into [-pi/2, pi/2].
double clamp_latitude(double phi);

// Frame index plus viewing direction of the viewport center.
struct ViewState {
  std::int64_t t = 0;
  double theta = 0.0;
  double phi = 0.0;

  // Applies the longitude wrap and latitude clamp. Throws on non-finite angles
  // or a negative frame index.
  static ViewState make(std::int64_t t, double theta, double phi);
};

// Rectilinear camera. The vertical field of view follows from the aspect
// ratio: tan(vfov/2) = tan(hfov/2) * out_h / out_w.
struct ViewportSpec {
  double hfov = degrees_to_radians(78.1);
  Index out_h = 1080;
  Index out_w = 1920;

  void validate() const;
  // Same camera at 1/factor resolution; dims must divide evenly.
  ViewportSpec downscaled(Index factor) const;
  static ViewportSpec from_degrees(double hfov_deg, Index out_h, Index out_w);
  friend bool operator==(const ViewportSpec&, const ViewportSpec&) = default;
};

// Continuous source coordinates, in source pixels, for every output pixel
// (row-major). u is unbounded and wraps modulo src_w at sampling time;
// v lies in [-0.5, src_h - 0.5].
struct SamplingGrid {
  Index out_h = 0;
  Index out_w = 0;
  Index src_h = 0;
  Index src_w = 0;
  Eigen::ArrayXd u;
  Eigen::ArrayXd v;
};

// Perspective viewport of an equirectangular source: camera yawed by theta,
// then pitched by phi about its own right axis, no roll.
SamplingGrid viewport_grid(double theta, double phi, const ViewportSpec& spec, Index src_h,
                           Index src_w);

// The four taps and weights of each output pixel, shared by all channels and
// by the backward pass.
struct BilinearPlan {
  Index src_h = 0;
  Index src_w = 0;
  Index out_h = 0;
  Index out_w = 0;
  std::vector<std::array<std::int32_t, 4>> taps;
  std::vector<std::array<double, 4>> weights;
};

BilinearPlan make_bilinear_plan(const SamplingGrid& grid);

// Bilinear interpolation with horizontal wraparound and vertical edge clamping.
template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& source, const BilinearPlan& plan);

template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& source, const SamplingGrid& grid) {
  return bilinear_sample(source, make_bilinear_plan(grid));
}

// Adjoint of bilinear_sample: scatters output gradients back onto the source.
template <typename Scalar>
Tensor<Scalar> bilinear_sample_backward(const Tensor<Scalar>& grad_output,
                                        const BilinearPlan& plan);

template <typename Scalar>
Tensor<Scalar> extract_viewport(const Tensor<Scalar>& source, double theta, double phi,
                                const ViewportSpec& spec) {
  return bilinear_sample(source,
                         viewport_grid(theta, phi, spec, source.height(), source.width()));
}

}  // namespace nerv360
