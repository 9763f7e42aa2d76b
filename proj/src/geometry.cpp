#include "nerv360/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nerv360 {

double wrap_longitude(double theta) {
  if (theta >= -kPi && theta < kPi) return theta;
  double wrapped = std::fmod(theta + kPi, 2.0 * kPi);
  if (wrapped < 0.0) wrapped += 2.0 * kPi;
  wrapped -= kPi;
  // fmod can land exactly on +pi through rounding.
  return wrapped >= kPi ? -kPi : wrapped;
}

double clamp_latitude(double phi) { return std::clamp(phi, -kPi / 2.0, kPi / 2.0); }

ViewState ViewState::make(std::int64_t t, double theta, double phi) {
  if (!std::isfinite(theta) || !std::isfinite(phi)) {
    throw std::invalid_argument("view angles must be finite");
  }
  if (t < 0) throw std::invalid_argument("frame index must be non-negative");
  return ViewState{t, wrap_longitude(theta), clamp_latitude(phi)};
}

void ViewportSpec::validate() const {
  if (!(hfov > 0.0 && hfov < kPi)) {
    throw std::invalid_argument("hfov must lie in (0, pi), got " + std::to_string(hfov));
  }
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("viewport dims must be >= 1");
}

ViewportSpec ViewportSpec::downscaled(Index factor) const {
  if (factor < 1 || out_h % factor != 0 || out_w % factor != 0) {
    throw ShapeError("viewport " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " is not divisible by " + std::to_string(factor));
  }
  return ViewportSpec{hfov, out_h / factor, out_w / factor};
}

ViewportSpec ViewportSpec::from_degrees(double hfov_deg, Index out_h, Index out_w) {
  ViewportSpec spec{degrees_to_radians(hfov_deg), out_h, out_w};
  spec.validate();
  return spec;
}

SamplingGrid viewport_grid(double theta, double phi, const ViewportSpec& spec, Index src_h,
                           Index src_w) {
  if (!std::isfinite(theta) || !std::isfinite(phi)) {
    throw std::invalid_argument("view angles must be finite");
  }
  spec.validate();
  if (src_h < 1 || src_w < 1) throw std::invalid_argument("source dims must be >= 1");

  const Index n = spec.out_h * spec.out_w;
  const double half_w = std::tan(spec.hfov / 2.0);
  const double half_h = half_w * static_cast<double>(spec.out_h) / static_cast<double>(spec.out_w);

  // Image-plane coordinates at unit focal distance, +x right, +y up.
  const Eigen::ArrayXd cols =
      (Eigen::ArrayXd::LinSpaced(spec.out_w, 0.5, spec.out_w - 0.5) * (2.0 / spec.out_w) - 1.0) *
      half_w;
  const Eigen::ArrayXd rows =
      (1.0 - Eigen::ArrayXd::LinSpaced(spec.out_h, 0.5, spec.out_h - 0.5) * (2.0 / spec.out_h)) *
      half_h;
  Eigen::ArrayXd x(n), y(n);
  for (Index i = 0; i < spec.out_h; ++i) {
    x.segment(i * spec.out_w, spec.out_w) = cols;
    y.segment(i * spec.out_w, spec.out_w).setConstant(rows(i));
  }

  // Pitch about the camera right axis, then yaw about world up; forward is +z.
  const double cp = std::cos(phi), sp = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const Eigen::ArrayXd y_pitched = y * cp + sp;
  const Eigen::ArrayXd z_pitched = cp - y * sp;
  const Eigen::ArrayXd x_world = x * ct + z_pitched * st;
  const Eigen::ArrayXd z_world = z_pitched * ct - x * st;

  SamplingGrid grid{spec.out_h, spec.out_w, src_h, src_w, Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
  for (Index k = 0; k < n; ++k) {
    const double lon = std::atan2(x_world(k), z_world(k));
    const double lat = std::atan2(y_pitched(k), std::hypot(x_world(k), z_world(k)));
    grid.u(k) = (lon / (2.0 * kPi) + 0.5) * static_cast<double>(src_w) - 0.5;
    grid.v(k) = std::clamp((0.5 - lat / kPi) * static_cast<double>(src_h) - 0.5, -0.5,
                           static_cast<double>(src_h) - 0.5);
  }
  return grid;
}

BilinearPlan make_bilinear_plan(const SamplingGrid& grid) {
  const Index n = grid.out_h * grid.out_w;
  if (grid.u.size() != n || grid.v.size() != n) throw ShapeError("sampling grid size mismatch");
  BilinearPlan plan{grid.src_h, grid.src_w, grid.out_h, grid.out_w, {}, {}};
  plan.taps.resize(static_cast<std::size_t>(n));
  plan.weights.resize(static_cast<std::size_t>(n));
  const auto wrap = [w = grid.src_w](Index x) {
    const Index m = x % w;
    return m < 0 ? m + w : m;
  };
  for (Index k = 0; k < n; ++k) {
    const double u = grid.u(k);
    const double v = grid.v(k);
    const double x0f = std::floor(u);
    const double y0f = std::floor(v);
    const double fx = u - x0f;
    const double fy = v - y0f;
    const auto x0 = static_cast<Index>(x0f);
    const auto y0 = static_cast<Index>(y0f);
    const Index xa = wrap(x0), xb = wrap(x0 + 1);
    const Index ya = std::clamp<Index>(y0, 0, grid.src_h - 1);
    const Index yb = std::clamp<Index>(y0 + 1, 0, grid.src_h - 1);
    const auto at = [&](Index yy, Index xx) {
      return static_cast<std::int32_t>(yy * grid.src_w + xx);
    };
    plan.taps[k] = {at(ya, xa), at(ya, xb), at(yb, xa), at(yb, xb)};
    plan.weights[k] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  }
  return plan;
}

template <typename Scalar>
Tensor<Scalar> bilinear_sample(const Tensor<Scalar>& source, const BilinearPlan& plan) {
  if (source.height() != plan.src_h || source.width() != plan.src_w) {
    throw ShapeError("bilinear_sample: grid built for " + std::to_string(plan.src_h) + "x" +
                     std::to_string(plan.src_w) + " source, got " + to_string(source.shape()));
  }
  Tensor<Scalar> out(source.channels(), plan.out_h, plan.out_w);
  const Index n = plan.out_h * plan.out_w;
  for (Index c = 0; c < source.channels(); ++c) {
    const Scalar* src = source.data() + c * source.pixels();
    Scalar* dst = out.data() + c * n;
    for (Index k = 0; k < n; ++k) {
      const auto& tap = plan.taps[k];
      const auto& w = plan.weights[k];
      dst[k] = static_cast<Scalar>(w[0] * src[tap[0]] + w[1] * src[tap[1]] +
                                   w[2] * src[tap[2]] + w[3] * src[tap[3]]);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> bilinear_sample_backward(const Tensor<Scalar>& grad_output,
                                        const BilinearPlan& plan) {
  if (grad_output.height() != plan.out_h || grad_output.width() != plan.out_w) {
    throw ShapeError("bilinear_sample_backward: gradient shape mismatch");
  }
  Tensor<Scalar> grad(grad_output.channels(), plan.src_h, plan.src_w);
  const Index n = plan.out_h * plan.out_w;
  for (Index c = 0; c < grad_output.channels(); ++c) {
    const Scalar* g = grad_output.data() + c * n;
    Scalar* dst = grad.data() + c * grad.pixels();
    for (Index k = 0; k < n; ++k) {
      const auto& tap = plan.taps[k];
      const auto& w = plan.weights[k];
      for (int j = 0; j < 4; ++j) dst[tap[j]] += static_cast<Scalar>(w[j]) * g[k];
    }
  }
  return grad;
}

template Tensor<float> bilinear_sample(const Tensor<float>&, const BilinearPlan&);
template Tensor<double> bilinear_sample(const Tensor<double>&, const BilinearPlan&);
template Tensor<float> bilinear_sample_backward(const Tensor<float>&, const BilinearPlan&);
template Tensor<double> bilinear_sample_backward(const Tensor<double>&, const BilinearPlan&);

}  // namespace nerv360
