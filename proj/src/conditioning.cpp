#include "nerv360/conditioning.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace nerv360 {

void PEConfig::validate() const {
  if (!(base > 1.0)) throw std::invalid_argument("positional encoding base must exceed 1");
  if (levels < 1) throw std::invalid_argument("positional encoding needs at least one level");
}

Eigen::VectorXd positional_encode(double v, const PEConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(v)) throw std::invalid_argument("positional_encode: non-finite input");
#ifndef NDEBUG
  if (v < 0.0 || v > 1.0) std::cerr << "positional_encode: input " << v << " outside [0, 1]\n";
#endif
  Eigen::VectorXd out(cfg.dim());
  double freq = 1.0;
  for (int i = 0; i < cfg.levels; ++i, freq *= cfg.base) {
    out(2 * i) = std::sin(freq * kPi * v);
    out(2 * i + 1) = std::cos(freq * kPi * v);
  }
  return out;
}

NormalizedView normalize_view(const ViewState& state, std::int64_t num_frames) {
  if (num_frames < 1) throw std::invalid_argument("num_frames must be >= 1");
  if (state.t < 0 || state.t >= num_frames) {
    throw std::out_of_range("frame index " + std::to_string(state.t) + " outside [0, " +
                            std::to_string(num_frames) + ")");
  }
  const double denom = static_cast<double>(std::max<std::int64_t>(num_frames - 1, 1));
  return {static_cast<double>(state.t) / denom, (wrap_longitude(state.theta) + kPi) / (2.0 * kPi),
          (clamp_latitude(state.phi) + kPi / 2.0) / kPi};
}

Index affine_generator_parameters(ConditioningInputs inputs, const PEConfig& pe, Index hidden,
                                  Index channels) {
  const Index in = (inputs == ConditioningInputs::time ? 1 : 3) * pe.dim();
  return in * hidden + hidden + hidden * 2 * channels + 2 * channels;
}

template <typename Scalar>
AffineGenerator<Scalar>::AffineGenerator(const std::string& name, ConditioningInputs inputs,
                                         const PEConfig& pe, Index hidden, Index channels)
    : hidden_layer(name + ".hidden", (inputs == ConditioningInputs::time ? 1 : 3) * pe.dim(),
                   hidden),
      output_layer(name + ".out", hidden, 2 * channels),
      inputs_(inputs),
      pe_(pe),
      channels_(channels) {
  pe.validate();
  if (hidden < 1 || channels < 1) throw std::invalid_argument("generator dims must be >= 1");
}

template <typename Scalar>
void AffineGenerator<Scalar>::init(std::mt19937_64& rng) {
  hidden_layer.init(rng);
  output_layer.weight.value.setZero();
  output_layer.bias.value.setZero();
}

template <typename Scalar>
Vector<Scalar> AffineGenerator<Scalar>::encode_inputs(const NormalizedView& view) const {
  const Index d = pe_.dim();
  Eigen::VectorXd z(inputs_ == ConditioningInputs::time ? d : 3 * d);
  z.head(d) = positional_encode(view.t, pe_);
  if (inputs_ == ConditioningInputs::time_and_view) {
    z.segment(d, d) = positional_encode(view.theta, pe_);
    z.tail(d) = positional_encode(view.phi, pe_);
  }
  return z.cast<Scalar>();
}

template <typename Scalar>
AffineParams<Scalar> AffineGenerator<Scalar>::forward(const NormalizedView& view,
                                                      Cache* cache) const {
  Vector<Scalar> input = encode_inputs(view);
  Vector<Scalar> pre = hidden_layer.forward(input);
  Vector<Scalar> hidden = pre.unaryExpr([](Scalar v) { return gelu(v); });
  const Vector<Scalar> out = output_layer.forward(hidden);
  AffineParams<Scalar> params{out.head(channels_).array() + Scalar(1), out.tail(channels_)};
  if (cache) *cache = Cache{std::move(input), std::move(pre), std::move(hidden)};
  return params;
}

template <typename Scalar>
void AffineGenerator<Scalar>::backward(const Cache& cache, const AffineParams<Scalar>& grad) {
  if (grad.gamma.size() != channels_ || grad.beta.size() != channels_) {
    throw ShapeError("generator backward: gradient size mismatch");
  }
  Vector<Scalar> d_out(2 * channels_);
  d_out << grad.gamma, grad.beta;
  const Vector<Scalar> d_hidden = output_layer.backward(cache.hidden, d_out);
  const Vector<Scalar> d_pre =
      d_hidden.cwiseProduct(cache.pre_activation.unaryExpr([](Scalar v) { return gelu_derivative(v); }));
  hidden_layer.backward(cache.input, d_pre);
}

template class AffineGenerator<float>;
template class AffineGenerator<double>;

}  // namespace nerv360
