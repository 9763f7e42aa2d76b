#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>

#include "nerv360/geometry.hpp"
#include "nerv360/layers.hpp"

namespace nerv360 {

// Geometric sin/cos frequency ladder: frequencies b^0 .. b^(l-1), times pi.
struct PEConfig {
  double base = 1.25;
  int levels = 80;

  Index dim() const { return 2 * static_cast<Index>(levels); }
  void validate() const;
  friend bool operator==(const PEConfig&, const PEConfig&) = default;
};

// [sin(b^0 pi v), cos(b^0 pi v), ..., sin(b^(l-1) pi v), cos(b^(l-1) pi v)].
Eigen::VectorXd positional_encode(double v, const PEConfig& cfg);

// Time and view direction mapped to [0, 1].
struct NormalizedView {
  double t = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

NormalizedView normalize_view(const ViewState& state, std::int64_t num_frames);

template <typename Scalar>
struct AffineParams {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;

  Index channels() const { return gamma.size(); }
  static AffineParams identity(Index channels) {
    return {Vector<Scalar>::Ones(channels), Vector<Scalar>::Zero(channels)};
  }
};

enum class ConditioningInputs {
  time,           // PE(t): the temporal-only (TAT) variant
  time_and_view,  // PE(t) ++ PE(theta) ++ PE(phi): STAT
};

// Two-layer perceptron (GELU hidden) emitting 2C values split into (g, beta),
// with gamma = 1 + g. The output layer starts at zero so a fresh generator is
// the identity transform.
template <typename Scalar>
class AffineGenerator {
 public:
  struct Cache {
    Vector<Scalar> input;
    Vector<Scalar> pre_activation;
    Vector<Scalar> hidden;
  };

  AffineGenerator() = default;
  AffineGenerator(const std::string& name, ConditioningInputs inputs, const PEConfig& pe,
                  Index hidden, Index channels);

  void init(std::mt19937_64& rng);

  Vector<Scalar> encode_inputs(const NormalizedView& view) const;
  AffineParams<Scalar> forward(const NormalizedView& view, Cache* cache = nullptr) const;
  // Accumulates weight gradients from dL/dgamma and dL/dbeta.
  void backward(const Cache& cache, const AffineParams<Scalar>& grad);

  void collect(ParameterList<Scalar>& out) {
    hidden_layer.collect(out);
    output_layer.collect(out);
  }
  Index channels() const { return channels_; }
  ConditioningInputs inputs() const { return inputs_; }
  Index parameter_count() const {
    return hidden_layer.weight.size() + hidden_layer.bias.size() + output_layer.weight.size() +
           output_layer.bias.size();
  }

  Linear<Scalar> hidden_layer;
  Linear<Scalar> output_layer;

 private:
  ConditioningInputs inputs_ = ConditioningInputs::time_and_view;
  PEConfig pe_;
  Index channels_ = 0;
};

// Parameter count of a generator without building one.
Index affine_generator_parameters(ConditioningInputs inputs, const PEConfig& pe, Index hidden,
                                  Index channels);

template <typename Scalar>
AffineParams<Scalar> stat_generator(const NormalizedView& view, Index stage_channels,
                                    const AffineGenerator<Scalar>& generator) {
  if (generator.channels() != stage_channels) {
    throw ShapeError("stat_generator: generator emits " + std::to_string(generator.channels()) +
                     " channels, stage has " + std::to_string(stage_channels));
  }
  return generator.forward(view);
}

template <typename Scalar>
AffineParams<Scalar> tat_generator(double t_hat, Index stage_channels,
                                   const AffineGenerator<Scalar>& generator) {
  if (generator.inputs() != ConditioningInputs::time) {
    throw std::invalid_argument("tat_generator: generator is view-conditioned");
  }
  return stat_generator(NormalizedView{t_hat, 0.0, 0.0}, stage_channels, generator);
}

}  // namespace nerv360
