#pragma once

#include <cstdint>
#include <vector>

#include "nerv360/layers.hpp"

namespace nerv360 {

// Adan: adaptive Nesterov momentum with a gradient-difference moment.
struct AdanConfig {
  double beta1 = 0.98;
  double beta2 = 0.92;
  double beta3 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;
  friend bool operator==(const AdanConfig&, const AdanConfig&) = default;
};

template <typename Scalar>
struct AdanSlot {
  RowMatrix<Scalar> first_moment;     // m
  RowMatrix<Scalar> diff_moment;      // v, moment of g_k - g_{k-1}
  RowMatrix<Scalar> second_moment;    // n
  RowMatrix<Scalar> previous_grad;
};

template <typename Scalar>
struct OptState {
  std::int64_t step = 0;
  std::vector<AdanSlot<Scalar>> slots;  // parallel to the parameter list
};

enum class [[nodiscard]] StepStatus { applied, rejected_non_finite };

// One bias-corrected Adan update from each parameter's accumulated gradient.
// Non-finite gradients leave parameters and state untouched.
template <typename Scalar>
StepStatus adan_step(const ParameterList<Scalar>& params, OptState<Scalar>& state, double lr,
                     const AdanConfig& cfg = {});

}  // namespace nerv360
