#include "nerv360/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nerv360 {

template <typename Scalar>
StepStatus adan_step(const ParameterList<Scalar>& params, OptState<Scalar>& state, double lr,
                     const AdanConfig& cfg) {
  for (const auto* p : params) {
    if (!p->grad.allFinite()) return StepStatus::rejected_non_finite;
  }
  if (state.slots.empty()) {
    state.slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto rows = params[i]->value.rows(), cols = params[i]->value.cols();
      auto& s = state.slots[i];
      s.first_moment = RowMatrix<Scalar>::Zero(rows, cols);
      s.diff_moment = RowMatrix<Scalar>::Zero(rows, cols);
      s.second_moment = RowMatrix<Scalar>::Zero(rows, cols);
      s.previous_grad = params[i]->grad;  // first difference is zero
    }
  }
  if (state.slots.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter list");
  }

  const std::int64_t k = ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(k));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(k));
  const double bc3 = 1.0 - std::pow(cfg.beta3, static_cast<double>(k));
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto b3 = static_cast<Scalar>(cfg.beta3);
  const auto step_m = static_cast<Scalar>(lr / bc1);
  const auto step_v = static_cast<Scalar>(lr * cfg.beta2 / bc2);
  const auto sqrt_bc3 = static_cast<Scalar>(std::sqrt(bc3));
  const auto eps = static_cast<Scalar>(cfg.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& s = state.slots[i];
    if (s.first_moment.rows() != p.value.rows() || s.first_moment.cols() != p.value.cols()) {
      throw std::invalid_argument("optimizer slot shape mismatch for " + p.name);
    }
    const RowMatrix<Scalar> diff = p.grad - s.previous_grad;
    const RowMatrix<Scalar> update = p.grad + b2 * diff;
    s.first_moment = b1 * s.first_moment + (Scalar(1) - b1) * p.grad;
    s.diff_moment = b2 * s.diff_moment + (Scalar(1) - b2) * diff;
    s.second_moment =
        (b3 * s.second_moment.array() + (Scalar(1) - b3) * update.array().square()).matrix();
    const auto denom = s.second_moment.array().sqrt() / sqrt_bc3 + eps;
    if (cfg.weight_decay != 0.0) p.value *= static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
    p.value.array() -= (step_m * s.first_moment.array() + step_v * s.diff_moment.array()) / denom;
    s.previous_grad = p.grad;
  }
  return StepStatus::applied;
}

template StepStatus adan_step(const ParameterList<float>&, OptState<float>&, double,
                              const AdanConfig&);
template StepStatus adan_step(const ParameterList<double>&, OptState<double>&, double,
                              const AdanConfig&);

}  // namespace nerv360
