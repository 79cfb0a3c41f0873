#include "cmil/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cmil/errors.hpp"

namespace cmil {

CosineSchedule::CosineSchedule(double base_lr, double eta_min, double horizon)
    : base_lr_(base_lr), eta_min_(eta_min), horizon_(horizon) {
  if (!(base_lr > 0.0) || eta_min < 0.0 || eta_min > base_lr) {
    throw ConfigError("cosine schedule requires 0 <= eta_min <= base_lr and base_lr > 0");
  }
  if (!(horizon > 0.0)) throw ConfigError("cosine schedule horizon must be positive");
}

double CosineSchedule::at(double t) const {
  const double progress = std::clamp(t / horizon_, 0.0, 1.0);
  return eta_min_ + 0.5 * (base_lr_ - eta_min_) * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState OptimizerState::for_params(const AdamConfig& config,
                                          std::span<Parameter* const> params) {
  OptimizerState s;
  s.config = config;
  for (const Parameter* p : params) {
    s.first_moment.emplace_back(p->value.rows(), p->value.cols());
    s.second_moment.emplace_back(p->value.rows(), p->value.cols());
  }
  return s;
}

void adam_step(OptimizerState& state, std::span<Parameter* const> params, double lr) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor2& m = state.first_moment[k];
    Tensor2& v = state.second_moment[k];
    if (!p.value.same_shape(m) || !p.grad.same_shape(m)) {
      throw DimensionError("adam_step: shape mismatch for parameter " + p.name);
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p.value[i]);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void scale_grads(std::span<Parameter* const> params, double factor) {
  for (Parameter* p : params)
    for (double& g : p->grad.data()) g *= factor;
}

}  // namespace cmil
