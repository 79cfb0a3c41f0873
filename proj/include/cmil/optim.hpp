#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmil/autodiff.hpp"

namespace cmil {

struct AdamConfig {
  double base_lr = 1e-4;
  double weight_decay = 1e-3;  // decoupled (AdamW form)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Single-cycle cosine annealing from base_lr at t=0 to eta_min at t=horizon; flat afterwards.
class CosineSchedule {
 public:
  CosineSchedule(double base_lr, double eta_min, double horizon);
  double at(double t) const;
  double base_lr() const { return base_lr_; }
  double eta_min() const { return eta_min_; }
  double horizon() const { return horizon_; }

 private:
  double base_lr_;
  double eta_min_;
  double horizon_;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;

  // Zero moments shaped like `params`.
  static OptimizerState for_params(const AdamConfig& config, std::span<Parameter* const> params);
};

// One Adam update of every parameter from its `grad` slot at learning rate `lr`:
//   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
//   w -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
void adam_step(OptimizerState& state, std::span<Parameter* const> params, double lr);

void zero_grads(std::span<Parameter* const> params);
void scale_grads(std::span<Parameter* const> params, double factor);

}  // namespace cmil
