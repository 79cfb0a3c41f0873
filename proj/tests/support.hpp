#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cmil/bag.hpp"
#include "cmil/errors.hpp"
#include "cmil/model.hpp"
#include "cmil/objectives.hpp"
#include "cmil/trainer.hpp"
#include "cmil/tensor.hpp"

namespace testing {

using cmil::Rng;
using cmil::Tensor2;

inline Tensor2 random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor2 t(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline std::size_t index(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

inline cmil::DemographicVector random_demographics(Rng& rng) {
  return cmil::DemographicVector::observed(index(rng, 2), index(rng, 5), uniform(rng, 20.0, 89.0));
}

inline cmil::FeatureBag random_bag(Rng& rng, std::size_t k, std::size_t d, std::size_t classes = 2,
                                   bool survival = false, const std::string& id = "bag") {
  cmil::FeatureBag b;
  b.bag_id = id;
  b.instances = static_cast<std::uint32_t>(k);
  b.dim = static_cast<std::uint32_t>(d);
  b.class_count = static_cast<std::uint16_t>(classes);
  b.label = static_cast<std::uint16_t>(index(rng, classes));
  std::normal_distribution<float> n(0.0f, 1.0f);
  b.features.resize(k * d);
  for (float& f : b.features) f = n(rng);
  if (survival) b.survival = cmil::SurvivalRecord{uniform(rng, 0.1, 10.0), uniform(rng, 0, 1) < 0.7};
  b.demographics = random_demographics(rng);
  return b;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Finite differences over every entry of every parameter. `loss` must rebuild the forward pass
// from the current parameter values and return the scalar loss; `backprop` fills parameter grads.
inline GradCheckResult gradcheck(const std::vector<cmil::Parameter*>& params, const std::function<double()>& loss,
                                 const std::function<void()>& backprop, double h = 1e-4,
                                 double min_grad = 1e-8) {
  for (cmil::Parameter* p : params) p->zero_grad();
  backprop();
  GradCheckResult r;
  for (cmil::Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto at = [&](double offset) {
        p->value[i] = saved + offset;
        return loss();
      };
      // fourth-order central stencil
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      p->value[i] = saved;
      const double analytic = p->grad[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale <= min_grad) continue;
      ++r.checked;
      const double rel = std::abs(numeric - analytic) / scale;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "] analytic %.6e numeric %.6e", analytic, numeric);
        r.worst = p->name + "[" + std::to_string(i) + buf;
      }
    }
  }
  return r;
}

inline cmil::ModelConfig tiny_config(cmil::GraphVariant v, std::size_t classes = 2, bool survival = false) {
  cmil::ModelConfig c;
  c.feature_dim = 8;
  c.classes = classes;
  c.survival = survival;
  c.hidden = 8;
  c.query_dim = 4;
  c.heads = 2;
  c.layers = 1;
  c.dropout = 0.0;
  c.k_frac = 0.25;
  c.variant = v;
  return c;
}

// Synthetic cohort held in memory with every split populated.
inline cmil::Cohort random_cohort(Rng& rng, std::size_t n, std::size_t k, std::size_t d, std::size_t classes = 2,
                                  bool survival = false) {
  cmil::Cohort c;
  c.class_count = classes;
  for (std::size_t i = 0; i < classes; ++i) c.class_names.push_back("c" + std::to_string(i));
  for (std::size_t i = 0; i < n; ++i) {
    c.bags.push_back(random_bag(rng, k, d, classes, survival, "b" + std::to_string(i)));
    c.splits.push_back(static_cast<cmil::Split>(i % 3));
  }
  return c;
}

// Gradient check of the full window objective. The causal anchor is a stop-gradient of h_X, so
// the finite-difference oracle holds each anchor at its value under the unperturbed parameters
// and rebuilds the causal term around it; everything else is re-evaluated from scratch.
inline GradCheckResult window_gradcheck(cmil::Model& model, std::span<const cmil::FeatureBag* const> bags,
                                        const cmil::LossWeights& w, cmil::Mode mode = cmil::Mode::train) {
  using namespace cmil;
  std::vector<Tensor2> anchors;
  for (const FeatureBag* b : bags) {
    Tape t;
    Binder bind(t, false);
    Rng r(0);
    anchors.push_back(forward_bag(bind, model, *b, mode, r).sem.h_x.value());
  }
  LossWeights rest = w;
  rest.lambda_causal = 0.0;
  auto loss = [&] {
    Tape t;
    Binder bind(t, false);
    Rng r(0);
    double total = window_objective(bind, model, bags, rest, mode, r).scalar();
    for (std::size_t i = 0; i < bags.size(); ++i) {
      Rng r2(0);
      BagForward f = forward_bag(bind, model, *bags[i], mode, r2);
      Var demo = demo_loss(decode_demographics(bind, model.sem, f.sem.z), bags[i]->demographics);
      total += w.lambda_causal * causal_loss(f.sem.z, t.constant(anchors[i]), demo, w).scalar();
    }
    return total;
  };
  auto back = [&] {
    Tape t;
    Binder bind(t, true);
    Rng r(0);
    t.backward(window_objective(bind, model, bags, w, mode, r));
  };
  return gradcheck(model.parameters(), loss, back, 1e-3);
}

}  // namespace testing
