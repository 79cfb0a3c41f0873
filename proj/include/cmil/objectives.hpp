#pragma once

#include <span>
#include <vector>

#include "cmil/autodiff.hpp"
#include "cmil/bag.hpp"

namespace cmil {

struct LossWeights {
  double lambda_causal = 0.1;
  double lambda_fair = 0.05;
  double lambda_ins = 0.5;
  double lambda_demo = 0.1;
  void validate() const;
};

// CE(bag) + lambda_ins * instance loss
Var classification_loss(const Var& bag_logits, std::size_t bag_label, const Var& inst_loss, const LossWeights& w);
double classification_loss(std::span<const double> bag_logits, std::size_t bag_label, double inst_loss,
                           const LossWeights& w);

// ||Z - anchor||^2 + lambda_demo * demo_loss. The anchor is a stop-gradient copy of the embedded
// image node, which shares Z's width.
Var causal_loss(const Var& z, const Var& anchor, const Var& demo, const LossWeights& w);
double causal_loss(std::span<const double> z, std::span<const double> anchor, double demo, const LossWeights& w);

// L_cls + lambda_causal * L_causal + lambda_fair * L_fair
Var total_loss(const Var& cls, const Var& causal, const Var& fair, const LossWeights& w);
double total_loss(double cls, double causal, double fair, const LossWeights& w);

/// Predicted class probabilities of the bags in one window, keyed by their demographics.
/// Each attribute family (gender, race, age bin) contributes the sum over unordered group pairs of
/// squared gaps between group-mean positive-class probabilities. With more than two classes the
/// gap is averaged over classes. Bags with an unobserved attribute do not join that family.
class BatchFairnessBuffer {
 public:
  void add(const Var& probs, const DemographicVector& demographics);
  std::size_t size() const { return probs_.size(); }
  void clear();
  // Returns a constant 0 (and logs a warning) when no group has a member.
  Var loss(Tape& tape) const;

 private:
  std::vector<Var> probs_;
  std::vector<DemographicVector> demographics_;
};

double fairness_loss(std::span<const std::vector<double>> probs, std::span<const DemographicVector> demographics);

// Negative Breslow partial log-likelihood: -sum_{i: event} [r_i - log sum_{j: t_j >= t_i} exp(r_j)].
// Throws DomainError when there is no event.
double cox_partial_likelihood(std::span<const double> risks, std::span<const double> times,
                              std::span<const std::uint8_t> events);
Var cox_partial_likelihood(const Var& risks, std::span<const double> times, std::span<const std::uint8_t> events);

}  // namespace cmil
