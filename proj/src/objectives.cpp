#include "cmil/objectives.hpp"

#include <cmath>
#include <iostream>
#include <map>

#include "cmil/errors.hpp"

namespace cmil {

void LossWeights::validate() const {
  for (double v : {lambda_causal, lambda_fair, lambda_ins, lambda_demo}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

Var classification_loss(const Var& bag_logits, std::size_t bag_label, const Var& inst_loss, const LossWeights& w) {
  const std::size_t labels[1] = {bag_label};
  return ad::add(ad::cross_entropy_rows(bag_logits, labels), ad::scale(inst_loss, w.lambda_ins));
}

double classification_loss(std::span<const double> bag_logits, std::size_t bag_label, double inst_loss,
                           const LossWeights& w) {
  return cross_entropy(bag_logits, bag_label) + w.lambda_ins * inst_loss;
}

Var causal_loss(const Var& z, const Var& anchor, const Var& demo, const LossWeights& w) {
  if (!z.value().same_shape(anchor.value())) throw ContractError("causal_loss: Z and anchor widths differ");
  return ad::add(ad::sum_squares(ad::sub(z, anchor)), ad::scale(demo, w.lambda_demo));
}

double causal_loss(std::span<const double> z, std::span<const double> anchor, double demo, const LossWeights& w) {
  if (z.size() != anchor.size()) throw ContractError("causal_loss: Z and anchor widths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (z[i] - anchor[i]) * (z[i] - anchor[i]);
  return s + w.lambda_demo * demo;
}

Var total_loss(const Var& cls, const Var& causal, const Var& fair, const LossWeights& w) {
  return ad::add(ad::add(cls, ad::scale(causal, w.lambda_causal)), ad::scale(fair, w.lambda_fair));
}

double total_loss(double cls, double causal, double fair, const LossWeights& w) {
  return cls + w.lambda_causal * causal + w.lambda_fair * fair;
}

namespace {

// Members of each (attribute, group), keyed in a fixed order.
std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> group_members(
    std::span<const DemographicVector> demographics) {
  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < demographics.size(); ++i) {
    for (Attribute a : kAttributes) {
      if (auto g = demographics[i].group(a)) groups[{static_cast<int>(a), *g}].push_back(i);
    }
  }
  return groups;
}

void warn_empty() { std::clog << "warning: fairness loss has no demographic group members; returning 0\n"; }

}  // namespace

void BatchFairnessBuffer::add(const Var& probs, const DemographicVector& demographics) {
  if (!probs_.empty() && probs.cols() != probs_.front().cols()) {
    throw DimensionError("fairness buffer: probability widths differ");
  }
  probs_.push_back(probs);
  demographics_.push_back(demographics);
}

void BatchFairnessBuffer::clear() {
  probs_.clear();
  demographics_.clear();
}

Var BatchFairnessBuffer::loss(Tape& tape) const {
  const auto groups = group_members(demographics_);
  if (groups.empty()) {
    warn_empty();
    return tape.constant(Tensor2(1, 1, 0.0));
  }
  const std::size_t n = probs_.size();
  const std::size_t classes = probs_.front().cols();
  Var stacked = ad::concat_rows(probs_);  // n×C
  // Group means as (1×n averaging row) × stacked.
  std::map<std::pair<int, std::size_t>, Var> means;
  for (const auto& [key, members] : groups) {
    Tensor2 avg(1, n);
    for (std::size_t i : members) avg[i] = 1.0 / static_cast<double>(members.size());
    means.emplace(key, ad::matmul(tape.constant(std::move(avg)), stacked));
  }
  Var total = tape.constant(Tensor2(1, 1, 0.0));
  for (auto a = means.begin(); a != means.end(); ++a) {
    for (auto b = std::next(a); b != means.end(); ++b) {
      if (a->first.first != b->first.first) continue;
      Var gap = ad::sub(a->second, b->second);
      Var term = classes == 2 ? ad::square(ad::slice_cols(gap, 1, 1))
                              : ad::scale(ad::sum_squares(gap), 1.0 / static_cast<double>(classes));
      total = ad::add(total, term);
    }
  }
  return total;
}

double fairness_loss(std::span<const std::vector<double>> probs, std::span<const DemographicVector> demographics) {
  if (probs.size() != demographics.size()) throw DimensionError("fairness_loss: one demographic vector per bag");
  const auto groups = group_members(demographics);
  if (groups.empty()) {
    warn_empty();
    return 0.0;
  }
  const std::size_t classes = probs.front().size();
  std::map<std::pair<int, std::size_t>, std::vector<double>> means;
  for (const auto& [key, members] : groups) {
    std::vector<double> m(classes, 0.0);
    for (std::size_t i : members)
      for (std::size_t c = 0; c < classes; ++c) m[c] += probs[i][c];
    for (double& v : m) v /= static_cast<double>(members.size());
    means.emplace(key, std::move(m));
  }
  double total = 0.0;
  for (auto a = means.begin(); a != means.end(); ++a) {
    for (auto b = std::next(a); b != means.end(); ++b) {
      if (a->first.first != b->first.first) continue;
      if (classes == 2) {
        const double g = a->second[1] - b->second[1];
        total += g * g;
      } else {
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += (a->second[c] - b->second[c]) * (a->second[c] - b->second[c]);
        total += s / static_cast<double>(classes);
      }
    }
  }
  return total;
}

namespace {

void check_survival_inputs(std::size_t n, std::span<const double> times, std::span<const std::uint8_t> events) {
  if (times.size() != n || events.size() != n) throw DimensionError("cox: risks, times and events differ in length");
  bool any_event = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(times[i] > 0.0)) throw DomainError("cox: survival times must be positive");
    any_event = any_event || events[i] != 0;
  }
  if (!any_event) throw DomainError("cox partial likelihood needs at least one event");
}

// Risk-set denominators S_i = sum_{j: t_j >= t_i} exp(r_j - shift) for each event i.
std::vector<double> risk_set_sums(std::span<const double> r, std::span<const double> times,
                                  std::span<const std::uint8_t> events, double shift) {
  std::vector<double> s(r.size(), 0.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (events[i] == 0) continue;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (times[j] >= times[i]) s[i] += std::exp(r[j] - shift);
  }
  return s;
}

}  // namespace

double cox_partial_likelihood(std::span<const double> risks, std::span<const double> times,
                              std::span<const std::uint8_t> events) {
  check_survival_inputs(risks.size(), times, events);
  double shift = risks[0];
  for (double r : risks) shift = std::max(shift, r);
  const auto sums = risk_set_sums(risks, times, events, shift);
  double nll = 0.0;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    if (events[i] != 0) nll -= risks[i] - shift - std::log(sums[i]);
  }
  return nll;
}

Var cox_partial_likelihood(const Var& risks, std::span<const double> times, std::span<const std::uint8_t> events) {
  Tape& tape = *risks.tape();
  if (risks.cols() != 1) throw DimensionError("cox: risks must be an n×1 column");
  const auto r = risks.value().data();
  const double value = cox_partial_likelihood(r, times, events);
  std::vector<double> t(times.begin(), times.end());
  std::vector<std::uint8_t> e(events.begin(), events.end());
  const std::size_t ir = risks.id();
  return tape.push(Tensor2(1, 1, value), risks.requires_grad(),
                   [ir, t = std::move(t), e = std::move(e)](Tape& tp, const Tensor2& g) {
                     const auto r = tp.value(ir).data();
                     double shift = r[0];
                     for (double v : r) shift = std::max(shift, v);
                     const auto sums = risk_set_sums(r, t, e, shift);
                     Tensor2& gr = tp.grad(ir);
                     // d/dr_k = -event_k + sum_{i: event, t_k >= t_i} exp(r_k) / S_i
                     for (std::size_t k = 0; k < r.size(); ++k) {
                       double d = e[k] != 0 ? -1.0 : 0.0;
                       const double ek = std::exp(r[k] - shift);
                       for (std::size_t i = 0; i < r.size(); ++i)
                         if (e[i] != 0 && t[k] >= t[i]) d += ek / sums[i];
                       gr[k] += g[0] * d;
                     }
                   },
                   "cox_partial_likelihood");
}

}  // namespace cmil
