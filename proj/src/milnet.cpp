#include "cmil/milnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmil/errors.hpp"

namespace cmil {

InstanceBranchParams::InstanceBranchParams(std::size_t dim, std::size_t classes, Rng& rng)
    : align("instance.align", dim, dim, rng), classifier("instance.classifier", dim, classes, rng) {}

void InstanceBranchParams::collect(std::vector<Parameter*>& out) {
  align.collect(out);
  classifier.collect(out);
}

PoolingParams::PoolingParams(std::size_t dim, std::size_t query_dim, Rng& rng)
    : w_q(init_weight("pool.w_q", dim, query_dim, rng)) {}

Var instance_logits(Binder& bind, InstanceBranchParams& params, const Var& features) {
  if (features.cols() != params.align.in_dim()) {
    throw DimensionError("instance_logits: feature dim " + std::to_string(features.cols()) +
                         " != expected " + std::to_string(params.align.in_dim()));
  }
  Var aligned = ad::gelu(params.align.apply(bind, features));
  return params.classifier.apply(bind, aligned);
}

std::size_t pseudo_top_k(std::size_t instances, double k_frac) {
  // The small offset keeps products like 0.1*30 = 3.0000000000000004 from rounding up.
  const double raw = std::ceil(k_frac * static_cast<double>(instances) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(k, instances);
}

PseudoLabels assign_pseudo_labels_from_scores(std::span<const double> scores, std::size_t bag_label,
                                              double k_frac) {
  PseudoLabels out;
  out.labels.assign(scores.size(), 0);
  if (bag_label == 0 || scores.empty()) return out;
  out.top_k = pseudo_top_k(scores.size(), k_frac);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < out.top_k; ++i) out.labels[order[i]] = bag_label;
  return out;
}

PseudoLabels assign_pseudo_labels(const Tensor2& logits, std::size_t bag_label, double k_frac) {
  if (bag_label != 0 && bag_label >= logits.cols()) {
    throw DomainError("assign_pseudo_labels: bag label outside the classifier's classes");
  }
  std::vector<double> scores(logits.rows());
  if (bag_label != 0) {
    for (std::size_t i = 0; i < logits.rows(); ++i) scores[i] = softmax_row(logits.row_span(i))[bag_label];
  }
  return assign_pseudo_labels_from_scores(scores, bag_label, k_frac);
}

Var instance_loss(const Var& logits, const PseudoLabels& pseudo) {
  return ad::cross_entropy_rows(logits, pseudo.labels);
}

std::vector<double> critical_scores(const Tensor2& logits) {
  std::vector<double> s(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row_span(i);
    s[i] = logits.cols() == 2 ? softmax_row(row)[1] : *std::max_element(row.begin(), row.end());
  }
  return s;
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

CriticalInstance select_critical(const Tensor2& logits, const Tensor2& features) {
  if (logits.rows() != features.rows()) throw DimensionError("select_critical: row counts differ");
  CriticalInstance c;
  c.index = argmax_lowest(critical_scores(logits));
  auto row = features.row_span(c.index);
  c.features.assign(row.begin(), row.end());
  return c;
}

PooledBag attention_pool(Binder& bind, PoolingParams& params, const Var& features, std::size_t critical) {
  if (critical >= features.rows()) throw DomainError("attention_pool: critical index out of range");
  Var q = ad::tanh(ad::matmul(features, bind(params.w_q)));          // K×d_q
  Var q_crit = ad::slice_rows(q, critical, 1);                          // 1×d_q
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.query_dim()));
  Var scores = ad::scale(ad::matmul(q_crit, ad::transpose(q)), inv_sqrt);  // 1×K
  Var alpha = ad::softmax_rows(scores);
  PooledBag out;
  out.bag = ad::matmul(alpha, features);  // 1×d
  const auto a = alpha.value().data();
  out.alpha.assign(a.begin(), a.end());
  return out;
}

}  // namespace cmil
