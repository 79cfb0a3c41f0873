#pragma once

// Instance branch (alignment + instance classifier + top-k pseudo-labels) and the
// critical-instance attention pooling that turns a K×d bag into one d-vector.

#include <cstddef>
#include <span>
#include <vector>

#include "cmil/layers.hpp"

namespace cmil {

struct InstanceBranchParams {
  Linear align;       // d -> d, followed by GELU
  Linear classifier;  // d -> C

  InstanceBranchParams() = default;
  InstanceBranchParams(std::size_t dim, std::size_t classes, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct PoolingParams {
  Parameter w_q;  // d × d_q, no bias

  PoolingParams() = default;
  PoolingParams(std::size_t dim, std::size_t query_dim, Rng& rng);
  std::size_t query_dim() const { return w_q.value.cols(); }
};

struct PseudoLabels {
  std::vector<std::size_t> labels;
  std::size_t top_k = 0;
};

inline constexpr double kDefaultTopKFraction = 0.1;

// K×C instance logits: classifier(GELU(align(h))).
Var instance_logits(Binder& bind, InstanceBranchParams& params, const Var& features);

// Number of pseudo-positive instances: max(1, ceil(k_frac * K)).
std::size_t pseudo_top_k(std::size_t instances, double k_frac);

// Negative bag (label 0): all zeros. Otherwise the top_k instances by softmax probability of the
// bag's class receive that class; ties go to the lower index.
PseudoLabels assign_pseudo_labels(const Tensor2& logits, std::size_t bag_label, double k_frac);
PseudoLabels assign_pseudo_labels_from_scores(std::span<const double> scores, std::size_t bag_label,
                                              double k_frac);

// Mean instance cross-entropy against pseudo-labels.
Var instance_loss(const Var& logits, const PseudoLabels& pseudo);

// Criticality score per instance: positive-class probability for C=2, row-max logit otherwise.
std::vector<double> critical_scores(const Tensor2& logits);

struct CriticalInstance {
  std::size_t index = 0;
  std::vector<double> features;
};
std::size_t argmax_lowest(std::span<const double> scores);
CriticalInstance select_critical(const Tensor2& logits, const Tensor2& features);

struct PooledBag {
  Var bag;                    // 1×d
  std::vector<double> alpha;  // K attention weights
};

// Q = tanh(H W_q); alpha = softmax(Q q_crit / sqrt(d_q)); B = sum_i alpha_i h_i.
PooledBag attention_pool(Binder& bind, PoolingParams& params, const Var& features, std::size_t critical);

}  // namespace cmil
