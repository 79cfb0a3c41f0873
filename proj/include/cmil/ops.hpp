#pragma once

// Value-level numerical kernels. The taped versions in autodiff.hpp are built on these.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "cmil/tensor.hpp"

namespace cmil {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

inline constexpr double kLayerNormEps = 1e-5;

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 transpose(const Tensor2& a);

// Numerically stable softmax (max-subtracted). Throws DomainError on empty input.
std::vector<double> softmax_row(std::span<const double> x);
std::vector<double> log_softmax_row(std::span<const double> x);

// (x - mean) / sqrt(var + eps) * gain + bias, with population variance.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps = kLayerNormEps);

// tanh approximation.
double gelu(double x);
double gelu_derivative(double x);

double sigmoid(double x);

// Inverted dropout: eval mode or rate 0 is the identity.
Tensor2 dropout(const Tensor2& x, double rate, Mode mode, Rng& rng);

// -log softmax(logits)[label].
double cross_entropy(std::span<const double> logits, std::size_t label);

}  // namespace cmil
