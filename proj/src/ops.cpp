#include "cmil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cmil/errors.hpp"

namespace cmil {

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.row_span(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_span(k).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

std::vector<double> softmax_row(std::span<const double> x) {
  if (x.empty()) throw DomainError("softmax of an empty vector");
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> log_softmax_row(std::span<const double> x) {
  if (x.empty()) throw DomainError("log-softmax of an empty vector");
  const double m = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - m);
  const double lse = m + std::log(total);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (x.size() != gain.size() || x.size() != bias.size()) {
    throw DimensionError("layer_norm: input, gain and bias lengths differ");
  }
  if (x.empty()) throw DimensionError("layer_norm: empty input");
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

double gelu_derivative(double x) {
  const double inner = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor2 dropout(const Tensor2& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double scale = 1.0 / (1.0 - rate);
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = unif(rng) < rate ? 0.0 : x[i] * scale;
  return out;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                      std::to_string(logits.size()) + " classes");
  }
  return -log_softmax_row(logits)[label];
}

}  // namespace cmil
