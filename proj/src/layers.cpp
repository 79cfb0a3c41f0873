#include "cmil/layers.hpp"

#include <cmath>

namespace cmil {
namespace {

Tensor2 uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> unif(-bound, bound);
  Tensor2 t(rows, cols);
  for (double& v : t.data()) v = unif(rng);
  return t;
}

}  // namespace

Parameter init_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return Parameter(std::move(name), uniform_tensor(fan_in, fan_out, 1.0 / std::sqrt(double(fan_in)), rng));
}

Parameter init_bias(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return Parameter(std::move(name), uniform_tensor(1, fan_out, 1.0 / std::sqrt(double(fan_in)), rng));
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(init_weight(name + ".weight", in, out, rng)), has_bias(with_bias) {
  if (with_bias) bias = init_bias(name + ".bias", in, out, rng);
}

Var Linear::apply(Binder& bind, const Var& x) {
  Var y = ad::matmul(x, bind(weight));
  return has_bias ? ad::add_row(y, bind(bias)) : y;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

Mlp2::Mlp2(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : first(name + ".0", in, hidden, rng), second(name + ".1", hidden, out, rng) {}

Var Mlp2::apply(Binder& bind, const Var& x) { return second.apply(bind, ad::gelu(first.apply(bind, x))); }

void Mlp2::collect(std::vector<Parameter*>& out) {
  first.collect(out);
  second.collect(out);
}

}  // namespace cmil
