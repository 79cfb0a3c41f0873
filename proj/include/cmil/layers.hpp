#pragma once

#include <string>

#include "cmil/autodiff.hpp"

namespace cmil {

// Puts parameters on a tape: tracked leaves when gradients are wanted, read-only views otherwise.
class Binder {
 public:
  Binder(Tape& tape, bool track) : tape_(tape), track_(track) {}
  Var operator()(Parameter& p) { return track_ ? tape_.param(p) : tape_.view(p); }
  Var constant(Tensor2 v) { return tape_.constant(std::move(v)); }
  Tape& tape() { return tape_; }
  bool tracking() const { return track_; }

 private:
  Tape& tape_;
  bool track_;
};

// Weights and biases drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Parameter init_weight(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Parameter init_bias(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// y = x W (+ b), row-vector convention: x is n×in, W is in×out, b is 1×out.
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
  Var apply(Binder& bind, const Var& x);
  void collect(std::vector<Parameter*>& out);
};

// Two-layer perceptron with a GELU between the layers.
struct Mlp2 {
  Linear first;
  Linear second;

  Mlp2() = default;
  Mlp2(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Var apply(Binder& bind, const Var& x);
  void collect(std::vector<Parameter*>& out);
};

}  // namespace cmil
