#pragma once

// Reverse-mode differentiation over Tensor2 values.
//
// A Tape records every primitive applied during a forward pass. Parameters enter the tape as
// tracked leaves; Tape::backward replays adjoints in reverse order and adds the result into each
// Parameter::grad. Values produced on a tape are immutable. Clear the tape between steps.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmil/ops.hpp"
#include "cmil/tensor.hpp"

namespace cmil {

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor2 value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.rows(), this->value.cols()) {}

  std::string name;
  Tensor2 value;
  Tensor2 grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Adds `upstream` (gradient of the node's output) into the parents' gradients.
  using Backprop = std::function<void(Tape&, const Tensor2& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2 value);
  // Tracked leaf; backward() accumulates into p.grad.
  Var param(Parameter& p);
  // Untracked read-only view of a parameter (inference).
  Var view(const Parameter& p);

  // Records a derived node. `fn` is dropped when no parent requires a gradient.
  Var push(Tensor2 value, bool requires_grad, Backprop fn, const char* op);

  void backward(const Var& loss);
  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor2& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient slot for node `id`, zero-allocated on first access.
  Tensor2& grad(std::size_t id);

  void check_owned(const Var& v, const char* op) const;

 private:
  struct Node {
    Tensor2 owned;
    const Tensor2* borrowed = nullptr;
    Tensor2 grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };
  std::deque<Node> nodes_;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
// m (r×c) + row (1×c) broadcast over rows.
Var add_row(const Var& m, const Var& row);
Var scale(const Var& a, double c);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var sum_squares(const Var& a);
// Row-wise layer normalization; gain and bias are 1×cols.
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps);
Var softmax_rows(const Var& x);
// Softmax restricted to entries with mask != 0; masked entries are exactly zero.
// mask is row-major with x's shape. A row with no allowed entry is a ContractError.
Var masked_softmax_rows(const Var& x, std::span<const std::uint8_t> mask);
// Mean over rows of -log softmax(row)[labels[row]].
Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> labels);
Var dropout(const Var& x, double rate, Mode mode, Rng& rng);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
Var stop_gradient(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

}  // namespace ad
}  // namespace cmil
