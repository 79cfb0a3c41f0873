#include "cmil/autodiff.hpp"

#include <cmath>
#include <string>

#include "cmil/errors.hpp"

namespace cmil {

const Tensor2& Var::value() const {
  if (tape_ == nullptr) throw TapeError("access to an unbound Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Tensor2& v = value();
  if (v.size() != 1) throw DimensionError("scalar() on a non-1x1 value");
  return v[0];
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

Var Tape::constant(Tensor2 value) { return push(std::move(value), false, nullptr, "constant"); }

Var Tape::param(Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.borrowed = &p.value;
  n.requires_grad = true;
  n.param = &p;
  return Var(this, nodes_.size() - 1);
}

Var Tape::view(const Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.borrowed = &p.value;
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor2 value, bool requires_grad, Backprop fn, const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node& n = nodes_.emplace_back();
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(fn);
  return Var(this, nodes_.size() - 1);
}

const Tensor2& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

Tensor2& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    const Tensor2& v = value(id);
    n.grad = Tensor2(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::check_owned(const Var& v, const char* op) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw TapeError(std::string(op) + ": operand belongs to a different tape");
  }
}

void Tape::backward(const Var& loss) {
  check_owned(loss, "backward");
  if (loss.value().size() != 1) throw TapeError("backward: loss must be a 1x1 value");
  if (!requires_grad(loss.id())) throw TapeError("backward: loss is detached from every parameter");
  grad(loss.id())[0] += 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.backprop) n.backprop(*this, n.grad);
    if (n.param != nullptr) {
      Tensor2& pg = n.param->grad;
      if (!pg.same_shape(n.grad)) pg = Tensor2(n.grad.rows(), n.grad.cols());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

void Tape::clear() { nodes_.clear(); }

namespace ad {
namespace {

Tape& tape_of(const Var& a, const char* op) {
  if (!a.valid()) throw TapeError(std::string(op) + ": unbound operand");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b, const char* op) {
  Tape& t = tape_of(a, op);
  t.check_owned(b, op);
  return t;
}

std::string shape(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes " + shape(a) + " and " + shape(b) + " differ");
  }
}

// out += a * b^T  (a: r×k, b: c×k, out: r×c)
void add_a_bt(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_span(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_span(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) += s;
    }
  }
}

// out += a^T * b  (a: k×r, b: k×c, out: r×c)
void add_at_b(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t c = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* brow = b.row_span(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* orow = out.row_span(i).data();
      for (std::size_t j = 0; j < c; ++j) orow[j] += aki * brow[j];
    }
  }
}

template <class F, class D>
Var unary_map(const Var& a, const char* op, F f, D df) {
  Tape& t = tape_of(a, op);
  const Tensor2& av = a.value();
  Tensor2 out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return t.push(std::move(out), a.requires_grad(),
                [ia, df](Tape& tp, const Tensor2& g) {
                  const Tensor2& x = tp.value(ia);
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i]);
                },
                op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "matmul");
  Tensor2 out = cmil::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [ia, ib](Tape& tp, const Tensor2& g) {
                  if (tp.requires_grad(ia)) add_a_bt(g, tp.value(ib), tp.grad(ia));
                  if (tp.requires_grad(ib)) add_at_b(tp.value(ia), g, tp.grad(ib));
                },
                "matmul");
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a, "transpose");
  const std::size_t ia = a.id();
  return t.push(cmil::transpose(a.value()), a.requires_grad(),
                [ia](Tape& tp, const Tensor2& g) {
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
                },
                "transpose");
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [ia, ib](Tape& tp, const Tensor2& g) {
                  for (std::size_t id : {ia, ib}) {
                    if (!tp.requires_grad(id)) continue;
                    Tensor2& gx = tp.grad(id);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  }
                },
                "add");
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [ia, ib](Tape& tp, const Tensor2& g) {
                  if (tp.requires_grad(ia)) {
                    Tensor2& ga = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tp.requires_grad(ib)) {
                    Tensor2& gb = tp.grad(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                },
                "sub");
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "hadamard");
  require_same_shape(a.value(), b.value(), "hadamard");
  Tensor2 out = a.value();
  const Tensor2& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), a.requires_grad() || b.requires_grad(),
                [ia, ib](Tape& tp, const Tensor2& g) {
                  if (tp.requires_grad(ia)) {
                    const Tensor2& bv = tp.value(ib);
                    Tensor2& ga = tp.grad(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                  }
                  if (tp.requires_grad(ib)) {
                    const Tensor2& av = tp.value(ia);
                    Tensor2& gb = tp.grad(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  }
                },
                "hadamard");
}

Var add_row(const Var& m, const Var& row) {
  Tape& t = tape_of(m, row, "add_row");
  const Tensor2& mv = m.value();
  const Tensor2& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw DimensionError("add_row: cannot broadcast " + shape(rv) + " over " + shape(mv));
  }
  Tensor2 out = mv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += rv[j];
  const std::size_t im = m.id(), ir = row.id();
  return t.push(std::move(out), m.requires_grad() || row.requires_grad(),
                [im, ir](Tape& tp, const Tensor2& g) {
                  if (tp.requires_grad(im)) {
                    Tensor2& gm = tp.grad(im);
                    for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                  }
                  if (tp.requires_grad(ir)) {
                    Tensor2& gr = tp.grad(ir);
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                  }
                },
                "add_row");
}

Var scale(const Var& a, double c) {
  return unary_map(a, "scale", [c](double x) { return c * x; }, [c](double) { return c; });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a, "tanh");
  const Tensor2& av = a.value();
  Tensor2 out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
  const std::size_t ia = a.id(), self = t.size();
  return t.push(std::move(out), a.requires_grad(),
                [ia, self](Tape& tp, const Tensor2& g) {
                  const Tensor2& y = tp.value(self);
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                },
                "tanh");
}

Var gelu(const Var& a) {
  return unary_map(a, "gelu", [](double x) { return cmil::gelu(x); },
                   [](double x) { return cmil::gelu_derivative(x); });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a, "sigmoid");
  const Tensor2& av = a.value();
  Tensor2 out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = cmil::sigmoid(av[i]);
  const std::size_t ia = a.id(), self = t.size();
  return t.push(std::move(out), a.requires_grad(),
                [ia, self](Tape& tp, const Tensor2& g) {
                  const Tensor2& y = tp.value(self);
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                },
                "sigmoid");
}

Var square(const Var& a) {
  return unary_map(a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a, "sum");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return t.push(Tensor2(1, 1, s), a.requires_grad(),
                [ia](Tape& tp, const Tensor2& g) {
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                },
                "sum");
}

Var sum_squares(const Var& a) {
  Tape& t = tape_of(a, "sum_squares");
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  const std::size_t ia = a.id();
  return t.push(Tensor2(1, 1, s), a.requires_grad(),
                [ia](Tape& tp, const Tensor2& g) {
                  const Tensor2& x = tp.value(ia);
                  Tensor2& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * x[i] * g[0];
                },
                "sum_squares");
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& t = tape_of(x, gain, "layer_norm_rows");
  t.check_owned(bias, "layer_norm_rows");
  const Tensor2& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || !gain.value().same_shape(bias.value())) {
    throw DimensionError("layer_norm_rows: gain/bias must be 1x" + std::to_string(n));
  }
  Tensor2 out(xv.rows(), n);
  // Normalized activations and per-row inverse std, kept for the adjoint.
  Tensor2 xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  const Tensor2& gv = gain.value();
  const Tensor2& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row_span(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (row[j] - mean) * inv_std[r];
      out(r, j) = xhat(r, j) * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return t.push(
      std::move(out), rg,
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Tensor2& g) {
        const Tensor2& gv = tp.value(ig);
        const std::size_t n = g.cols();
        if (tp.requires_grad(ig)) {
          Tensor2& gg = tp.grad(ig);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g(r, j) * xhat(r, j);
        }
        if (tp.requires_grad(ib)) {
          Tensor2& gb = tp.grad(ib);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g(r, j);
        }
        if (tp.requires_grad(ix)) {
          Tensor2& gx = tp.grad(ix);
          const double dn = static_cast<double>(n);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            double mean_dy = 0.0, mean_dy_xhat = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g(r, j) * gv[j];
              mean_dy += dy;
              mean_dy_xhat += dy * xhat(r, j);
            }
            mean_dy /= dn;
            mean_dy_xhat /= dn;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g(r, j) * gv[j];
              gx(r, j) += inv_std[r] * (dy - mean_dy - xhat(r, j) * mean_dy_xhat);
            }
          }
        }
      },
      "layer_norm_rows");
}

namespace {

// Shared adjoint of row softmax: dx = y * (g - <g, y>).
Tape::Backprop softmax_backprop(std::size_t ix, std::size_t self) {
  return [ix, self](Tape& tp, const Tensor2& g) {
    const Tensor2& y = tp.value(self);
    Tensor2& gx = tp.grad(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(r, j) += y(r, j) * (g(r, j) - dot);
    }
  };
}

}  // namespace

Var softmax_rows(const Var& x) {
  Tape& t = tape_of(x, "softmax_rows");
  const Tensor2& xv = x.value();
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto y = softmax_row(xv.row_span(r));
    std::copy(y.begin(), y.end(), out.row_span(r).begin());
  }
  const std::size_t self = t.size();
  return t.push(std::move(out), x.requires_grad(), softmax_backprop(x.id(), self), "softmax_rows");
}

Var masked_softmax_rows(const Var& x, std::span<const std::uint8_t> mask) {
  Tape& t = tape_of(x, "masked_softmax_rows");
  const Tensor2& xv = x.value();
  if (mask.size() != xv.size()) throw DimensionError("masked_softmax_rows: mask size mismatch");
  Tensor2 out(xv.rows(), xv.cols());
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < c; ++j)
      if (mask[r * c + j] != 0) m = std::max(m, xv(r, j));
    if (m == -INFINITY) {
      throw ContractError("masked_softmax_rows: row " + std::to_string(r) + " has no allowed entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask[r * c + j] == 0) continue;
      out(r, j) = std::exp(xv(r, j) - m);
      total += out(r, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(r, j) /= total;
  }
  // Masked entries have y = 0, so the shared adjoint leaves their gradient at zero.
  const std::size_t self = t.size();
  return t.push(std::move(out), x.requires_grad(), softmax_backprop(x.id(), self),
                "masked_softmax_rows");
}

Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> labels) {
  Tape& t = tape_of(logits, "cross_entropy_rows");
  const Tensor2& lv = logits.value();
  if (labels.size() != lv.rows()) throw DimensionError("cross_entropy_rows: one label per row");
  Tensor2 probs(lv.rows(), lv.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] >= lv.cols()) throw DomainError("cross_entropy_rows: label out of range");
    auto lsm = log_softmax_row(lv.row_span(r));
    total -= lsm[labels[r]];
    for (std::size_t j = 0; j < lv.cols(); ++j) probs(r, j) = std::exp(lsm[j]);
  }
  const double n = static_cast<double>(lv.rows());
  const std::size_t il = logits.id();
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return t.push(Tensor2(1, 1, total / n), logits.requires_grad(),
                [il, n, probs = std::move(probs), lab = std::move(lab)](Tape& tp, const Tensor2& g) {
                  Tensor2& gl = tp.grad(il);
                  const double s = g[0] / n;
                  for (std::size_t r = 0; r < probs.rows(); ++r)
                    for (std::size_t j = 0; j < probs.cols(); ++j)
                      gl(r, j) += s * (probs(r, j) - (j == lab[r] ? 1.0 : 0.0));
                },
                "cross_entropy_rows");
}

Var dropout(const Var& x, double rate, Mode mode, Rng& rng) {
  Tape& t = tape_of(x, "dropout");
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const Tensor2& xv = x.value();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor2 factor(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < factor.size(); ++i) factor[i] = unif(rng) < rate ? 0.0 : keep_scale;
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor[i];
  const std::size_t ix = x.id();
  return t.push(std::move(out), x.requires_grad(),
                [ix, factor = std::move(factor)](Tape& tp, const Tensor2& g) {
                  Tensor2& gx = tp.grad(ix);
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
                },
                "dropout");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = tape_of(parts[0], "concat_rows");
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    t.check_owned(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Tensor2 out(rows, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
  }
  return t.push(std::move(out), rg,
                [ids = std::move(ids)](Tape& tp, const Tensor2& g) {
                  std::size_t off = 0;
                  for (std::size_t id : ids) {
                    const std::size_t n = tp.value(id).size();
                    if (tp.requires_grad(id)) {
                      Tensor2& gx = tp.grad(id);
                      for (std::size_t i = 0; i < n; ++i) gx[i] += g[off + i];
                    }
                    off += n;
                  }
                },
                "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = tape_of(parts[0], "concat_cols");
  const std::size_t r = parts[0].rows();
  std::size_t cols = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    t.check_owned(p, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Tensor2 out(r, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& v = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    off += v.cols();
  }
  return t.push(std::move(out), rg,
                [ids = std::move(ids)](Tape& tp, const Tensor2& g) {
                  std::size_t off = 0;
                  for (std::size_t id : ids) {
                    const std::size_t c = tp.value(id).cols();
                    if (tp.requires_grad(id)) {
                      Tensor2& gx = tp.grad(id);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < c; ++j) gx(i, j) += g(i, off + j);
                    }
                    off += c;
                  }
                },
                "concat_cols");
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x, "slice_rows");
  const Tensor2& xv = x.value();
  if (begin + count > xv.rows()) throw DimensionError("slice_rows: range exceeds row count");
  Tensor2 out(count, xv.cols());
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(begin + i, j);
  const std::size_t ix = x.id();
  return t.push(std::move(out), x.requires_grad(),
                [ix, begin](Tape& tp, const Tensor2& g) {
                  Tensor2& gx = tp.grad(ix);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gx(begin + i, j) += g(i, j);
                },
                "slice_rows");
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x, "slice_cols");
  const Tensor2& xv = x.value();
  if (begin + count > xv.cols()) throw DimensionError("slice_cols: range exceeds column count");
  Tensor2 out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  const std::size_t ix = x.id();
  return t.push(std::move(out), x.requires_grad(),
                [ix, begin](Tape& tp, const Tensor2& g) {
                  Tensor2& gx = tp.grad(ix);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gx(i, begin + j) += g(i, j);
                },
                "slice_cols");
}

Var stop_gradient(const Var& x) {
  Tape& t = tape_of(x, "stop_gradient");
  return t.push(x.value(), false, nullptr, "stop_gradient");
}

}  // namespace ad
}  // namespace cmil
