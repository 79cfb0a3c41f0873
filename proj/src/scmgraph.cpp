#include "cmil/scmgraph.hpp"

#include <cmath>

#include "cmil/errors.hpp"

namespace cmil {

const char* variant_name(GraphVariant v) {
  switch (v) {
    case GraphVariant::collider: return "collider";
    case GraphVariant::fork: return "fork";
    case GraphVariant::direct: return "direct";
    case GraphVariant::concat: return "concat";
  }
  return "?";
}

GraphVariant parse_variant(const std::string& name) {
  for (GraphVariant v : kAllVariants)
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown graph variant '" + name + "' (expected collider, fork, direct or concat)");
}

void CausalGraphSpec::validate() const {
  for (std::size_t i = 0; i < 3; ++i) {
    if (adjacency[i * 3 + i] != 1 || train_adjacency[i * 3 + i] != 1) {
      throw ContractError("adjacency diagonal must be all ones");
    }
  }
  for (std::size_t k = 0; k < 9; ++k) {
    if (adjacency[k] > 1 || train_adjacency[k] > 1) throw ContractError("adjacency must be binary");
    if (adjacency[k] == 1 && train_adjacency[k] == 0) {
      throw ContractError("train adjacency must contain every inference edge");
    }
  }
}

CausalGraphSpec build_adjacency(GraphVariant variant) {
  CausalGraphSpec s;
  s.variant = variant;
  switch (variant) {
    case GraphVariant::collider:
      // X and U keep only their self-loops at inference; Z receives from X, U and itself.
      // Training adds the reverse edges Z->X and Z->U.
      s.adjacency = {1, 0, 0,  0, 1, 0,  1, 1, 1};
      s.train_adjacency = {1, 0, 1,  0, 1, 1,  1, 1, 1};
      break;
    case GraphVariant::fork:
      // Z sends to X and U; U never reaches Z. X still feeds Z so the prediction sees the image.
      s.adjacency = {1, 0, 1,  0, 1, 1,  1, 0, 1};
      s.train_adjacency = s.adjacency;
      break;
    case GraphVariant::direct:
      // U bypasses Z: Z receives from X only and the head reads [Z, h_U].
      s.adjacency = {1, 0, 0,  0, 1, 0,  1, 0, 1};
      s.train_adjacency = {1, 0, 1,  0, 1, 0,  1, 0, 1};
      break;
    case GraphVariant::concat:
      // No message passing; the masks are never read.
      s.adjacency = {1, 0, 0,  0, 1, 0,  0, 0, 1};
      s.train_adjacency = s.adjacency;
      break;
  }
  s.validate();
  return s;
}

NodeEmbedder::NodeEmbedder(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng)
    : linear(name + ".linear", in, hidden, rng),
      ln_gain(name + ".ln_gain", Tensor2(1, hidden, 1.0)),
      ln_bias(name + ".ln_bias", Tensor2(1, hidden, 0.0)) {}

Var NodeEmbedder::apply(Binder& bind, const Var& x, double dropout, Mode mode, Rng& rng) {
  Var h = ad::layer_norm_rows(linear.apply(bind, x), bind(ln_gain), bind(ln_bias));
  return ad::dropout(ad::gelu(h), dropout, mode, rng);
}

void NodeEmbedder::collect(std::vector<Parameter*>& out) {
  linear.collect(out);
  out.push_back(&ln_gain);
  out.push_back(&ln_bias);
}

GraphLayer::GraphLayer(const std::string& name, std::size_t hidden, Rng& rng)
    : w_q(init_weight(name + ".w_q", hidden, hidden, rng)),
      w_k(init_weight(name + ".w_k", hidden, hidden, rng)),
      w_v(init_weight(name + ".w_v", hidden, hidden, rng)),
      w_o(init_weight(name + ".w_o", hidden, hidden, rng)) {}

void GraphLayer::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&w_q, &w_k, &w_v, &w_o}) out.push_back(p);
}

void SemConfig::validate() const {
  if (feature_dim == 0 || hidden == 0 || outputs == 0) throw ConfigError("SEM dimensions must be positive");
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden dimension " + std::to_string(hidden) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (layers == 0) throw ConfigError("at least one message-passing layer is required");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (!(sigma_unc > 0.0 && sigma_unc < 1.0)) throw ConfigError("sigma_unc must lie in (0,1)");
}

SemParams::SemParams(const SemConfig& cfg, GraphVariant variant, Rng& rng) : config(cfg) {
  cfg.validate();
  const std::size_t dh = cfg.hidden;
  embed_x = NodeEmbedder("sem.embed_x", cfg.feature_dim, dh, rng);
  embed_u = NodeEmbedder("sem.embed_u", kDemographicDim, dh, rng);
  z_init = init_bias("sem.z_init.bias", dh, dh, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) layers.emplace_back("sem.layer" + std::to_string(l), dh, rng);
  concat_proj = Linear("sem.concat_proj", 2 * dh, dh, rng);
  decoder = Mlp2("sem.decoder", dh, dh, kDemographicDim, rng);
  imputer = Mlp2("sem.imputer", cfg.feature_dim, dh, kDemographicDim, rng);
  head = Linear("sem.head", variant == GraphVariant::direct ? 2 * dh : dh, cfg.outputs, rng);
}

void SemParams::collect(GraphVariant variant, std::vector<Parameter*>& out) {
  embed_x.collect(out);
  embed_u.collect(out);
  if (variant == GraphVariant::concat) {
    concat_proj.collect(out);
  } else {
    out.push_back(&z_init);
    for (GraphLayer& l : layers) l.collect(out);
  }
  decoder.collect(out);
  imputer.collect(out);
  head.collect(out);
}

NodeStates embed_nodes(Binder& bind, SemParams& params, const Var& bag_repr, const Var& u_final, Mode mode,
                       Rng& rng) {
  if (bag_repr.rows() != 1 || bag_repr.cols() != params.config.feature_dim) {
    throw DimensionError("embed_nodes: bag representation must be 1x" + std::to_string(params.config.feature_dim));
  }
  if (u_final.rows() != 1 || u_final.cols() != kDemographicDim) {
    throw DimensionError("embed_nodes: demographic input must be 1x8");
  }
  NodeStates n;
  n.x = params.embed_x.apply(bind, bag_repr, params.config.dropout, mode, rng);
  n.u = params.embed_u.apply(bind, u_final, params.config.dropout, mode, rng);
  n.z = bind(params.z_init);
  return n;
}

Var graph_pass(Binder& bind, SemParams& params, const CausalGraphSpec& spec, const Var& nodes, Mode mode,
               GraphTrace* trace) {
  if (nodes.rows() != 3) throw ContractError("graph_pass expects exactly three nodes");
  const std::size_t dh = params.config.hidden;
  const std::size_t nh = params.config.heads;
  const std::size_t dk = dh / nh;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const Adjacency& mask = spec.mask(mode);
  Var h = nodes;
  for (GraphLayer& layer : params.layers) {
    Var q = ad::matmul(h, bind(layer.w_q));
    Var k = ad::matmul(h, bind(layer.w_k));
    Var v = ad::matmul(h, bind(layer.w_v));
    std::vector<Var> heads;
    std::vector<Tensor2> layer_trace;
    for (std::size_t head = 0; head < nh; ++head) {
      Var qh = ad::slice_cols(q, head * dk, dk);
      Var kh = ad::slice_cols(k, head * dk, dk);
      Var vh = ad::slice_cols(v, head * dk, dk);
      Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
      Var alpha = ad::masked_softmax_rows(scores, mask);
      const Tensor2& a = alpha.value();
      for (std::size_t e = 0; e < 9; ++e) {
        if (mask[e] == 0 && a[e] != 0.0) throw ContractError("graph_pass: attention leaked through a masked edge");
      }
      if (trace != nullptr) layer_trace.push_back(a);
      heads.push_back(ad::matmul(alpha, vh));
    }
    if (trace != nullptr) trace->attention.push_back(std::move(layer_trace));
    h = ad::add(h, ad::matmul(ad::concat_cols(heads), bind(layer.w_o)));
  }
  return h;
}

SemOutput disease_representation(Binder& bind, SemParams& params, const CausalGraphSpec& spec,
                                 const Var& bag_repr, const Var& u_final, Mode mode, Rng& rng,
                                 GraphTrace* trace) {
  SemOutput out;
  const std::size_t dh = params.config.hidden;
  if (!spec.message_passing()) {
    out.h_x = params.embed_x.apply(bind, bag_repr, params.config.dropout, mode, rng);
    out.h_u = params.embed_u.apply(bind, u_final, params.config.dropout, mode, rng);
    const std::array<Var, 2> parts = {out.h_x, out.h_u};
    out.z = params.concat_proj.apply(bind, ad::concat_cols(parts));
  } else {
    NodeStates n = embed_nodes(bind, params, bag_repr, u_final, mode, rng);
    out.h_x = n.x;
    out.h_u = n.u;
    const std::array<Var, 3> rows = {n.x, n.u, n.z};
    Var updated = graph_pass(bind, params, spec, ad::concat_rows(rows), mode, trace);
    out.z = ad::slice_rows(updated, kNodeZ, 1);
  }
  if (out.z.cols() != dh) throw ContractError("disease representation has the wrong width");
  if (spec.variant == GraphVariant::direct) {
    const std::array<Var, 2> parts = {out.z, out.h_u};
    out.head_input = ad::concat_cols(parts);
  } else {
    out.head_input = out.z;
  }
  return out;
}

Var impute_demographics(Binder& bind, SemParams& params, const Var& bag_repr, const DemographicVector& u) {
  Tape& tape = bind.tape();
  if (u.fully_observed()) return tape.constant(Tensor2::row(u.values));
  Var predicted = ad::sigmoid(params.imputer.apply(bind, bag_repr));
  if (u.fully_missing()) return ad::scale(predicted, params.config.sigma_unc);
  Tensor2 kept(1, kDemographicDim), fill(1, kDemographicDim);
  for (std::size_t i = 0; i < kDemographicDim; ++i) {
    const bool obs = u.slot_observed(i);
    kept[i] = obs ? u.values[i] : 0.0;
    fill[i] = obs ? 0.0 : 1.0;
  }
  return ad::add(tape.constant(std::move(kept)), ad::hadamard(tape.constant(std::move(fill)), predicted));
}

Var decode_demographics(Binder& bind, SemParams& params, const Var& z) { return params.decoder.apply(bind, z); }

Var demo_loss(const Var& pred, const DemographicVector& u) {
  Tape& tape = *pred.tape();
  if (pred.rows() != 1 || pred.cols() != kDemographicDim) throw DimensionError("demo_loss: prediction must be 1x8");
  if (u.fully_missing()) return tape.constant(Tensor2(1, 1, 0.0));
  Var diff = ad::sub(pred, tape.constant(Tensor2::row(u.values)));
  if (!u.fully_observed()) {
    Tensor2 m(1, kDemographicDim);
    for (std::size_t i = 0; i < kDemographicDim; ++i) m[i] = u.slot_observed(i) ? 1.0 : 0.0;
    diff = ad::hadamard(diff, tape.constant(std::move(m)));
  }
  return ad::sum_squares(diff);
}

double demo_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("demo_loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s;
}

Var bag_logits(Binder& bind, SemParams& params, const SemOutput& sem) {
  return params.head.apply(bind, sem.head_input);
}

Tensor2 intervene(SemParams& params, const CausalGraphSpec& spec, const Tensor2& bag_repr,
                  std::span<const double> u_do) {
  if (u_do.size() != kDemographicDim) throw DimensionError("intervene: demographic value must have 8 slots");
  Tape tape;
  Binder bind(tape, false);
  Rng unused(0);
  Var b = tape.constant(bag_repr);
  Var u = tape.constant(Tensor2::row(u_do));
  return disease_representation(bind, params, spec, b, u, Mode::eval, unused).z.value();
}

}  // namespace cmil
