#pragma once

// Structural equation model over the three causal nodes {X (image), U (demographics), Z (disease)}.
// Node states are rows of a 3×d_h matrix in that order. Row i of an adjacency matrix lists the
// senders node i attends to.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cmil/bag.hpp"
#include "cmil/layers.hpp"

namespace cmil {

enum class GraphVariant : std::uint8_t { collider = 0, fork = 1, direct = 2, concat = 3 };
const char* variant_name(GraphVariant v);
GraphVariant parse_variant(const std::string& name);
inline constexpr std::array<GraphVariant, 4> kAllVariants = {GraphVariant::collider, GraphVariant::fork,
                                                             GraphVariant::direct, GraphVariant::concat};

inline constexpr std::size_t kNodeX = 0;
inline constexpr std::size_t kNodeU = 1;
inline constexpr std::size_t kNodeZ = 2;

using Adjacency = std::array<std::uint8_t, 9>;

struct CausalGraphSpec {
  GraphVariant variant = GraphVariant::collider;
  Adjacency adjacency{};        // used at inference
  Adjacency train_adjacency{};  // adjacency plus reverse edges for gradient flow
  bool message_passing() const { return variant != GraphVariant::concat; }
  const Adjacency& mask(Mode mode) const { return mode == Mode::train ? train_adjacency : adjacency; }
  void validate() const;
};

CausalGraphSpec build_adjacency(GraphVariant variant);

struct NodeEmbedder {
  Linear linear;
  Parameter ln_gain;
  Parameter ln_bias;

  NodeEmbedder() = default;
  NodeEmbedder(const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  // Dropout(GELU(LayerNorm(Linear(x))))
  Var apply(Binder& bind, const Var& x, double dropout, Mode mode, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

// One masked multi-head attention layer. Head h uses columns [h*d_k, (h+1)*d_k) of w_q, w_k, w_v;
// head outputs are concatenated and merged by w_o before the residual add.
struct GraphLayer {
  Parameter w_q, w_k, w_v, w_o;

  GraphLayer() = default;
  GraphLayer(const std::string& name, std::size_t hidden, Rng& rng);
  void collect(std::vector<Parameter*>& out);
};

struct SemConfig {
  std::size_t feature_dim = 512;  // d
  std::size_t hidden = 256;       // d_h
  std::size_t heads = 4;          // n_h
  std::size_t layers = 1;         // L
  std::size_t outputs = 2;        // head outputs (C, or 1 for a risk score)
  double dropout = 0.3;
  double sigma_unc = 0.5;
  void validate() const;
};

struct SemParams {
  SemConfig config;
  NodeEmbedder embed_x;
  NodeEmbedder embed_u;
  Parameter z_init;  // Linear(0) reduces to its bias
  std::vector<GraphLayer> layers;
  Linear concat_proj;  // concat variant only: [h_X; h_U] -> d_h
  Mlp2 decoder;        // Z -> 8
  Mlp2 imputer;        // B -> 8, sigmoid output
  Linear head;         // d_h (or 2 d_h for the direct variant) -> outputs

  SemParams() = default;
  SemParams(const SemConfig& config, GraphVariant variant, Rng& rng);
  // Parameters the given variant actually reads.
  void collect(GraphVariant variant, std::vector<Parameter*>& out);
};

struct NodeStates {
  Var x, u, z;  // each 1×d_h
};

// Attention weights recorded by graph_pass: [layer][head] -> 3×3 row-major.
struct GraphTrace {
  std::vector<std::vector<Tensor2>> attention;
};

NodeStates embed_nodes(Binder& bind, SemParams& params, const Var& bag_repr, const Var& u_final, Mode mode,
                       Rng& rng);

// L rounds of masked attention over the 3×d_h node matrix. Train mode uses the train adjacency.
// Throws ContractError if a masked pair receives nonzero attention.
Var graph_pass(Binder& bind, SemParams& params, const CausalGraphSpec& spec, const Var& nodes, Mode mode,
               GraphTrace* trace = nullptr);

struct SemOutput {
  Var z;           // 1×d_h disease representation
  Var h_x;         // embedded image node
  Var h_u;         // embedded demographic node
  Var head_input;  // z, or [z, h_u] for the direct variant
};

SemOutput disease_representation(Binder& bind, SemParams& params, const CausalGraphSpec& spec,
                                 const Var& bag_repr, const Var& u_final, Mode mode, Rng& rng,
                                 GraphTrace* trace = nullptr);

// Fully observed: u. Fully missing: sigma_unc * impute(B). Otherwise mask*u + (1-mask)*impute(B).
Var impute_demographics(Binder& bind, SemParams& params, const Var& bag_repr, const DemographicVector& u);

Var decode_demographics(Binder& bind, SemParams& params, const Var& z);
// Squared L2 distance over the observed slots of u (all slots when fully observed).
Var demo_loss(const Var& pred, const DemographicVector& u);
double demo_loss(std::span<const double> pred, std::span<const double> target);

Var bag_logits(Binder& bind, SemParams& params, const SemOutput& sem);

// Eval-mode forward with the demographic input fixed to u_do (no imputation). Returns Z (1×d_h).
Tensor2 intervene(SemParams& params, const CausalGraphSpec& spec, const Tensor2& bag_repr,
                  std::span<const double> u_do);

}  // namespace cmil
