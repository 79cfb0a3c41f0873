#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmil/bag.hpp"
#include "cmil/milnet.hpp"
#include "cmil/scmgraph.hpp"

namespace cmil {

struct ModelConfig {
  std::size_t feature_dim = 512;  // d
  std::size_t classes = 2;        // bag label classes (instance classifier width)
  bool survival = false;          // head emits one risk score instead of class logits
  std::size_t hidden = 256;       // d_h
  std::size_t query_dim = 128;    // d_q
  std::size_t heads = 4;          // n_h
  std::size_t layers = 1;         // L
  double dropout = 0.3;
  double k_frac = kDefaultTopKFraction;
  double sigma_unc = 0.5;
  GraphVariant variant = GraphVariant::collider;

  std::size_t head_outputs() const { return survival ? 1 : classes; }
  SemConfig sem_config() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// All learnable state plus the fixed neutral demographic values used for factor attribution.
struct Model {
  ModelConfig config;
  CausalGraphSpec graph;
  InstanceBranchParams instance;
  PoolingParams pooling;
  SemParams sem;
  std::array<double, kDemographicDim> neutral_demographics{};

  static Model init(const ModelConfig& config, std::uint64_t seed);
  // Parameters read by the configured variant, in a fixed order.
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
};

struct BagForward {
  Var features;       // K×d
  Var inst_logits;    // K×C
  std::size_t critical = 0;
  std::vector<double> alpha;
  Var bag_repr;       // 1×d
  Var u_final;        // 1×8
  SemOutput sem;
  Var logits;         // 1×outputs
};

BagForward forward_bag(Binder& bind, Model& model, const FeatureBag& bag, Mode mode, Rng& rng,
                       GraphTrace* trace = nullptr);

struct BagPrediction {
  std::vector<double> probs;  // class probabilities (empty in survival mode)
  std::size_t label = 0;
  double risk = 0.0;          // survival risk score, or positive-class logit margin
  std::vector<double> alpha;
  Tensor2 bag_repr;
  std::array<double, kDemographicDim> u_final{};
  Tensor2 z;
};

// Deterministic eval-mode forward without gradient tracking.
BagPrediction predict_bag(Model& model, const FeatureBag& bag);

// Block-mean demographic values over bags whose block is observed.
std::array<double, kDemographicDim> neutral_demographics_of(const std::vector<const FeatureBag*>& bags);

// Versioned binary checkpoint:
//   "MCKP" | u32 version | u8 variant | u32 n | n bytes JSON hyperparameters | u32 CRC32(header)
//   | u32 block count | per block: u16 name length, name, u32 rows, u32 cols, rows*cols f64, u32 CRC32(block)
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(Model& model, const nlohmann::json& extra = nlohmann::json::object());
struct LoadedCheckpoint {
  Model model;
  nlohmann::json hyperparameters;
};
LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(Model& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Loads into an existing model; rejects a different variant or any shape mismatch.
void load_checkpoint_into(Model& model, const std::filesystem::path& path);

}  // namespace cmil
