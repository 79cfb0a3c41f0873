#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "cmil/bag.hpp"
#include "cmil/evalmetrics.hpp"
#include "cmil/model.hpp"
#include "cmil/objectives.hpp"
#include "cmil/optim.hpp"

namespace cmil {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t accumulation_steps = 4;
  std::size_t patience = 10;
  double dropout = 0.3;
  std::uint64_t seed = 0;
  LossWeights weights;
  GraphVariant variant = GraphVariant::collider;
  std::size_t hidden_dim = 256;
  std::size_t query_dim = 128;
  std::size_t heads = 4;
  std::size_t layers = 1;
  double k_frac = kDefaultTopKFraction;
  double sigma_unc = 0.5;
  double lr = 1e-4;
  double weight_decay = 1e-3;
  double eta_min = 1e-6;

  void validate() const;
  ModelConfig model_config(const Cohort& cohort) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Overlays the keys of `j` onto `c`. Unknown keys and wrongly typed values are ConfigErrors.
void apply_json(const nlohmann::json& j, TrainConfig& c);

struct LossParts {
  double cls = 0.0;
  double causal = 0.0;
  double fair = 0.0;
  double demo = 0.0;
  double total = 0.0;
};

struct TrainLogRecord {
  std::size_t epoch = 0;  // 1-based
  LossParts train;        // means over the epoch's windows
  LossParts val;
  std::optional<double> val_acc, val_auc, val_f1, val_c_index;
  double val_metric = 0.0;  // the early-stopping criterion
  double lr = 0.0;
  bool improved = false;  // strictly better val metric; resets patience
  bool kept = false;      // this epoch's weights became the retained checkpoint
  double seconds = 0.0;  // wall-clock; kept out of to_json so logs are reproducible
};

nlohmann::json to_json(const TrainLogRecord& r);

// Averages the gradients accumulated over one window and applies a single optimizer step.
class GradientWindow {
 public:
  explicit GradientWindow(std::span<Parameter* const> params) : params_(params.begin(), params.end()) {}
  void add_item() { ++items_; }
  std::size_t items() const { return items_; }
  // No-op on an empty window. Gradients are zeroed afterwards.
  bool step(OptimizerState& state, double lr);

 private:
  std::vector<Parameter*> params_;
  std::size_t items_ = 0;
};

struct TrainResult {
  Model best;
  std::vector<TrainLogRecord> log;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
};

// Training objective of one accumulation window:
//   sum_b (L_cls,b + lambda_causal L_causal,b) + n lambda_fair L_fair(window)   (classification)
//   sum_b (lambda_ins L_ins,b + lambda_causal L_causal,b) + n Cox(window)       (survival)
// Dividing its gradient by n gives the window-mean gradient used for one optimizer step.
Var window_objective(Binder& bind, Model& model, std::span<const FeatureBag* const> bags, const LossWeights& w,
                     Mode mode, Rng& rng, LossParts* parts = nullptr);

using EpochCallback = std::function<void(const TrainLogRecord&)>;

TrainResult train(const Cohort& cohort, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Eval-mode predictions and report (with attribution summary) for one split.
struct Evaluation {
  std::vector<PredictionRecord> records;
  std::vector<std::vector<double>> attention;  // per-bag instance weights
  EvalReport report;
};
Evaluation evaluate(Model& model, const Cohort& cohort, Split split, bool with_attribution = true);

}  // namespace cmil
