#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmil/bag.hpp"
#include "cmil/model.hpp"

namespace cmil {

// Mann-Whitney AUC with average ranks (ties count one half). nullopt when only one class is present.
std::optional<double> auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive);
// Macro one-vs-rest AUC over the classes for which it is computable. probs is n rows of C values.
std::optional<double> auc_macro(std::span<const std::vector<double>> probs, std::span<const std::size_t> labels,
                                std::size_t classes);

double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> pred);
// Positive-class (class 1) F1 for two classes, macro F1 otherwise. A class with no true and no
// predicted members scores 0.
double f1_score(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t classes);

struct GroupAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Population standard deviation of the accuracies. Groups without samples are excluded.
std::optional<double> gdv(std::span<const GroupAccuracy> groups);
double gdv(std::span<const double> accuracies);

// Harrell's C over pairs with t_i < t_j and event_i; risk ties count one half.
// nullopt when there is no comparable pair.
std::optional<double> c_index(std::span<const double> risks, std::span<const double> times,
                              std::span<const std::uint8_t> events);

// ||Z(X, U) - Z(X, 0)|| with U the model's (possibly imputed) demographic input for the bag.
double attribution_total(Model& model, const FeatureBag& bag);
// ||Z(X, U) - Z(X, U_-j)|| where block j of U is replaced by the training-cohort mean.
double attribution_factor(Model& model, const FeatureBag& bag, Attribute factor);
double attribution_factor(Model& model, const FeatureBag& bag, const std::string& factor);

struct PredictionRecord {
  std::string bag_id;
  std::size_t truth = 0;
  std::optional<std::size_t> pred;  // empty in survival mode
  std::vector<double> probs;
  DemographicVector demographics;
  std::optional<double> risk;
  std::optional<SurvivalRecord> survival;
};

PredictionRecord make_record(const FeatureBag& bag, const BagPrediction& p, bool survival);

struct AttributionSummary {
  double mean_total = 0.0;
  std::map<std::string, double> mean_factor;
};

struct EvalReport {
  std::string split;
  std::size_t bags = 0;
  std::optional<double> acc, auc, f1;
  // Per attribute: GDV over positive-sample group accuracy (all samples when C > 2) and over all samples.
  std::map<std::string, std::optional<double>> gdv;
  std::map<std::string, std::optional<double>> gdv_all_samples;
  std::map<std::string, std::vector<GroupAccuracy>> group_accuracy;
  std::map<std::string, std::vector<GroupAccuracy>> group_accuracy_all_samples;
  std::optional<AttributionSummary> attribution;
  std::optional<double> c_index;
};

std::vector<GroupAccuracy> per_group_accuracy(std::span<const PredictionRecord> records, Attribute a,
                                              bool positive_only);

// `model` and `bags` (parallel to records) enable the attribution summary; pass nullptr to skip it.
EvalReport assemble_report(std::span<const PredictionRecord> records, std::size_t classes, Model* model = nullptr,
                           std::span<const FeatureBag* const> bags = {});

nlohmann::json report_to_json(const EvalReport& r);

// bag_id,true,pred,prob_0..prob_{C-1},gender,race,age_bin,risk,time,event
// Unobserved or absent values are empty fields. Doubles use 17 significant digits.
void write_predictions_csv(std::span<const PredictionRecord> records, std::size_t classes,
                           const std::filesystem::path& path);
std::string predictions_csv(std::span<const PredictionRecord> records, std::size_t classes);

}  // namespace cmil
