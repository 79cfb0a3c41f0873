#include "cmil/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cmil/errors.hpp"

namespace cmil {

std::optional<double> auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

std::optional<double> auc_macro(std::span<const std::vector<double>> probs, std::span<const std::size_t> labels,
                                std::size_t classes) {
  if (probs.size() != labels.size()) throw DimensionError("auc: probabilities and labels differ in length");
  if (classes == 2) {
    std::vector<double> s(probs.size());
    std::vector<std::uint8_t> y(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i].at(1);
      y[i] = labels[i] == 1;
    }
    return auc_binary(s, y);
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> s(probs.size());
    std::vector<std::uint8_t> y(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      s[i] = probs[i].at(c);
      y[i] = labels[i] == c;
    }
    if (auto a = auc_binary(s, y)) {
      total += *a;
      ++counted;
    }
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<double>(counted);
}

double accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  if (truth.size() != pred.size()) throw DimensionError("accuracy: length mismatch");
  if (truth.empty()) throw DomainError("accuracy of an empty prediction set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

namespace {

double class_f1(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t c) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == c && truth[i] == c) ++tp;
    else if (pred[i] == c) ++fp;
    else if (truth[i] == c) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

double f1_score(std::span<const std::size_t> truth, std::span<const std::size_t> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw DimensionError("f1: length mismatch");
  if (classes == 2) return class_f1(truth, pred, 1);
  double s = 0.0;
  for (std::size_t c = 0; c < classes; ++c) s += class_f1(truth, pred, c);
  return s / static_cast<double>(classes);
}

std::optional<double> gdv(std::span<const GroupAccuracy> groups) {
  std::vector<double> acc;
  for (const GroupAccuracy& g : groups)
    if (g.total > 0) acc.push_back(g.accuracy());
  if (acc.empty()) return std::nullopt;
  return gdv(acc);
}

double gdv(std::span<const double> accuracies) {
  if (accuracies.empty()) throw DomainError("gdv needs at least one group");
  const double n = static_cast<double>(accuracies.size());
  double mean = 0.0;
  for (double a : accuracies) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : accuracies) var += (a - mean) * (a - mean);
  return std::sqrt(var / n);
}

namespace {

// Counts of inserted values by rank.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted values with rank < r.
  std::size_t below(std::size_t r) const {
    std::size_t s = 0;
    for (std::size_t i = r; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::size_t> tree_;
};

}  // namespace

std::optional<double> c_index(std::span<const double> risks, std::span<const double> times,
                              std::span<const std::uint8_t> events) {
  const std::size_t n = risks.size();
  if (times.size() != n || events.size() != n) throw DimensionError("c_index: length mismatch");
  std::vector<double> sorted_risks(risks.begin(), risks.end());
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
                                    sorted_risks.begin());
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

  // Sweep from the latest time; the tree holds every subject with a strictly later time.
  Fenwick tree(sorted_risks.size());
  std::size_t inserted = 0;
  double concordant = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && times[order[j]] == times[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t s = order[k];
      if (!events[s]) continue;
      const std::size_t r = rank_of(risks[s]);
      const std::size_t lower = tree.below(r);
      const std::size_t tied = tree.below(r + 1) - lower;
      concordant += static_cast<double>(lower) + 0.5 * static_cast<double>(tied);
      comparable += inserted;
    }
    for (std::size_t k = i; k < j; ++k) tree.add(rank_of(risks[order[k]]));
    inserted += j - i;
    i = j;
  }
  if (comparable == 0) return std::nullopt;
  return concordant / static_cast<double>(comparable);
}

namespace {

double l2_distance(const Tensor2& a, const Tensor2& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

double attribution_total(Model& model, const FeatureBag& bag) {
  const BagPrediction p = predict_bag(model, bag);
  const std::array<double, kDemographicDim> zero{};
  const Tensor2 z = intervene(model.sem, model.graph, p.bag_repr, p.u_final);
  const Tensor2 z0 = intervene(model.sem, model.graph, p.bag_repr, zero);
  return l2_distance(z, z0);
}

double attribution_factor(Model& model, const FeatureBag& bag, Attribute factor) {
  const BagPrediction p = predict_bag(model, bag);
  std::array<double, kDemographicDim> u_do = p.u_final;
  const SlotRange r = attribute_slots(factor);
  for (std::size_t i = r.begin; i < r.begin + r.count; ++i) u_do[i] = model.neutral_demographics[i];
  const Tensor2 z = intervene(model.sem, model.graph, p.bag_repr, p.u_final);
  const Tensor2 z_do = intervene(model.sem, model.graph, p.bag_repr, u_do);
  return l2_distance(z, z_do);
}

double attribution_factor(Model& model, const FeatureBag& bag, const std::string& factor) {
  return attribution_factor(model, bag, parse_attribute(factor));
}

PredictionRecord make_record(const FeatureBag& bag, const BagPrediction& p, bool survival) {
  PredictionRecord r;
  r.bag_id = bag.bag_id;
  r.truth = bag.label;
  r.demographics = bag.demographics;
  if (survival) {
    r.risk = p.risk;
    r.survival = bag.survival;
  } else {
    r.pred = p.label;
    r.probs = p.probs;
  }
  return r;
}

std::vector<GroupAccuracy> per_group_accuracy(std::span<const PredictionRecord> records, Attribute a,
                                              bool positive_only) {
  std::vector<GroupAccuracy> groups(attribute_group_count(a));
  for (const PredictionRecord& r : records) {
    if (!r.pred) continue;
    if (positive_only && r.truth != 1) continue;
    const auto g = r.demographics.group(a);
    if (!g) continue;
    ++groups[*g].total;
    groups[*g].correct += *r.pred == r.truth;
  }
  return groups;
}

EvalReport assemble_report(std::span<const PredictionRecord> records, std::size_t classes, Model* model,
                           std::span<const FeatureBag* const> bags) {
  if (records.empty()) throw DomainError("cannot assemble a report from no predictions");
  EvalReport rep;
  rep.bags = records.size();
  const bool classified = records.front().pred.has_value();
  if (classified) {
    std::vector<std::size_t> truth, pred;
    std::vector<std::vector<double>> probs;
    for (const PredictionRecord& r : records) {
      truth.push_back(r.truth);
      pred.push_back(*r.pred);
      probs.push_back(r.probs);
    }
    rep.acc = accuracy(truth, pred);
    rep.f1 = f1_score(truth, pred, classes);
    rep.auc = auc_macro(probs, truth, classes);
    for (Attribute a : kAttributes) {
      const std::string name = attribute_name(a);
      auto pos = per_group_accuracy(records, a, classes == 2);
      auto all = per_group_accuracy(records, a, false);
      rep.gdv[name] = gdv(pos);
      rep.gdv_all_samples[name] = gdv(all);
      rep.group_accuracy[name] = std::move(pos);
      rep.group_accuracy_all_samples[name] = std::move(all);
    }
  }
  std::vector<double> risks, times;
  std::vector<std::uint8_t> events;
  for (const PredictionRecord& r : records) {
    if (!r.risk || !r.survival) continue;
    risks.push_back(*r.risk);
    times.push_back(r.survival->time);
    events.push_back(r.survival->event);
  }
  if (!risks.empty()) rep.c_index = c_index(risks, times, events);

  if (model != nullptr && !bags.empty()) {
    if (bags.size() != records.size()) throw DimensionError("report: one bag per prediction record");
    AttributionSummary s;
    for (const FeatureBag* b : bags) s.mean_total += attribution_total(*model, *b);
    s.mean_total /= static_cast<double>(bags.size());
    for (Attribute a : kAttributes) {
      double m = 0.0;
      for (const FeatureBag* b : bags) m += attribution_factor(*model, *b, a);
      s.mean_factor[attribute_name(a)] = m / static_cast<double>(bags.size());
    }
    rep.attribution = std::move(s);
  }
  return rep;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json groups_json(const std::vector<GroupAccuracy>& groups) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.push_back({{"group", g},
                   {"correct", groups[g].correct},
                   {"total", groups[g].total},
                   {"accuracy", groups[g].total ? nlohmann::json(groups[g].accuracy()) : nlohmann::json(nullptr)}});
  }
  return out;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["bags"] = r.bags;
  j["acc"] = opt(r.acc);
  j["auc"] = opt(r.auc);
  j["f1"] = opt(r.f1);
  j["c_index"] = opt(r.c_index);
  nlohmann::json gd = nlohmann::json::object(), gda = nlohmann::json::object();
  nlohmann::json ga = nlohmann::json::object(), gaa = nlohmann::json::object();
  for (const auto& [k, v] : r.gdv) gd[k] = opt(v);
  for (const auto& [k, v] : r.gdv_all_samples) gda[k] = opt(v);
  for (const auto& [k, v] : r.group_accuracy) ga[k] = groups_json(v);
  for (const auto& [k, v] : r.group_accuracy_all_samples) gaa[k] = groups_json(v);
  j["gdv"] = gd;
  j["gdv_all_samples"] = gda;
  j["group_accuracy"] = ga;
  j["group_accuracy_all_samples"] = gaa;
  if (r.attribution) {
    j["attribution"] = {{"mean_total", r.attribution->mean_total}, {"mean_factor", r.attribution->mean_factor}};
  } else {
    j["attribution"] = nullptr;
  }
  return j;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string predictions_csv(std::span<const PredictionRecord> records, std::size_t classes) {
  std::ostringstream out;
  out << "bag_id,true,pred";
  for (std::size_t c = 0; c < classes; ++c) out << ",prob_" << c;
  out << ",gender,race,age_bin,risk,time,event\n";
  for (const PredictionRecord& r : records) {
    out << r.bag_id << ',' << r.truth << ',';
    if (r.pred) out << *r.pred;
    for (std::size_t c = 0; c < classes; ++c) {
      out << ',';
      if (c < r.probs.size()) out << fmt(r.probs[c]);
    }
    for (Attribute a : kAttributes) {
      out << ',';
      if (auto g = r.demographics.group(a)) out << *g;
    }
    out << ',';
    if (r.risk) out << fmt(*r.risk);
    out << ',';
    if (r.survival) out << fmt(r.survival->time);
    out << ',';
    if (r.survival) out << (r.survival->event ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

void write_predictions_csv(std::span<const PredictionRecord> records, std::size_t classes,
                           const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << predictions_csv(records, classes);
}

}  // namespace cmil
