#include "cmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "cmil/errors.hpp"

namespace cmil {
namespace {

void check_probs(const std::vector<double>& p, std::size_t expected, const char* what) {
  if (p.size() != expected) {
    throw ConfigError(std::string(what) + " needs " + std::to_string(expected) + " probabilities");
  }
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError(std::string(what) + " has a negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(what) + " probabilities must sum to 1");
}

std::vector<double> unit_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<std::vector<double>> unit_vectors(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(unit_vector(d, rng));
  return out;
}

constexpr std::array<double, 6> kAgeBinEdges = {20, 40, 50, 60, 70, 90};

}  // namespace

void ScmConfig::validate() const {
  if (n_bags == 0) throw ConfigError("n_bags must be positive");
  if (instances == 0) throw ConfigError("instances per bag (K) must be positive");
  if (dim == 0) throw ConfigError("feature dimension must be positive");
  if (classes < 2 || classes > 65535) throw ConfigError("classes must be in [2, 65535]");
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0)) {
    throw ConfigError("positive instance fraction must lie in (0,1]");
  }
  if (!(confounding >= 0.0) || !std::isfinite(confounding)) throw ConfigError("confounding strength must be >= 0");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise scale must be >= 0");
  check_probs(gender_probs, kGenderGroups, "gender_probs");
  check_probs(race_probs, kRaceGroups, "race_probs");
  check_probs(age_bin_probs, kAgeBins, "age_bin_probs");
  if (survival) {
    if (!(base_hazard > 0.0)) throw ConfigError("base_hazard must be positive");
    if (!(censoring_rate >= 0.0)) throw ConfigError("censoring_rate must be >= 0");
  }
}

ScmDirections scm_directions(const ScmConfig& cfg) {
  Rng rng(cfg.seed);
  ScmDirections dirs;
  dirs.class_means = unit_vectors(cfg.classes, cfg.dim, rng);
  dirs.gender_dirs = unit_vectors(kGenderGroups, cfg.dim, rng);
  dirs.race_dirs = unit_vectors(kRaceGroups, cfg.dim, rng);
  dirs.age_dirs = unit_vectors(kAgeBins, cfg.dim, rng);
  return dirs;
}

Cohort generate_cohort(const ScmConfig& cfg) {
  cfg.validate();
  const ScmDirections dirs = scm_directions(cfg);
  // Bag-level draws use a stream separate from the direction draws.
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::discrete_distribution<std::size_t> gender_dist(cfg.gender_probs.begin(), cfg.gender_probs.end());
  std::discrete_distribution<std::size_t> race_dist(cfg.race_probs.begin(), cfg.race_probs.end());
  std::discrete_distribution<std::size_t> age_dist(cfg.age_bin_probs.begin(), cfg.age_bin_probs.end());
  std::uniform_int_distribution<std::size_t> class_dist(0, cfg.classes - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t d = cfg.dim;
  const std::size_t k = cfg.instances;
  const auto n_pos = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.positive_fraction * static_cast<double>(k))));

  Cohort cohort;
  cohort.class_count = cfg.classes;
  if (cfg.classes == 2) cohort.class_names = {"negative", "positive"};
  else
    for (std::size_t c = 0; c < cfg.classes; ++c) cohort.class_names.push_back("class" + std::to_string(c));

  std::vector<double> shift(d);
  std::vector<std::size_t> order(k);
  for (std::size_t b = 0; b < cfg.n_bags; ++b) {
    const std::size_t gender = gender_dist(rng);
    const std::size_t race = race_dist(rng);
    const std::size_t age_bin = age_dist(rng);
    const double age = kAgeBinEdges[age_bin] + unif(rng) * (kAgeBinEdges[age_bin + 1] - kAgeBinEdges[age_bin]);
    const std::size_t state = class_dist(rng);

    for (std::size_t j = 0; j < d; ++j) {
      shift[j] = cfg.confounding *
                 (dirs.gender_dirs[gender][j] + dirs.race_dirs[race][j] + dirs.age_dirs[age_bin][j]);
    }
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> carries_state(k, false);
    if (state != 0)
      for (std::size_t i = 0; i < n_pos; ++i) carries_state[order[i]] = true;

    FeatureBag bag;
    char id[32];
    std::snprintf(id, sizeof(id), "bag_%05zu", b);
    bag.bag_id = id;
    bag.instances = static_cast<std::uint32_t>(k);
    bag.dim = static_cast<std::uint32_t>(d);
    bag.class_count = static_cast<std::uint16_t>(cfg.classes);
    bag.label = static_cast<std::uint16_t>(state);
    bag.features.resize(k * d);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& mean = dirs.class_means[carries_state[i] ? state : 0];
      for (std::size_t j = 0; j < d; ++j) {
        bag.features[i * d + j] = static_cast<float>(mean[j] + shift[j] + cfg.noise * normal(rng));
      }
    }
    if (cfg.survival) {
      const double rate = cfg.base_hazard * std::exp(cfg.hazard_log_ratio * static_cast<double>(state));
      const double event_time = std::exponential_distribution<double>(rate)(rng);
      double censor_time = INFINITY;
      if (cfg.censoring_rate > 0.0) censor_time = std::exponential_distribution<double>(cfg.censoring_rate)(rng);
      SurvivalRecord s;
      s.event = event_time <= censor_time;
      s.time = std::max(std::min(event_time, censor_time), 1e-9);
      bag.survival = s;
    }
    bag.demographics = DemographicVector::observed(gender, race, age);
    cohort.bags.push_back(std::move(bag));
  }
  cohort.splits = auto_split(cfg.n_bags, cfg.seed ^ 0x5151'5151'5151'5151ULL);
  return cohort;
}

Cohort drop_demographics(const Cohort& cohort, double fraction, Rng& rng, DropPolicy policy) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("drop fraction must lie in [0,1]");
  Cohort out = cohort;
  std::bernoulli_distribution pick(fraction);
  std::uniform_int_distribution<int> subset(1, 7);  // nonempty subset of the three blocks
  for (FeatureBag& b : out.bags) {
    if (!pick(rng)) continue;
    if (policy == DropPolicy::all_blocks) {
      b.demographics = DemographicVector::missing();
      continue;
    }
    const int bits = subset(rng);
    for (std::size_t a = 0; a < kAttributes.size(); ++a)
      if (bits & (1 << a)) b.demographics.drop(kAttributes[a]);
  }
  return out;
}

std::vector<double> demographic_feature_correlation(const Cohort& cohort) {
  const std::size_t n = cohort.bags.size();
  const std::size_t d = cohort.feature_dim();
  std::vector<double> result(kDemographicDim, 0.0);
  if (n < 2 || d == 0) return result;
  Tensor2 means(n, d);
  for (std::size_t b = 0; b < n; ++b) {
    const FeatureBag& bag = cohort.bags[b];
    for (std::size_t i = 0; i < bag.instances; ++i)
      for (std::size_t j = 0; j < d; ++j) means(b, j) += bag.features[i * d + j];
    for (std::size_t j = 0; j < d; ++j) means(b, j) /= static_cast<double>(bag.instances);
  }
  const double dn = static_cast<double>(n);
  std::vector<double> feat_mean(d, 0.0), feat_sd(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t b = 0; b < n; ++b) feat_mean[j] += means(b, j);
    feat_mean[j] /= dn;
    for (std::size_t b = 0; b < n; ++b) feat_sd[j] += (means(b, j) - feat_mean[j]) * (means(b, j) - feat_mean[j]);
    feat_sd[j] = std::sqrt(feat_sd[j] / dn);
  }
  for (std::size_t s = 0; s < kDemographicDim; ++s) {
    double m = 0.0;
    for (const FeatureBag& bag : cohort.bags) m += bag.demographics.values[s];
    m /= dn;
    double sd = 0.0;
    for (const FeatureBag& bag : cohort.bags) sd += (bag.demographics.values[s] - m) * (bag.demographics.values[s] - m);
    sd = std::sqrt(sd / dn);
    if (sd == 0.0) continue;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (feat_sd[j] == 0.0) continue;
      double cov = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        cov += (cohort.bags[b].demographics.values[s] - m) * (means(b, j) - feat_mean[j]);
      }
      acc += std::abs(cov / dn / (sd * feat_sd[j]));
    }
    result[s] = acc / static_cast<double>(d);
  }
  return result;
}

}  // namespace cmil
