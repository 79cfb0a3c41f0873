#pragma once

#include <cstdint>
#include <vector>

#include "cmil/bag.hpp"
#include "cmil/ops.hpp"

namespace cmil {

/// Parameters of the synthetic cohort. Every bag draws demographics u from the marginals and a
/// disease state s uniformly over classes; instance features are
///   x ~ Normal(mu_s + gamma * M_u, sigma^2 I)   for a rho-fraction of instances when s != 0,
///   x ~ Normal(mu_0 + gamma * M_u, sigma^2 I)   otherwise,
/// where mu_s and the per-group directions summed into M_u are seeded unit vectors.
struct ScmConfig {
  std::uint64_t seed = 0;
  std::size_t n_bags = 200;
  std::size_t instances = 32;  // K
  std::size_t dim = 64;        // d
  std::size_t classes = 2;     // C
  double positive_fraction = 0.25;  // rho in (0,1]
  double confounding = 0.0;         // gamma >= 0
  double noise = 0.5;               // sigma
  std::vector<double> gender_probs = {0.42, 0.58};
  std::vector<double> race_probs = {0.78, 0.09, 0.07, 0.06, 0.0};
  std::vector<double> age_bin_probs = {0.15, 0.20, 0.25, 0.25, 0.15};
  // Survival outcome: T ~ Exp(base_hazard * exp(hazard_log_ratio * s)), censored by Exp(censoring_rate).
  bool survival = false;
  double base_hazard = 0.1;
  double hazard_log_ratio = 2.0;
  double censoring_rate = 0.02;

  void validate() const;
};

/// Ground-truth directions drawn from the seed (exposed for diagnostics and tests).
struct ScmDirections {
  std::vector<std::vector<double>> class_means;   // mu_s, one per class
  std::vector<std::vector<double>> gender_dirs;   // per gender group
  std::vector<std::vector<double>> race_dirs;     // per race group
  std::vector<std::vector<double>> age_dirs;      // per age bin
};

ScmDirections scm_directions(const ScmConfig& cfg);
Cohort generate_cohort(const ScmConfig& cfg);

enum class DropPolicy { all_blocks, random_blocks };

/// Masks demographic attribute blocks in a Bernoulli(fraction) subset of bags. `all_blocks` clears
/// every block of a selected bag; `random_blocks` clears a random nonempty subset of its blocks.
Cohort drop_demographics(const Cohort& cohort, double fraction, Rng& rng,
                         DropPolicy policy = DropPolicy::all_blocks);

/// Per demographic slot, the mean over feature dimensions of |corr(bag-mean feature, slot value)|
/// across bags. Slots with zero variance report 0.
std::vector<double> demographic_feature_correlation(const Cohort& cohort);

}  // namespace cmil
