#pragma once

// Brute-force references used by the unit tests and the acceptance run. Each one follows the
// textbook definition directly (pair enumeration, explicit group means) in extended precision.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cmil/bag.hpp"

namespace oracle {

inline double auc_pairs(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  long double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0L : (s[i] == s[j] ? 0.5L : 0.0L);
    }
  return static_cast<double>(wins / pairs);
}

inline double cindex_pairs(const std::vector<double>& r, const std::vector<double>& t,
                           const std::vector<std::uint8_t>& e) {
  long double c = 0, pairs = 0;
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (!e[i] || !(t[i] < t[j])) continue;
      pairs += 1;
      c += r[i] > r[j] ? 1.0L : (r[i] == r[j] ? 0.5L : 0.0L);
    }
  return static_cast<double>(c / pairs);
}

inline bool has_comparable_pair(const std::vector<double>& t, const std::vector<std::uint8_t>& e) {
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t.size(); ++j)
      if (e[i] && t[i] < t[j]) return true;
  return false;
}

inline double pop_std(const std::vector<double>& v) {
  long double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return static_cast<double>(std::sqrt(s / v.size()));
}

// Per attribute, every unordered pair of nonempty groups adds the squared gap of group-mean
// probabilities: on class 1 for two classes, averaged over classes otherwise.
inline double fairness(const std::vector<std::vector<double>>& probs, const std::vector<cmil::DemographicVector>& demo) {
  const std::size_t classes = probs[0].size();
  long double total = 0;
  for (cmil::Attribute a : cmil::kAttributes) {
    const std::size_t groups = cmil::attribute_group_count(a);
    std::vector<std::vector<long double>> mean(groups, std::vector<long double>(classes, 0.0L));
    std::vector<std::size_t> n(groups, 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const auto g = demo[i].group(a);
      if (!g) continue;
      ++n[*g];
      for (std::size_t c = 0; c < classes; ++c) mean[*g][c] += probs[i][c];
    }
    for (std::size_t g = 0; g < groups; ++g)
      for (auto& v : mean[g]) v /= n[g] ? n[g] : 1;
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t h = g + 1; h < groups; ++h) {
        if (!n[g] || !n[h]) continue;
        if (classes == 2) {
          total += (mean[g][1] - mean[h][1]) * (mean[g][1] - mean[h][1]);
        } else {
          long double s = 0;
          for (std::size_t c = 0; c < classes; ++c) s += (mean[g][c] - mean[h][c]) * (mean[g][c] - mean[h][c]);
          total += s / classes;
        }
      }
  }
  return static_cast<double>(total);
}

// Negative log partial likelihood, Breslow risk sets {j : t_j >= t_i}.
inline double cox_nll(const std::vector<double>& r, const std::vector<double>& t, const std::vector<std::uint8_t>& e) {
  long double nll = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!e[i]) continue;
    long double s = 0;
    for (std::size_t j = 0; j < r.size(); ++j)
      if (t[j] >= t[i]) s += std::exp(static_cast<long double>(r[j]));
    nll -= r[i] - std::log(s);
  }
  return static_cast<double>(nll);
}

}  // namespace oracle
