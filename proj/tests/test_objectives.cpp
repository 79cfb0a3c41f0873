#include <doctest.h>

#include <cmath>
#include <iostream>
#include <sstream>

#include "cmil/objectives.hpp"
#include "cmil/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cmil;
using testing::random_tensor;

namespace {

DemographicVector gender_only(std::size_t g) {
  auto u = DemographicVector::observed(g, 0, 30);
  u.drop(Attribute::race);
  u.drop(Attribute::age);
  return u;
}

std::vector<double> random_probs(Rng& rng, std::size_t classes) {
  return softmax_row(testing::random_vector(classes, rng));
}

}  // namespace

TEST_CASE("loss weights default to the stated values") {
  const LossWeights w;
  CHECK(w.lambda_causal == 0.1);
  CHECK(w.lambda_fair == 0.05);
  CHECK(w.lambda_ins == 0.5);
  CHECK(w.lambda_demo == 0.1);
  LossWeights bad;
  bad.lambda_fair = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("classification loss") {
  LossWeights w;
  CHECK(classification_loss(std::vector<double>{-30, 30}, 1, 0.0, w) < 1e-12);
  LossWeights no_ins = w;
  no_ins.lambda_ins = 0;
  CHECK(classification_loss(std::vector<double>{0.3, -1.2}, 0, 7.0, no_ins) ==
        cross_entropy(std::vector<double>{0.3, -1.2}, 0));
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto logits = testing::random_vector(3, rng);
    const double inst = testing::uniform(rng, 0, 2);
    const std::size_t y = testing::index(rng, 3);
    long double z = 0;
    for (double l : logits) z += std::exp(static_cast<long double>(l));
    const double oracle = static_cast<double>(-(logits[y] - std::log(z))) + 0.5 * inst;
    CHECK(classification_loss(logits, y, inst, w) == doctest::Approx(oracle).epsilon(1e-13));
    Tape t;
    Var v = classification_loss(t.constant(Tensor2::row(logits)), y, t.constant(Tensor2(1, 1, inst)), w);
    CHECK(v.scalar() == doctest::Approx(oracle).epsilon(1e-13));
  }
}

TEST_CASE("causal loss") {
  LossWeights w;
  const std::vector<double> z = {0.5, -1, 2};
  CHECK(causal_loss(z, z, 0.0, w) == 0.0);
  LossWeights nodemo = w;
  nodemo.lambda_demo = 0;
  CHECK(causal_loss(std::vector<double>{1, 0, 0}, std::vector<double>{0, 0, 0}, 5.0, nodemo) == 1.0);
  Rng rng(2);
  const auto a = testing::random_vector(5, rng), b = testing::random_vector(5, rng);
  double sq = 0;
  for (int i = 0; i < 5; ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(causal_loss(a, b, 0.7, w) == doctest::Approx(sq + 0.07).epsilon(1e-14));
  Tape t;
  Var v = causal_loss(t.constant(Tensor2::row(a)), t.constant(Tensor2::row(b)), t.constant(Tensor2(1, 1, 0.7)), w);
  CHECK(v.scalar() == doctest::Approx(sq + 0.07).epsilon(1e-14));
  CHECK_THROWS_AS(causal_loss(a, std::vector<double>(4), 0.0, w), ContractError);
  CHECK_THROWS_AS(causal_loss(t.constant(Tensor2(1, 3)), t.constant(Tensor2(1, 4)), t.constant(Tensor2(1, 1)), w),
                  ContractError);
}

TEST_CASE("fairness loss examples") {
  std::vector<std::vector<double>> p = {{0.2, 0.8}, {0.4, 0.6}};
  std::vector<DemographicVector> d = {gender_only(0), gender_only(1)};
  CHECK(fairness_loss(p, d) == doctest::Approx(0.04).epsilon(1e-12));

  std::vector<std::vector<double>> eq = {{0.3, 0.7}, {0.3, 0.7}};
  CHECK(fairness_loss(eq, d) == 0.0);

  std::vector<DemographicVector> same = {gender_only(1), gender_only(1)};
  CHECK(fairness_loss(p, same) == 0.0);

  std::vector<DemographicVector> none = {DemographicVector::missing(), DemographicVector::missing()};
  std::ostringstream captured;
  auto* old = std::clog.rdbuf(captured.rdbuf());
  const double empty = fairness_loss(p, none);
  std::clog.rdbuf(old);
  CHECK(empty == 0.0);
  CHECK(captured.str().find("warning") != std::string::npos);
}

TEST_CASE("fairness loss matches the pairwise oracle, taped and untaped") {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + testing::index(rng, 10), classes = 2 + testing::index(rng, 2);
    std::vector<std::vector<double>> p;
    std::vector<DemographicVector> d;
    Tape t;
    BatchFairnessBuffer buf;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(random_probs(rng, classes));
      auto u = testing::random_demographics(rng);
      if (testing::uniform(rng, 0, 1) < 0.3) u.drop(kAttributes[testing::index(rng, 3)]);
      d.push_back(u);
      buf.add(t.constant(Tensor2::row(p.back())), u);
    }
    const double oracle = oracle::fairness(p, d);
    CHECK(std::abs(fairness_loss(p, d) - oracle) < 1e-12);
    CHECK(std::abs(buf.loss(t).scalar() - oracle) < 1e-12);
    CHECK(oracle >= 0.0);

    // Duplicating every sample leaves group means, hence the penalty, unchanged.
    auto p2 = p;
    auto d2 = d;
    p2.insert(p2.end(), p.begin(), p.end());
    d2.insert(d2.end(), d.begin(), d.end());
    CHECK(std::abs(fairness_loss(p2, d2) - oracle) < 1e-12);

    // Swapping the two gender labels is a relabeling.
    auto d3 = d;
    for (auto& u : d3)
      if (u.attribute_observed(Attribute::gender)) std::swap(u.values[0], u.values[1]);
    CHECK(std::abs(fairness_loss(p, d3) - oracle) < 1e-12);
  }
}

TEST_CASE("fairness loss gradient") {
  Rng rng(4);
  std::vector<Parameter> logits;
  std::vector<DemographicVector> d;
  for (int i = 0; i < 6; ++i) {
    logits.emplace_back("l" + std::to_string(i), random_tensor(1, 3, rng));
    d.push_back(testing::random_demographics(rng));
  }
  std::vector<Parameter*> ps;
  for (auto& l : logits) ps.push_back(&l);
  auto build = [&](Tape& t, bool track) {
    Binder b(t, track);
    BatchFairnessBuffer buf;
    for (std::size_t i = 0; i < logits.size(); ++i) buf.add(ad::softmax_rows(b(logits[i])), d[i]);
    return buf.loss(t);
  };
  auto loss = [&] {
    Tape t;
    return build(t, false).scalar();
  };
  auto back = [&] {
    Tape t;
    t.backward(build(t, true));
  };
  const auto r = testing::gradcheck(ps, loss, back);
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("total loss") {
  LossWeights w;
  CHECK(total_loss(0, 0, 0, w) == 0.0);
  CHECK(total_loss(1, 1, 1, w) == doctest::Approx(1.15).epsilon(1e-15));
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const double a = testing::uniform(rng, 0, 3), b = testing::uniform(rng, 0, 3), c = testing::uniform(rng, 0, 3);
    CHECK(total_loss(a, b, c, w) == doctest::Approx(a + 0.1 * b + 0.05 * c).epsilon(1e-15));
    CHECK(total_loss(a, b, c, w) >= a);
    Tape t;
    Var v = total_loss(t.constant(Tensor2(1, 1, a)), t.constant(Tensor2(1, 1, b)), t.constant(Tensor2(1, 1, c)), w);
    CHECK(v.scalar() == doctest::Approx(a + 0.1 * b + 0.05 * c).epsilon(1e-15));
  }
}

TEST_CASE("cox partial likelihood") {
  const std::vector<double> times = {1.0, 2.0};
  const std::vector<std::uint8_t> ev = {1, 0};
  CHECK(cox_partial_likelihood(std::vector<double>{0.3, 0.3}, times, ev) == doctest::Approx(std::log(2.0)));
  CHECK(cox_partial_likelihood(std::vector<double>{20.0, 0.0}, times, ev) < 1e-8);
  CHECK_THROWS_AS(cox_partial_likelihood(std::vector<double>{1, 2}, times, std::vector<std::uint8_t>{0, 0}),
                  DomainError);
  CHECK_THROWS_AS(cox_partial_likelihood(std::vector<double>{1, 2}, std::vector<double>{0.0, 1.0}, ev), DomainError);

  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2 + testing::index(rng, 8);
    std::vector<double> r = testing::random_vector(n, rng), t(n);
    std::vector<std::uint8_t> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<double>(1 + testing::index(rng, 5));  // coarse times create ties
      e[i] = testing::uniform(rng, 0, 1) < 0.6;
    }
    e[0] = 1;
    CHECK(std::abs(cox_partial_likelihood(r, t, e) - oracle::cox_nll(r, t, e)) < 1e-10);
  }

  // gradient through the taped form
  Parameter risks("r", random_tensor(5, 1, rng));
  const std::vector<double> tt = {3, 1, 4, 1, 5};
  const std::vector<std::uint8_t> ee = {1, 1, 0, 1, 1};
  auto loss = [&] { return cox_partial_likelihood(risks.value.data(), tt, ee); };
  auto back = [&] {
    Tape t;
    t.backward(cox_partial_likelihood(t.param(risks), tt, ee));
  };
  const auto g = testing::gradcheck({&risks}, loss, back);
  CAPTURE(g.worst);
  CHECK(g.max_rel_error < 1e-7);
}

TEST_CASE("window objective gradients for every variant") {
  Rng rng(7);
  for (GraphVariant v : kAllVariants) {
    for (bool survival : {false, true}) {
      const std::string name = variant_name(v);
      CAPTURE(name);
      CAPTURE(survival);
      Model m = Model::init(testing::tiny_config(v, 2, survival), 11);
      std::vector<FeatureBag> bags;
      for (int i = 0; i < 4; ++i) bags.push_back(testing::random_bag(rng, 4, 8, 2, survival));
      bags[0].label = 1;
      if (survival) bags[0].survival->event = true;
      bags[1].demographics.drop(Attribute::age);
      bags[2].demographics = DemographicVector::missing();
      std::vector<const FeatureBag*> ptrs;
      for (auto& b : bags) ptrs.push_back(&b);
      const auto r = testing::window_gradcheck(m, ptrs, LossWeights{});
      CAPTURE(r.worst);
      CHECK(r.checked > 50);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}
