#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cmil/model.hpp"
#include "cmil/scmgraph.hpp"
#include "support.hpp"

using namespace cmil;
using testing::random_tensor;

namespace {

using LD = long double;
using Mat = std::vector<std::vector<LD>>;

Mat to_mat(const Tensor2& t) {
  Mat m(t.rows(), std::vector<LD>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<LD>(b[0].size(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

LD gelu_ld(LD x) {
  return 0.5L * x * (1.0L + std::tanh(std::sqrt(2.0L / 3.14159265358979323846L) * (x + 0.044715L * x * x * x)));
}

// Linear -> LayerNorm -> GELU on one row, extended precision.
std::vector<LD> embed_oracle(const NodeEmbedder& e, std::span<const double> x) {
  const Mat y = mul(Mat{std::vector<LD>(x.begin(), x.end())}, to_mat(e.linear.weight.value));
  const std::size_t n = y[0].size();
  std::vector<LD> r(n);
  LD mean = 0, var = 0;
  for (std::size_t j = 0; j < n; ++j) {
    r[j] = y[0][j] + e.linear.bias.value[j];
    mean += r[j];
  }
  mean /= n;
  for (LD v : r) var += (v - mean) * (v - mean);
  var /= n;
  for (std::size_t j = 0; j < n; ++j)
    r[j] = gelu_ld((r[j] - mean) / std::sqrt(var + 1e-5L) * e.ln_gain.value[j] + e.ln_bias.value[j]);
  return r;
}

// One masked multi-head layer with per-head column blocks, concatenation, output map and residual.
Mat layer_oracle(const GraphLayer& l, const Mat& h, const Adjacency& a, std::size_t heads) {
  const std::size_t dh = h[0].size(), dk = dh / heads;
  const Mat q = mul(h, to_mat(l.w_q.value)), k = mul(h, to_mat(l.w_k.value)), v = mul(h, to_mat(l.w_v.value));
  Mat cat(3, std::vector<LD>(dh, 0.0L));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<LD> w(3, 0.0L);
      LD z = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        if (!a[i * 3 + j]) continue;
        LD s = 0;
        for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) s += q[i][c] * k[j][c];
        w[j] = std::exp(s / std::sqrt(static_cast<LD>(dk)));
        z += w[j];
      }
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) cat[i][c] += w[j] / z * v[j][c];
    }
  }
  Mat out = mul(cat, to_mat(l.w_o.value));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < dh; ++j) out[i][j] += h[i][j];
  return out;
}

SemConfig small_sem(std::size_t d = 6, std::size_t dh = 8, std::size_t heads = 2) {
  SemConfig c;
  c.feature_dim = d;
  c.hidden = dh;
  c.heads = heads;
  c.outputs = 2;
  c.dropout = 0.3;
  return c;
}

Tensor2 eval_z(SemParams& p, const CausalGraphSpec& spec, const Tensor2& b, const Tensor2& u,
               Mode mode = Mode::eval, std::uint64_t seed = 0, GraphTrace* trace = nullptr) {
  Tape t;
  Binder bind(t, false);
  Rng rng(seed);
  return disease_representation(bind, p, spec, t.constant(b), t.constant(u), mode, rng, trace).z.value();
}

Tensor2 random_u(Rng& rng) { return Tensor2::row(testing::random_demographics(rng).values); }

}  // namespace

TEST_CASE("adjacency per variant") {
  const auto c = build_adjacency(GraphVariant::collider);
  CHECK(c.adjacency == Adjacency{1, 0, 0, 0, 1, 0, 1, 1, 1});
  CHECK(c.train_adjacency == Adjacency{1, 0, 1, 0, 1, 1, 1, 1, 1});
  CHECK_FALSE(build_adjacency(GraphVariant::concat).message_passing());
  for (GraphVariant v : kAllVariants) {
    const auto s = build_adjacency(v);
    for (std::size_t k = 0; k < 9; ++k) CHECK(s.train_adjacency[k] >= s.adjacency[k]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s.adjacency[i * 4] == 1);
  }
  // no variant except collider lets U send to Z
  CHECK(build_adjacency(GraphVariant::fork).adjacency[kNodeZ * 3 + kNodeU] == 0);
  CHECK(build_adjacency(GraphVariant::direct).adjacency[kNodeZ * 3 + kNodeU] == 0);
  CHECK_THROWS_AS(parse_variant("chain"), ConfigError);
  CHECK(parse_variant("fork") == GraphVariant::fork);
}

TEST_CASE("node embeddings") {
  Rng rng(1);
  SemParams p(small_sem(), GraphVariant::collider, rng);
  const Tensor2 b = random_tensor(1, 6, rng), u = random_u(rng);
  Tape t;
  Binder bind(t, false);
  Rng r(0);
  NodeStates n = embed_nodes(bind, p, t.constant(b), t.constant(u), Mode::eval, r);
  const auto ox = embed_oracle(p.embed_x, b.data());
  const auto ou = embed_oracle(p.embed_u, u.data());
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(std::abs(n.x.value()[j] - static_cast<double>(ox[j])) < 1e-12);
    CHECK(std::abs(n.u.value()[j] - static_cast<double>(ou[j])) < 1e-12);
  }
  NodeStates other = embed_nodes(bind, p, t.constant(random_tensor(1, 6, rng)), t.constant(u), Mode::eval, r);
  CHECK(other.z.value() == n.z.value());

  SemParams zero = p;
  zero.embed_x.linear.weight.value.fill(0.0);
  NodeStates nz = embed_nodes(bind, zero, t.constant(b), t.constant(u), Mode::eval, r);
  NodeStates nz2 = embed_nodes(bind, zero, t.constant(random_tensor(1, 6, rng)), t.constant(u), Mode::eval, r);
  CHECK(nz.x.value() == nz2.x.value());
  const auto bias_only = embed_oracle(zero.embed_x, std::vector<double>(6, 0.0));
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(nz.x.value()[j] - static_cast<double>(bias_only[j])) < 1e-12);

  CHECK_THROWS_AS(embed_nodes(bind, p, t.constant(Tensor2(1, 5)), t.constant(u), Mode::eval, r), DimensionError);
}

TEST_CASE("graph pass matches per-head recomputation") {
  Rng rng(2);
  for (GraphVariant v : {GraphVariant::collider, GraphVariant::fork, GraphVariant::direct}) {
    SemParams p(small_sem(6, 8, 4), v, rng);
    const auto spec = build_adjacency(v);
    for (int rep = 0; rep < 10; ++rep) {
      const Tensor2 h = random_tensor(3, 8, rng);
      for (Mode mode : {Mode::eval, Mode::train}) {
        Tape t;
        Binder bind(t, false);
        const Tensor2 out = graph_pass(bind, p, spec, t.constant(h), mode).value();
        const Mat expect = layer_oracle(p.layers[0], to_mat(h), spec.mask(mode), 4);
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out(i, j) - static_cast<double>(expect[i][j])) < 1e-12);
      }
    }
  }
}

TEST_CASE("self-loop-only graph and zero value maps") {
  Rng rng(3);
  SemParams p(small_sem(), GraphVariant::collider, rng);
  CausalGraphSpec self = build_adjacency(GraphVariant::collider);
  self.adjacency = self.train_adjacency = Adjacency{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const Tensor2 h = random_tensor(3, 8, rng);
  Tape t;
  Binder bind(t, false);
  GraphTrace trace;
  const Tensor2 out = graph_pass(bind, p, self, t.constant(h), Mode::eval, &trace).value();
  for (const auto& head : trace.attention[0]) CHECK(head == Tensor2::identity(3));
  const Tensor2 expect = matmul(matmul(h, p.layers[0].w_v.value), p.layers[0].w_o.value);
  for (std::size_t k = 0; k < h.size(); ++k) CHECK(out[k] == doctest::Approx(h[k] + expect[k]).epsilon(1e-13));

  SemParams nov = p;
  nov.layers[0].w_v.value.fill(0.0);
  const Tensor2 z = eval_z(nov, build_adjacency(GraphVariant::collider), random_tensor(1, 6, rng), random_u(rng));
  CHECK(z == nov.z_init.value);
}

TEST_CASE("masked pairs get exactly zero attention and eval ignores training-only edges") {
  Rng rng(4);
  for (GraphVariant v : {GraphVariant::collider, GraphVariant::fork, GraphVariant::direct}) {
    SemParams p(small_sem(6, 8, 2), v, rng);
    const auto spec = build_adjacency(v);
    CausalGraphSpec full = spec;
    full.train_adjacency = Adjacency{1, 1, 1, 1, 1, 1, 1, 1, 1};
    for (int rep = 0; rep < 50; ++rep) {
      const Tensor2 b = random_tensor(1, 6, rng, 3.0), u = random_u(rng);
      for (Mode mode : {Mode::eval, Mode::train}) {
        GraphTrace trace;
        eval_z(p, spec, b, u, mode, rep, &trace);
        const Adjacency& m = spec.mask(mode);
        for (const auto& head : trace.attention[0]) {
          double row_sum[3] = {0, 0, 0};
          for (std::size_t e = 0; e < 9; ++e) {
            if (!m[e]) CHECK(head[e] == 0.0);
            row_sum[e / 3] += head[e];
          }
          for (double s : row_sum) CHECK(std::abs(s - 1.0) < 1e-12);
        }
      }
      CHECK(eval_z(p, spec, b, u) == eval_z(p, full, b, u));
    }
  }
}

TEST_CASE("disease representation chains embed, pass and select") {
  Rng rng(5);
  SemParams p(small_sem(), GraphVariant::collider, rng);
  const auto spec = build_adjacency(GraphVariant::collider);
  const Tensor2 b = random_tensor(1, 6, rng), u = random_u(rng);
  const auto hx = embed_oracle(p.embed_x, b.data()), hu = embed_oracle(p.embed_u, u.data());
  Mat nodes = {hx, hu, std::vector<LD>(p.z_init.value.data().begin(), p.z_init.value.data().end())};
  const Mat out = layer_oracle(p.layers[0], nodes, spec.adjacency, 2);
  const Tensor2 z = eval_z(p, spec, b, u);
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(z[j] - static_cast<double>(out[2][j])) < 1e-12);

  // concat variant: projection of [h_X; h_U]
  SemParams c(small_sem(), GraphVariant::concat, rng);
  const Tensor2 zc = eval_z(c, build_adjacency(GraphVariant::concat), b, u);
  std::vector<LD> cat = embed_oracle(c.embed_x, b.data());
  const auto cu = embed_oracle(c.embed_u, u.data());
  cat.insert(cat.end(), cu.begin(), cu.end());
  const Mat proj = mul(Mat{cat}, to_mat(c.concat_proj.weight.value));
  for (std::size_t j = 0; j < 8; ++j)
    CHECK(std::abs(zc[j] - static_cast<double>(proj[0][j] + c.concat_proj.bias.value[j])) < 1e-12);
}

TEST_CASE("demographic imputation") {
  Rng rng(6);
  SemParams p(small_sem(), GraphVariant::collider, rng);
  const Tensor2 b = random_tensor(1, 6, rng);
  auto impute = [&](SemParams& sp, const DemographicVector& u) {
    Tape t;
    Binder bind(t, false);
    return impute_demographics(bind, sp, t.constant(b), u).value();
  };
  const auto u = testing::random_demographics(rng);
  CHECK(impute(p, u) == Tensor2::row(u.values));

  SemParams silent = p;
  silent.config.sigma_unc = 0.0;  // degenerate weight, set past validation on purpose
  CHECK(impute(silent, DemographicVector::missing()) == Tensor2(1, 8, 0.0));

  // MLP oracle: sigmoid(W2 GELU(W1 b + b1) + b2)
  const Mat h1 = mul(to_mat(b), to_mat(p.imputer.first.weight.value));
  std::vector<LD> a(h1[0].size());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = gelu_ld(h1[0][j] + p.imputer.first.bias.value[j]);
  const Mat h2 = mul(Mat{a}, to_mat(p.imputer.second.weight.value));
  std::vector<double> mlp(8);
  for (std::size_t j = 0; j < 8; ++j)
    mlp[j] = static_cast<double>(1.0L / (1.0L + std::exp(-(h2[0][j] + p.imputer.second.bias.value[j]))));

  const Tensor2 missing = impute(p, DemographicVector::missing());
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(missing[j] - 0.5 * mlp[j]) < 1e-13);

  auto half = u;
  half.drop(Attribute::race);
  half.drop(Attribute::age);
  const Tensor2 blended = impute(p, half);
  for (std::size_t j = 0; j < 8; ++j) {
    const double m = half.slot_observed(j) ? 1.0 : 0.0;
    CHECK(std::abs(blended[j] - (m * half.values[j] + (1 - m) * mlp[j])) < 1e-13);
  }
}

TEST_CASE("demographic decoding loss") {
  Tape t;
  const auto u = DemographicVector::observed(0, 3, 61.0);
  CHECK(demo_loss(t.constant(Tensor2::row(u.values)), u).scalar() == 0.0);
  auto shifted = u.values;
  shifted[5] += 1.0;
  CHECK(demo_loss(t.constant(Tensor2::row(shifted)), u).scalar() == 1.0);
  Rng rng(7);
  const auto pred = testing::random_vector(8, rng);
  double oracle = 0;
  for (std::size_t i = 0; i < 8; ++i) oracle += (pred[i] - u.values[i]) * (pred[i] - u.values[i]);
  CHECK(demo_loss(t.constant(Tensor2::row(pred)), u).scalar() == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(demo_loss(pred, std::vector<double>(u.values.begin(), u.values.end())) ==
        doctest::Approx(oracle).epsilon(1e-14));
  auto part = u;
  part.drop(Attribute::gender);
  double partial = 0;
  for (std::size_t i = 2; i < 8; ++i) partial += (pred[i] - u.values[i]) * (pred[i] - u.values[i]);
  CHECK(demo_loss(t.constant(Tensor2::row(pred)), part).scalar() == doctest::Approx(partial).epsilon(1e-14));
}

TEST_CASE("prediction head") {
  Rng rng(8);
  SemConfig cfg = small_sem();
  SemParams p(cfg, GraphVariant::collider, rng);
  Tape t;
  Binder bind(t, false);
  SemOutput s;
  s.head_input = t.constant(random_tensor(1, 8, rng));
  const Tensor2 logits = bag_logits(bind, p, s).value();
  const Tensor2 mv = matmul(s.head_input.value(), p.head.weight.value);
  for (std::size_t c = 0; c < 2; ++c) CHECK(logits[c] == doctest::Approx(mv[c] + p.head.bias.value[c]).epsilon(1e-14));
  SemParams z = p;
  z.head.weight.value.fill(0.0);
  CHECK(bag_logits(bind, z, s).value() == z.head.bias.value);

  cfg.outputs = 1;
  SemParams one(cfg, GraphVariant::collider, rng);
  double dot = one.head.bias.value[0];
  for (std::size_t j = 0; j < 8; ++j) dot += s.head_input.value()[j] * one.head.weight.value(j, 0);
  CHECK(bag_logits(bind, one, s).value()[0] == doctest::Approx(dot).epsilon(1e-14));
}

TEST_CASE("interventions") {
  Rng rng(9);
  ModelConfig mc = testing::tiny_config(GraphVariant::collider);
  Model m = Model::init(mc, 3);
  const FeatureBag bag = testing::random_bag(rng, 4, 8);
  const BagPrediction pred = predict_bag(m, bag);
  CHECK(intervene(m.sem, m.graph, pred.bag_repr, bag.demographics.values) == pred.z);

  // Collider: Z responds to the demographic input.
  const auto u1 = testing::random_demographics(rng).values;
  auto u2 = u1;
  u2[7] = 1.0 - u2[7];
  const Tensor2 z1 = intervene(m.sem, m.graph, pred.bag_repr, u1), z2 = intervene(m.sem, m.graph, pred.bag_repr, u2);
  double diff = 0;
  for (std::size_t j = 0; j < z1.size(); ++j) diff += std::abs(z1[j] - z2[j]);
  CHECK(diff > 0.0);

  // Fork: no path from U to Z, so every intervention leaves Z bit-identical.
  Model f = Model::init(testing::tiny_config(GraphVariant::fork), 3);
  const BagPrediction fp = predict_bag(f, bag);
  for (int rep = 0; rep < 20; ++rep) {
    const auto u = testing::random_vector(8, rng, 2.0);
    CHECK(intervene(f.sem, f.graph, fp.bag_repr, u) == fp.z);
  }

  // Concat with the U half of the projection removed: Z ignores u_do.
  Model c = Model::init(testing::tiny_config(GraphVariant::concat), 3);
  for (std::size_t i = 8; i < 16; ++i)
    for (std::size_t j = 0; j < 8; ++j) c.sem.concat_proj.weight.value(i, j) = 0.0;
  const BagPrediction cp = predict_bag(c, bag);
  CHECK(intervene(c.sem, c.graph, cp.bag_repr, u1) == intervene(c.sem, c.graph, cp.bag_repr, u2));
  CHECK_THROWS_AS(intervene(m.sem, m.graph, pred.bag_repr, std::vector<double>(7)), DimensionError);
}

TEST_CASE("SEM chain gradients, train mode without dropout") {
  Rng rng(10);
  for (GraphVariant v : kAllVariants) {
    CAPTURE(variant_name(v));
    SemConfig cfg = small_sem(6, 8, 2);
    cfg.dropout = 0.0;
    SemParams p(cfg, v, rng);
    const auto spec = build_adjacency(v);
    const Tensor2 b = random_tensor(1, 6, rng);
    auto u = testing::random_demographics(rng);
    u.drop(Attribute::race);
    std::vector<Parameter*> ps;
    p.collect(v, ps);
    auto build = [&](Tape& t, bool track) {
      Binder bind(t, track);
      Rng r(0);
      Var bv = t.constant(b);
      Var uf = impute_demographics(bind, p, bv, u);
      SemOutput s = disease_representation(bind, p, spec, bv, uf, Mode::train, r);
      Var logits = bag_logits(bind, p, s);
      const std::size_t label[1] = {1};
      return ad::add(ad::cross_entropy_rows(logits, label), demo_loss(decode_demographics(bind, p, s.z), u));
    };
    auto loss = [&] {
      Tape t;
      return build(t, false).scalar();
    };
    auto backprop = [&] {
      Tape t;
      t.backward(build(t, true));
    };
    const auto r = testing::gradcheck(ps, loss, backprop);
    CAPTURE(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "cmil_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Model m = Model::init(testing::tiny_config(GraphVariant::collider), 4);
  m.neutral_demographics[7] = 0.42;
  save_checkpoint(m, dir / "a.ckpt", nlohmann::json{{"note", 1}});
  const auto bytes = read_file_bytes(dir / "a.ckpt");
  auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(loaded.model.neutral_demographics == m.neutral_demographics);
  CHECK(encode_checkpoint(loaded.model, nlohmann::json{{"note", 1}}) == bytes);
  auto lp = loaded.model.parameters();
  auto mp = m.parameters();
  REQUIRE(lp.size() == mp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(lp[i]->value == mp[i]->value);

  Model other = Model::init(testing::tiny_config(GraphVariant::fork), 4);
  CHECK_THROWS_AS(load_checkpoint_into(other, dir / "a.ckpt"), ConfigError);
  ModelConfig wide = testing::tiny_config(GraphVariant::collider);
  wide.hidden = 12;
  Model w = Model::init(wide, 4);
  CHECK_THROWS_AS(load_checkpoint_into(w, dir / "a.ckpt"), ConfigError);

  auto bad = bytes;
  bad[bad.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[0] = 'Z';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
}
