#include "cmil/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "cmil/errors.hpp"

namespace cmil {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (accumulation_steps < 1) throw ConfigError("accumulation_steps must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(lr > 0.0) || !(eta_min >= 0.0) || eta_min > lr) throw ConfigError("need 0 <= eta_min <= lr and lr > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  weights.validate();
}

ModelConfig TrainConfig::model_config(const Cohort& cohort) const {
  ModelConfig m;
  m.feature_dim = cohort.feature_dim();
  m.classes = cohort.class_count;
  m.survival = cohort.has_survival();
  m.hidden = hidden_dim;
  m.query_dim = query_dim;
  m.heads = heads;
  m.layers = layers;
  m.dropout = dropout;
  m.k_frac = k_frac;
  m.sigma_unc = sigma_unc;
  m.variant = variant;
  m.validate();
  return m;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"accumulation_steps", c.accumulation_steps},
                     {"patience", c.patience},
                     {"dropout", c.dropout},
                     {"seed", c.seed},
                     {"lambda_causal", c.weights.lambda_causal},
                     {"lambda_fair", c.weights.lambda_fair},
                     {"lambda_ins", c.weights.lambda_ins},
                     {"lambda_demo", c.weights.lambda_demo},
                     {"variant", variant_name(c.variant)},
                     {"hidden_dim", c.hidden_dim},
                     {"query_dim", c.query_dim},
                     {"heads", c.heads},
                     {"layers", c.layers},
                     {"k_frac", c.k_frac},
                     {"sigma_unc", c.sigma_unc},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"eta_min", c.eta_min}};
}

namespace {

template <class T>
void take(const nlohmann::json& v, const std::string& key, T& out) {
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError("config key '" + key + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    }
    out = v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

void apply_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") take(v, key, c.epochs);
    else if (key == "accumulation_steps") take(v, key, c.accumulation_steps);
    else if (key == "patience") take(v, key, c.patience);
    else if (key == "dropout") take(v, key, c.dropout);
    else if (key == "seed") take(v, key, c.seed);
    else if (key == "lambda_causal") take(v, key, c.weights.lambda_causal);
    else if (key == "lambda_fair") take(v, key, c.weights.lambda_fair);
    else if (key == "lambda_ins") take(v, key, c.weights.lambda_ins);
    else if (key == "lambda_demo") take(v, key, c.weights.lambda_demo);
    else if (key == "hidden_dim") take(v, key, c.hidden_dim);
    else if (key == "query_dim") take(v, key, c.query_dim);
    else if (key == "heads") take(v, key, c.heads);
    else if (key == "layers") take(v, key, c.layers);
    else if (key == "k_frac") take(v, key, c.k_frac);
    else if (key == "sigma_unc") take(v, key, c.sigma_unc);
    else if (key == "lr") take(v, key, c.lr);
    else if (key == "weight_decay") take(v, key, c.weight_decay);
    else if (key == "eta_min") take(v, key, c.eta_min);
    else if (key == "variant") {
      if (!v.is_string()) throw ConfigError("config key 'variant' must be a string");
      try {
        c.variant = parse_variant(v.get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

nlohmann::json to_json(const TrainLogRecord& r) {
  auto parts = [](const LossParts& p) {
    return nlohmann::json{{"cls", p.cls}, {"causal", p.causal}, {"fair", p.fair}, {"demo", p.demo}, {"total", p.total}};
  };
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"epoch", r.epoch},
                        {"train", parts(r.train)},
                        {"val", parts(r.val)},
                        {"val_acc", opt(r.val_acc)},
                        {"val_auc", opt(r.val_auc)},
                        {"val_f1", opt(r.val_f1)},
                        {"val_c_index", opt(r.val_c_index)},
                        {"val_metric", r.val_metric},
                        {"lr", r.lr},
                        {"improved", r.improved}, {"kept", r.kept}};
}

bool GradientWindow::step(OptimizerState& state, double lr) {
  if (items_ == 0) return false;
  scale_grads(params_, 1.0 / static_cast<double>(items_));
  adam_step(state, params_, lr);
  zero_grads(params_);
  items_ = 0;
  return true;
}

namespace {

struct BagTerms {
  BagForward f;
  Var cls;     // CE + lambda_ins * instance loss (instance term only in survival mode)
  Var causal;  // ||Z - anchor||^2 + lambda_demo * demo
  Var demo;
  Var probs;
};

BagTerms bag_terms(Binder& bind, Model& model, const FeatureBag& bag, Mode mode, Rng& rng, const LossWeights& w) {
  BagTerms t;
  t.f = forward_bag(bind, model, bag, mode, rng);
  const PseudoLabels pseudo = assign_pseudo_labels(t.f.inst_logits.value(), bag.label, model.config.k_frac);
  Var inst = instance_loss(t.f.inst_logits, pseudo);
  if (model.config.survival) {
    t.cls = ad::scale(inst, w.lambda_ins);
  } else {
    t.cls = classification_loss(t.f.logits, bag.label, inst, w);
    t.probs = ad::softmax_rows(t.f.logits);
  }
  t.demo = demo_loss(decode_demographics(bind, model.sem, t.f.sem.z), bag.demographics);
  t.causal = causal_loss(t.f.sem.z, ad::stop_gradient(t.f.sem.h_x), t.demo, w);
  return t;
}

[[noreturn]] void rethrow_numeric(const FeatureBag& bag, const NumericError& e) {
  throw NumericError("non-finite value while processing bag '" + bag.bag_id + "': " + e.what());
}

bool has_event(std::span<const std::uint8_t> events) {
  return std::any_of(events.begin(), events.end(), [](std::uint8_t e) { return e != 0; });
}

struct WindowSurvival {
  std::vector<Var> risks;
  std::vector<double> times;
  std::vector<std::uint8_t> events;
};

}  // namespace

Var window_objective(Binder& bind, Model& model, std::span<const FeatureBag* const> bags, const LossWeights& w,
                     Mode mode, Rng& rng, LossParts* parts) {
  if (bags.empty()) throw DomainError("window_objective needs at least one bag");
  Tape& tape = bind.tape();
  const double n = static_cast<double>(bags.size());
  BatchFairnessBuffer fair_buf;
  WindowSurvival surv;
  LossParts local;
  Var objective = tape.constant(Tensor2(1, 1, 0.0));
  for (const FeatureBag* bag : bags) {
    try {
      BagTerms t = bag_terms(bind, model, *bag, mode, rng, w);
      objective = ad::add(objective, ad::add(t.cls, ad::scale(t.causal, w.lambda_causal)));
      local.cls += t.cls.scalar() / n;
      local.causal += t.causal.scalar() / n;
      local.demo += t.demo.scalar() / n;
      if (model.config.survival) {
        if (!bag->survival) throw DomainError("bag '" + bag->bag_id + "' has no survival record");
        surv.risks.push_back(t.f.logits);
        surv.times.push_back(bag->survival->time);
        surv.events.push_back(bag->survival->event);
      } else {
        fair_buf.add(t.probs, bag->demographics);
      }
    } catch (const NumericError& e) {
      rethrow_numeric(*bag, e);
    }
  }
  if (model.config.survival) {
    if (has_event(surv.events)) {
      Var cox = cox_partial_likelihood(ad::concat_rows(surv.risks), surv.times, surv.events);
      objective = ad::add(objective, ad::scale(cox, n));
      local.cls += cox.scalar();
    }
  } else if (w.lambda_fair > 0.0) {
    Var fair = fair_buf.loss(tape);
    objective = ad::add(objective, ad::scale(fair, n * w.lambda_fair));
    local.fair = fair.scalar();
  }
  local.total = objective.scalar() / n;
  if (!std::isfinite(local.total)) {
    throw NumericError("non-finite window loss (first bag '" + bags.front()->bag_id + "')");
  }
  if (parts) *parts = local;
  return objective;
}

namespace {

LossParts train_window(Model& model, std::span<const FeatureBag* const> bags, const LossWeights& w, Rng& rng) {
  Tape tape;
  Binder bind(tape, true);
  LossParts parts;
  Var objective = window_objective(bind, model, bags, w, Mode::train, rng, &parts);
  tape.backward(objective);
  return parts;
}

struct SplitPass {
  std::vector<BagPrediction> predictions;
  LossParts losses;
};

SplitPass eval_pass(Model& model, const Cohort& cohort, std::span<const std::size_t> idx, const LossWeights& w) {
  SplitPass out;
  const double n = static_cast<double>(idx.size());
  std::vector<std::vector<double>> probs;
  std::vector<DemographicVector> demos;
  std::vector<double> risks, times;
  std::vector<std::uint8_t> events;
  Rng unused(0);
  for (std::size_t i : idx) {
    const FeatureBag& bag = cohort.bags[i];
    Tape tape;
    Binder bind(tape, false);
    BagTerms t;
    try {
      t = bag_terms(bind, model, bag, Mode::eval, unused, w);
    } catch (const NumericError& e) {
      rethrow_numeric(bag, e);
    }
    out.losses.cls += t.cls.scalar() / n;
    out.losses.causal += t.causal.scalar() / n;
    out.losses.demo += t.demo.scalar() / n;
    BagPrediction p;
    const auto logits = t.f.logits.value().data();
    if (model.config.survival) {
      p.risk = logits[0];
      risks.push_back(p.risk);
      times.push_back(bag.survival->time);
      events.push_back(bag.survival->event);
    } else {
      p.probs = softmax_row(logits);
      p.label = argmax_lowest(p.probs);
      probs.push_back(p.probs);
      demos.push_back(bag.demographics);
    }
    out.predictions.push_back(std::move(p));
  }
  if (model.config.survival) {
    if (has_event(events)) out.losses.cls += cox_partial_likelihood(risks, times, events);
  } else {
    bool any_group = false;
    for (const auto& d : demos)
      for (Attribute a : kAttributes) any_group = any_group || d.group(a).has_value();
    if (any_group) out.losses.fair = fairness_loss(probs, demos);
  }
  out.losses.total = total_loss(out.losses.cls, out.losses.causal, out.losses.fair, w);
  return out;
}

}  // namespace

TrainResult train(const Cohort& cohort, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  cohort.validate();
  const auto train_idx = cohort.indices(Split::train);
  const auto val_idx = cohort.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) throw ConfigError("training needs nonempty train and val splits");

  Model model = Model::init(cfg.model_config(cohort), cfg.seed);
  std::vector<const FeatureBag*> train_bags;
  for (std::size_t i : train_idx) train_bags.push_back(&cohort.bags[i]);
  model.neutral_demographics = neutral_demographics_of(train_bags);

  std::vector<Parameter*> params = model.parameters();
  AdamConfig adam;
  adam.base_lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  OptimizerState opt = OptimizerState::for_params(adam, params);
  zero_grads(params);
  GradientWindow window(params);

  const std::size_t windows_per_epoch = (train_idx.size() + cfg.accumulation_steps - 1) / cfg.accumulation_steps;
  // Cosine over the full epoch budget, advanced once per optimizer step.
  const CosineSchedule schedule(cfg.lr, cfg.eta_min, static_cast<double>(cfg.epochs));
  Rng shuffle_rng(cfg.seed ^ 0x2545F4914F6CDD1DULL);
  Rng dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  TrainResult result;
  result.best = model;
  bool have_best = false;
  double best_val_loss = 0.0;
  std::size_t stale = 0;
  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TrainLogRecord rec;
    rec.epoch = epoch;
    for (std::size_t wi = 0; wi < windows_per_epoch; ++wi) {
      const std::size_t begin = wi * cfg.accumulation_steps;
      const std::size_t end = std::min(order.size(), begin + cfg.accumulation_steps);
      std::vector<const FeatureBag*> bags;
      for (std::size_t k = begin; k < end; ++k) {
        bags.push_back(&cohort.bags[order[k]]);
        window.add_item();
      }
      const LossParts p = train_window(model, bags, cfg.weights, dropout_rng);
      const double t = static_cast<double>(epoch - 1) + static_cast<double>(wi) / static_cast<double>(windows_per_epoch);
      rec.lr = schedule.at(t);
      window.step(opt, rec.lr);
      const double m = static_cast<double>(windows_per_epoch);
      rec.train.cls += p.cls / m;
      rec.train.causal += p.causal / m;
      rec.train.fair += p.fair / m;
      rec.train.demo += p.demo / m;
      rec.train.total += p.total / m;
    }

    SplitPass val = eval_pass(model, cohort, val_idx, cfg.weights);
    rec.val = val.losses;
    if (model.config.survival) {
      std::vector<double> risks, times;
      std::vector<std::uint8_t> events;
      for (std::size_t k = 0; k < val_idx.size(); ++k) {
        risks.push_back(val.predictions[k].risk);
        times.push_back(cohort.bags[val_idx[k]].survival->time);
        events.push_back(cohort.bags[val_idx[k]].survival->event);
      }
      rec.val_c_index = c_index(risks, times, events);
      rec.val_metric = rec.val_c_index.value_or(0.5);
    } else {
      std::vector<std::size_t> truth, pred;
      std::vector<std::vector<double>> probs;
      for (std::size_t k = 0; k < val_idx.size(); ++k) {
        truth.push_back(cohort.bags[val_idx[k]].label);
        pred.push_back(val.predictions[k].label);
        probs.push_back(val.predictions[k].probs);
      }
      rec.val_acc = accuracy(truth, pred);
      rec.val_f1 = f1_score(truth, pred, cohort.class_count);
      rec.val_auc = auc_macro(probs, truth, cohort.class_count);
      rec.val_metric = rec.val_auc.value_or(*rec.val_acc);
    }

    // Ties (within 1e-12) never reset patience, but among tied epochs the one with the lower
    // validation prediction loss is kept. A saturated AUC otherwise pins the checkpoint to the
    // first epoch that ranks perfectly, before the decision threshold has settled.
    rec.improved = !have_best || rec.val_metric > result.best_metric + 1e-12;
    const bool tie = have_best && !rec.improved && rec.val_metric >= result.best_metric - 1e-12;
    if (rec.improved || (tie && rec.val.cls < best_val_loss)) {
      result.best = model;
      result.best_epoch = epoch;
      best_val_loss = rec.val.cls;
      rec.kept = true;
    }
    if (rec.improved) {
      result.best_metric = rec.val_metric;
      have_best = true;
      stale = 0;
    } else {
      ++stale;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stale >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  return result;
}

Evaluation evaluate(Model& model, const Cohort& cohort, Split split, bool with_attribution) {
  const auto idx = cohort.indices(split);
  if (idx.empty()) throw ConfigError(std::string("split '") + split_name(split) + "' has no bags");
  Evaluation ev;
  std::vector<const FeatureBag*> bags;
  for (std::size_t i : idx) {
    const FeatureBag& bag = cohort.bags[i];
    BagPrediction p = predict_bag(model, bag);
    ev.records.push_back(make_record(bag, p, model.config.survival));
    ev.attention.push_back(std::move(p.alpha));
    bags.push_back(&bag);
  }
  ev.report = assemble_report(ev.records, cohort.class_count, with_attribution ? &model : nullptr,
                              with_attribution ? std::span<const FeatureBag* const>(bags)
                                               : std::span<const FeatureBag* const>());
  ev.report.split = split_name(split);
  return ev;
}

}  // namespace cmil
