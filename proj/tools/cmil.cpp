// Command-line entry point: gen-data, train, eval, attribute, ablate.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmil/errors.hpp"
#include "cmil/synth.hpp"
#include "cmil/trainer.hpp"

#ifndef CMIL_GIT_DESCRIBE
#define CMIL_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmil;

namespace {

// Usage problems map to exit code 2, everything else that fails to 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_path(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

void write_run_record(const fs::path& out, const std::string& command, const json& config, std::uint64_t seed,
                      double seconds) {
  json run{{"command", command},   {"config", config},
           {"seed", seed},         {"git_describe", CMIL_GIT_DESCRIBE},
           {"started_utc", utc_now()}, {"wall_clock_seconds", seconds}};
  write_text(out / "run.json", run.dump(2) + "\n");
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

Cohort load_cohort(const fs::path& p) {
  require_path(p, "cohort");
  return read_cohort(p);
}

// --- gen-data ---------------------------------------------------------------

struct GenOptions {
  ScmConfig scm;
  fs::path out;
  double missing = 0.0;
  std::string missing_policy = "all";
};

int run_gen_data(const GenOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Cohort c = generate_cohort(o.scm);
  if (o.missing > 0.0) {
    Rng rng(o.scm.seed ^ 0x6D697373ULL);
    c = drop_demographics(c, o.missing, rng,
                          o.missing_policy == "random" ? DropPolicy::random_blocks : DropPolicy::all_blocks);
  }
  const json gen{{"seed", o.scm.seed},         {"bags", o.scm.n_bags},    {"k", o.scm.instances},
                 {"dim", o.scm.dim},           {"classes", o.scm.classes}, {"gamma", o.scm.confounding},
                 {"sigma", o.scm.noise},       {"rho", o.scm.positive_fraction},
                 {"survival", o.scm.survival}, {"hazard_log_ratio", o.scm.hazard_log_ratio},
                 {"censoring_rate", o.scm.censoring_rate}, {"missing", o.missing},     {"missing_policy", o.missing_policy}};
  write_cohort(c, o.out, gen.dump());
  write_run_record(o.out, "gen-data", gen, o.scm.seed, elapsed(t0));
  std::cout << "wrote " << c.bags.size() << " bags to " << o.out.string() << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainOptions {
  fs::path cohort, out, config;
  std::string variant;
  bool no_fair = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool quiet = false;
};

TrainConfig resolve_config(const fs::path& config_path, const std::string& variant, bool no_fair,
                           std::optional<std::uint64_t> seed, std::optional<std::size_t> epochs) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    require_path(config_path, "config file");
    std::ifstream in(config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    apply_json(j, cfg);
  }
  if (!variant.empty()) {
    try {
      cfg.variant = parse_variant(variant);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (no_fair) cfg.weights.lambda_fair = 0.0;
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  return cfg;
}

int run_train(const TrainOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = resolve_config(o.config, o.variant, o.no_fair, o.seed, o.epochs);
  const Cohort cohort = load_cohort(o.cohort);
  fs::create_directories(o.out);
  std::ofstream log(o.out / "train_log.jsonl", std::ios::binary);
  std::ofstream timing(o.out / "timing.jsonl", std::ios::binary);
  const TrainResult r = train(cohort, cfg, [&](const TrainLogRecord& rec) {
    log << to_json(rec).dump() << "\n";
    timing << json{{"epoch", rec.epoch}, {"seconds", rec.seconds}}.dump() << "\n";
    log.flush();
    if (!o.quiet) {
      std::cout << "epoch " << rec.epoch << " loss " << rec.train.total << " val " << rec.val_metric
                << (rec.improved ? " *" : "") << "\n";
    }
  });
  Model best = r.best;
  save_checkpoint(best, o.out / "checkpoint.ckpt", json{{"train_config", cfg}, {"best_epoch", r.best_epoch}});
  write_run_record(o.out, "train", json(cfg), cfg.seed, elapsed(t0));
  std::cout << "best epoch " << r.best_epoch << " val metric " << r.best_metric << "\n";
  return 0;
}

// --- eval / attribute -------------------------------------------------------

struct EvalOptions {
  fs::path checkpoint, cohort, out;
  std::string split = "test";
  bool dump_attention = false;
  bool dump_predictions = false;
  std::string factor = "all";
};

Split split_arg(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

int run_eval(const EvalOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  require_path(o.checkpoint, "checkpoint");
  const Split split = split_arg(o.split);
  const Cohort cohort = load_cohort(o.cohort);
  Model model = load_checkpoint(o.checkpoint).model;
  const Evaluation ev = evaluate(model, cohort, split);
  fs::create_directories(o.out);
  const json rep = report_to_json(ev.report);
  write_text(o.out / "report.json", rep.dump(2) + "\n");
  if (o.dump_predictions) write_predictions_csv(ev.records, cohort.class_count, o.out / "predictions.csv");
  if (o.dump_attention) {
    fs::create_directories(o.out / "attention");
    for (std::size_t i = 0; i < ev.records.size(); ++i) {
      std::ostringstream csv;
      csv << "instance_index,alpha\n" << std::setprecision(17);
      for (std::size_t k = 0; k < ev.attention[i].size(); ++k) csv << k << ',' << ev.attention[i][k] << "\n";
      write_text(o.out / "attention" / (ev.records[i].bag_id + ".csv"), csv.str());
    }
  }
  write_run_record(o.out, "eval",
                   json{{"checkpoint", o.checkpoint.string()}, {"cohort", o.cohort.string()}, {"split", o.split}}, 0,
                   elapsed(t0));
  std::cout << rep.dump(2) << "\n";
  return 0;
}

int run_attribute(const EvalOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  require_path(o.checkpoint, "checkpoint");
  std::vector<Attribute> factors;
  if (o.factor == "all") {
    factors.assign(kAttributes.begin(), kAttributes.end());
  } else {
    try {
      factors.push_back(parse_attribute(o.factor));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  const Split split = split_arg(o.split);
  const Cohort cohort = load_cohort(o.cohort);
  Model model = load_checkpoint(o.checkpoint).model;
  std::ostringstream csv;
  csv << std::setprecision(17) << "bag_id,total";
  for (Attribute a : factors) csv << ',' << attribute_name(a);
  csv << "\n";
  for (std::size_t i : cohort.indices(split)) {
    const FeatureBag& bag = cohort.bags[i];
    csv << bag.bag_id << ',' << attribution_total(model, bag);
    for (Attribute a : factors) csv << ',' << attribution_factor(model, bag, a);
    csv << "\n";
  }
  fs::create_directories(o.out);
  write_text(o.out / "attribution.csv", csv.str());
  write_run_record(o.out, "attribute",
                   json{{"checkpoint", o.checkpoint.string()}, {"cohort", o.cohort.string()}, {"split", o.split},
                        {"factor", o.factor}},
                   0, elapsed(t0));
  std::cout << "wrote " << (o.out / "attribution.csv").string() << "\n";
  return 0;
}

// --- ablate -----------------------------------------------------------------

struct AblateOptions {
  fs::path cohort, out, config;
  std::vector<std::string> variants = {"collider", "fork", "direct", "concat"};
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  bool no_fair = false;
  std::optional<std::size_t> epochs;
};

struct Stat {
  double mean = 0.0, sd = 0.0;
  std::size_t n = 0;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(s.sd / static_cast<double>(v.size()));
  return s;
}

int run_ablate(const AblateOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (o.seeds == 0) throw UsageError("--seeds must be positive");
  std::vector<GraphVariant> variants;
  for (const auto& v : o.variants) {
    try {
      variants.push_back(parse_variant(v));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  const TrainConfig base = resolve_config(o.config, "", o.no_fair, std::nullopt, o.epochs);
  const Cohort cohort = load_cohort(o.cohort);
  fs::create_directories(o.out);
  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "variant,seeds,acc_mean,acc_sd,auc_mean,auc_sd,gdv_gender_mean,gdv_gender_sd\n";
  std::ostringstream runs;
  runs << std::setprecision(17) << "variant,seed,acc,auc,gdv_gender\n";
  std::cout << std::left << std::setw(10) << "variant" << std::setw(18) << "ACC" << std::setw(18) << "AUC"
            << "GDV(gender)\n";
  for (GraphVariant v : variants) {
    std::vector<double> acc, auc, gdv_g;
    for (std::size_t s = 0; s < o.seeds; ++s) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = o.first_seed + s;
      TrainResult r = train(cohort, cfg);
      const Evaluation ev = evaluate(r.best, cohort, Split::test, false);
      const double a = ev.report.acc.value_or(NAN);
      const double u = ev.report.auc.value_or(NAN);
      const double g = ev.report.gdv.at("gender").value_or(NAN);
      acc.push_back(a);
      auc.push_back(u);
      gdv_g.push_back(g);
      runs << variant_name(v) << ',' << cfg.seed << ',' << a << ',' << u << ',' << g << "\n";
    }
    const Stat sa = stat_of(acc), su = stat_of(auc), sg = stat_of(gdv_g);
    csv << variant_name(v) << ',' << o.seeds << ',' << sa.mean << ',' << sa.sd << ',' << su.mean << ',' << su.sd << ','
        << sg.mean << ',' << sg.sd << "\n";
    auto cell = [](const Stat& s) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(3) << s.mean << " +/- " << s.sd;
      return c.str();
    };
    std::cout << std::setw(10) << variant_name(v) << std::setw(18) << cell(sa) << std::setw(18) << cell(su)
              << cell(sg) << "\n";
  }
  write_text(o.out / "ablation.csv", csv.str());
  write_text(o.out / "ablation_runs.csv", runs.str());
  write_run_record(o.out, "ablate", json{{"train_config", base}, {"variants", o.variants}, {"seeds", o.seeds}},
                   o.first_seed, elapsed(t0));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal multiple-instance learning on whole-slide feature bags"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic cohort");
  g->add_option("--out", gen.out, "Output cohort directory")->required();
  g->add_option("--bags", gen.scm.n_bags, "Number of bags");
  g->add_option("--k", gen.scm.instances, "Instances per bag");
  g->add_option("--dim", gen.scm.dim, "Feature dimension");
  g->add_option("--classes", gen.scm.classes, "Number of classes");
  g->add_option("--gamma", gen.scm.confounding, "Demographic confounding strength");
  g->add_option("--sigma", gen.scm.noise, "Instance noise scale");
  g->add_option("--rho", gen.scm.positive_fraction, "Fraction of state-carrying instances in non-zero bags");
  g->add_flag("--survival", gen.scm.survival, "Attach exponential-hazard survival outcomes");
  g->add_option("--hazard-log-ratio", gen.scm.hazard_log_ratio, "Log hazard ratio per unit disease state");
  g->add_option("--censoring-rate", gen.scm.censoring_rate, "Exponential censoring rate");
  g->add_option("--seed", gen.scm.seed, "Random seed");
  g->add_option("--missing", gen.missing, "Fraction of bags with demographics removed");
  g->add_option("--missing-policy", gen.missing_policy, "all|random blocks removed per selected bag")
      ->check(CLI::IsMember({"all", "random"}));

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--cohort", tr.cohort, "Cohort directory or manifest")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--config", tr.config, "JSON training config");
  t->add_option("--variant", tr.variant, "collider|fork|direct|concat");
  t->add_flag("--no-fair-loss", tr.no_fair, "Disable the fairness loss");
  t->add_option("--seed", tr.seed, "Random seed");
  t->add_option("--epochs", tr.epochs, "Epoch cap");
  t->add_flag("--quiet", tr.quiet, "No per-epoch console output");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--cohort", ev.cohort, "Cohort directory or manifest")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--split", ev.split, "train|val|test");
  e->add_flag("--dump-attention", ev.dump_attention, "Write per-bag attention CSVs");
  e->add_flag("--dump-predictions", ev.dump_predictions, "Write predictions.csv");

  EvalOptions at;
  auto* a = app.add_subcommand("attribute", "Per-bag intervention attribution");
  a->add_option("--checkpoint", at.checkpoint, "Checkpoint file")->required();
  a->add_option("--cohort", at.cohort, "Cohort directory or manifest")->required();
  a->add_option("--out", at.out, "Output directory")->required();
  a->add_option("--split", at.split, "train|val|test");
  a->add_option("--factor", at.factor, "all|gender|race|age");

  AblateOptions ab;
  auto* b = app.add_subcommand("ablate", "Compare graph variants across seeds");
  b->add_option("--cohort", ab.cohort, "Cohort directory or manifest")->required();
  b->add_option("--out", ab.out, "Output directory")->required();
  b->add_option("--config", ab.config, "JSON training config");
  b->add_option("--variants", ab.variants, "Variants to train")->delimiter(',');
  b->add_option("--seeds", ab.seeds, "Number of seeds");
  b->add_option("--first-seed", ab.first_seed, "First seed");
  b->add_flag("--no-fair-loss", ab.no_fair, "Disable the fairness loss");
  b->add_option("--epochs", ab.epochs, "Epoch cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return run_gen_data(gen);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_eval(ev);
    if (a->parsed()) return run_attribute(at);
    if (b->parsed()) return run_ablate(ab);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
