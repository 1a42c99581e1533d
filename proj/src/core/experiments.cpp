#include "experiments.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <set>

#include "error.hpp"
#include "rng.hpp"
#include "similarity.hpp"

namespace tlh {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& dst) {
  if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

template <typename T>
void write_opt(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown field '" + key + "' in " + where);
    }
  }
}

Approach parse_approach(const std::string& s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "both") return Approach::kBoth;
  if (lower == "proposed") return Approach::kProposed;
  if (lower == "baseline") return Approach::kBaseline;
  throw ConfigError("unknown approach '" + s + "' (expected Proposed, Baseline or Both)");
}

const char* approach_name(Approach a) {
  switch (a) {
    case Approach::kProposed: return "Proposed";
    case Approach::kBaseline: return "Baseline";
    case Approach::kBoth: return "Both";
  }
  return "Both";
}

ExperimentRequest parse_kind(const json& j) {
  ExperimentRequest r;
  if (j.is_string()) {
    // "A:Bird:3" or "B:12"
    const auto s = j.get<std::string>();
    const auto first = s.find(':');
    const std::string type = s.substr(0, first);
    if (type == "A" || type == "AType") {
      const auto second = s.find(':', first + 1);
      if (first == std::string::npos || second == std::string::npos) {
        throw ConfigError("A-type kind must look like A:<species>:<n>, got '" + s + "'");
      }
      r.kind = ExperimentKind::kAType;
      r.species = s.substr(first + 1, second - first - 1);
      r.n = std::stoul(s.substr(second + 1));
    } else if (type == "B" || type == "BType") {
      r.kind = ExperimentKind::kBType;
      r.k = first == std::string::npos ? 12 : std::stoul(s.substr(first + 1));
    } else {
      throw ConfigError("unknown experiment kind '" + s + "'");
    }
    return r;
  }
  reject_unknown(j, {"type", "species", "n", "k"}, "kind");
  const auto type = j.at("type").get<std::string>();
  if (type == "A" || type == "AType") {
    r.kind = ExperimentKind::kAType;
    r.species = j.at("species").get<std::string>();
    r.n = j.value("n", std::size_t{3});
  } else if (type == "B" || type == "BType") {
    r.kind = ExperimentKind::kBType;
    r.k = j.value("k", std::size_t{12});
  } else {
    throw ConfigError("unknown experiment kind '" + type + "'");
  }
  return r;
}

json kind_to_json(const ExperimentRequest& r) {
  if (r.kind == ExperimentKind::kAType) return {{"type", "AType"}, {"species", r.species}, {"n", r.n}};
  return {{"type", "BType"}, {"k", r.k}};
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

FeatureSet first_variant(const FeatureSet& src) {
  if (src.n_variants == 1) return src;
  FeatureSet out = src;
  out.n_variants = 1;
  out.data.resize(src.n_images * src.dim);
  for (std::size_t i = 0; i < src.n_images; ++i) {
    const auto v = src.vec(i, 0);
    std::copy(v.begin(), v.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * src.dim));
  }
  return out;
}

}  // namespace

void TrainOverrides::apply(TrainConfig& cfg) const {
  if (base_lr) cfg.sgd.base_lr = *base_lr;
  if (momentum) cfg.sgd.momentum = *momentum;
  if (step_size) cfg.sgd.step_size = *step_size;
  if (gamma) cfg.sgd.gamma = *gamma;
  if (max_epochs) cfg.max_epochs = *max_epochs;
  if (batch_size) cfg.batch_size = *batch_size;
  if (early_stop) cfg.early_stop.enabled = *early_stop;
  if (patience) cfg.early_stop.patience = *patience;
  if (min_delta) cfg.early_stop.min_delta = *min_delta;
}

TrainOverrides TrainOverrides::from_json(const json& j) {
  TrainOverrides o;
  read_opt(j, "base_lr", o.base_lr);
  read_opt(j, "momentum", o.momentum);
  read_opt(j, "step_size", o.step_size);
  read_opt(j, "gamma", o.gamma);
  read_opt(j, "max_epochs", o.max_epochs);
  read_opt(j, "batch_size", o.batch_size);
  read_opt(j, "early_stop", o.early_stop);
  read_opt(j, "patience", o.patience);
  read_opt(j, "min_delta", o.min_delta);
  return o;
}

json TrainOverrides::to_json() const {
  json j = json::object();
  if (base_lr) j["base_lr"] = *base_lr;
  if (momentum) j["momentum"] = *momentum;
  if (step_size) j["step_size"] = *step_size;
  if (gamma) j["gamma"] = *gamma;
  if (max_epochs) j["max_epochs"] = *max_epochs;
  if (batch_size) j["batch_size"] = *batch_size;
  if (early_stop) j["early_stop"] = *early_stop;
  if (patience) j["patience"] = *patience;
  if (min_delta) j["min_delta"] = *min_delta;
  return j;
}

void ExperimentConfig::validate() const {
  if (kinds.empty()) throw ConfigError("experiment config lists no kind");
  if (fractions.empty()) throw ConfigError("experiment config lists no split fraction");
  if (repeats == 0) throw ConfigError("repeats must be >= 1");
  if (folds == 0 || folds > 30) throw ConfigError("folds must lie in 1..30");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  for (auto kind : {HeadKind::kProposed, HeadKind::kBaseline}) {
    try {
      train_config(kind).validate();
      for (const auto& cand : cv_grid) {
        TrainConfig c = train_config(kind);
        cand.apply(c);
        c.validate();
      }
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("invalid training settings: ") + e.what());
    }
  }
}

TrainConfig ExperimentConfig::train_config(HeadKind kind) const {
  TrainConfig cfg = TrainConfig::defaults_for(kind);
  train.apply(cfg);
  (kind == HeadKind::kProposed ? proposed : baseline).apply(cfg);
  cfg.threads = threads;
  cfg.seed = seed;
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    reject_unknown(j,
                   {"backbone", "approach", "kind", "split", "train", "cv_grid", "seed", "threads", "repeats", "folds",
                    "parallel_cells"},
                   "experiment config");
    ExperimentConfig c;
    c.backbone = j.value("backbone", std::string());
    if (j.contains("approach")) c.approach = parse_approach(j.at("approach").get<std::string>());
    if (!j.contains("kind")) throw ConfigError("experiment config needs a 'kind'");
    const auto& kind = j.at("kind");
    if (kind.is_array()) {
      for (const auto& k : kind) c.kinds.push_back(parse_kind(k));
    } else {
      c.kinds.push_back(parse_kind(kind));
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      reject_unknown(s, {"f", "J", "seed"}, "split");
      if (s.contains("f")) {
        c.fractions.clear();
        if (s.at("f").is_array()) {
          c.fractions = s.at("f").get<std::vector<double>>();
        } else {
          c.fractions.push_back(s.at("f").get<double>());
        }
      }
      c.images_per_class = s.value("J", std::size_t{0});
      c.split_seed = s.value("seed", std::uint64_t{0});
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      json common = t;
      common.erase("proposed");
      common.erase("baseline");
      reject_unknown(common,
                     {"base_lr", "momentum", "step_size", "gamma", "max_epochs", "batch_size", "early_stop",
                      "patience", "min_delta"},
                     "train");
      c.train = TrainOverrides::from_json(common);
      if (t.contains("proposed")) c.proposed = TrainOverrides::from_json(t.at("proposed"));
      if (t.contains("baseline")) c.baseline = TrainOverrides::from_json(t.at("baseline"));
    }
    if (j.contains("cv_grid")) {
      for (const auto& g : j.at("cv_grid")) c.cv_grid.push_back(TrainOverrides::from_json(g));
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.threads = j.value("threads", 1u);
    c.repeats = j.value("repeats", std::size_t{1});
    c.folds = j.value("folds", std::size_t{5});
    c.parallel_cells = j.value("parallel_cells", false);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
}

json ExperimentConfig::to_json() const {
  json kinds_json = json::array();
  for (const auto& k : kinds) kinds_json.push_back(kind_to_json(k));
  json train_json = train.to_json();
  train_json["proposed"] = proposed.to_json();
  train_json["baseline"] = baseline.to_json();
  json grid = json::array();
  for (const auto& g : cv_grid) grid.push_back(g.to_json());
  return {{"backbone", backbone},
          {"approach", approach_name(approach)},
          {"kind", kinds_json},
          {"split", {{"f", fractions}, {"J", images_per_class}, {"seed", split_seed}}},
          {"train", train_json},
          {"cv_grid", grid},
          {"seed", seed},
          {"threads", threads},
          {"repeats", repeats},
          {"folds", folds},
          {"parallel_cells", parallel_cells}};
}

Gain compute_gain(double ta_baseline, double ta_proposed) {
  for (double v : {ta_baseline, ta_proposed}) {
    if (!(v >= 0.0 && v <= 100.0)) throw ValidationError("accuracy " + std::to_string(v) + " outside [0, 100]");
  }
  Gain g;
  g.pp = ta_proposed - ta_baseline;
  if (ta_baseline > 0.0) g.rel_pct = 100.0 * (ta_proposed - ta_baseline) / ta_baseline;
  return g;
}

double tt_reduction_pct(double tt_baseline, double tt_proposed) { return 100.0 * (1.0 - tt_proposed / tt_baseline); }

CrossValidation cross_validate(const HeadFactory& factory, const FeatureSet& train, const FeatureSet& val,
                               std::span<const TrainConfig> candidates, std::size_t folds, std::uint64_t seed) {
  if (candidates.empty()) throw ValidationError("cross-validation needs at least one candidate");
  CrossValidation cv;
  if (candidates.size() == 1) return cv;

  FeatureSet pool = first_variant(train);
  pool.data.insert(pool.data.end(), val.data.begin(), val.data.end());
  pool.labels.insert(pool.labels.end(), val.labels.begin(), val.labels.end());
  pool.n_images += val.n_images;
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  const auto fold_of = stratified_folds(pool.labels, folds, seed);

  cv.mean_accuracy.assign(candidates.size(), 0.0);
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> fit_ids, held_ids;
    for (std::size_t i = 0; i < pool.n_images; ++i) (fold_of[i] == k ? held_ids : fit_ids).push_back(i);
    const FeatureSet fit = pool.subset(fit_ids);
    const FeatureSet held = pool.subset(held_ids);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      Rng init = Rng(seed).derive("cv-init").derive(k);
      Head head = factory(init);
      TrainConfig cfg = candidates[c];
      cfg.seed = Rng(seed).derive("cv-order").derive(k).seed();
      train_head(head, fit, held, cfg);
      cv.mean_accuracy[c] += evaluate(head, held, cfg.threads) / static_cast<double>(folds);
    }
  }
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double best = cv.mean_accuracy[cv.chosen];
    if (cv.mean_accuracy[c] > best ||
        (cv.mean_accuracy[c] == best && candidates[c].sgd.base_lr < candidates[cv.chosen].sgd.base_lr)) {
      cv.chosen = c;
    }
  }
  return cv;
}

namespace {

struct Cell {
  ExperimentRequest request;
  double f = 0.0;
};

struct ApproachRuns {
  std::vector<double> ta, tt, epochs;
  std::size_t params = 0;
  double lr = 0.0;
  std::vector<std::string> warnings;
};

ApproachRuns run_approach(const ExperimentConfig& cfg, const Dataset& ds, const ExperimentClasses& classes,
                          const SplitSpec& split, HeadKind kind, const Logger& log) {
  const TaskSets sets = make_task_sets(ds, classes, split, Dataset::input_tensor(kind));
  const std::size_t n = classes.classes.size();

  std::optional<AffineParams> pretrained;
  if (kind == HeadKind::kProposed) {
    pretrained = ds.classifier();
  } else {
    pretrained = ds.penultimate();
  }
  const std::size_t feature_dim = sets.train.dim;
  const HeadFactory factory = [&](Rng& rng) {
    if (kind == HeadKind::kProposed) return build_proposed_head(*pretrained, n, rng);
    return build_baseline_head(pretrained ? &*pretrained : nullptr, feature_dim, n, rng);
  };

  TrainConfig chosen = cfg.train_config(kind);
  if (cfg.folds > 1 && cfg.cv_grid.size() > 1) {
    std::vector<TrainConfig> candidates;
    for (const auto& g : cfg.cv_grid) {
      TrainConfig c = cfg.train_config(kind);
      g.apply(c);
      candidates.push_back(c);
    }
    const auto cv = cross_validate(factory, sets.train, sets.val, candidates, cfg.folds,
                                   Rng(cfg.seed).derive("cv").derive(static_cast<std::uint64_t>(kind)).seed());
    chosen = candidates[cv.chosen];
    if (log) log(std::string(to_string(kind)) + ": cross-validation chose base_lr " + std::to_string(chosen.sgd.base_lr));
  }

  ApproachRuns runs;
  runs.lr = chosen.sgd.base_lr;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    Rng init = Rng(cfg.seed).derive(std::string("init/") + to_string(kind)).derive(r);
    Head head = factory(init);
    TrainConfig run_cfg = chosen;
    run_cfg.seed = Rng(cfg.seed).derive("order").derive(r).seed();
    TrainResult result = train_head(head, sets.train, sets.val, run_cfg);
    const double ta = evaluate(head, sets.test, run_cfg.threads);
    runs.ta.push_back(ta);
    runs.tt.push_back(result.train_time_s);
    runs.epochs.push_back(static_cast<double>(result.epochs_run));
    runs.params = result.param_count;
    for (auto& w : result.warnings) {
      if (std::find(runs.warnings.begin(), runs.warnings.end(), w) == runs.warnings.end()) runs.warnings.push_back(w);
    }
    if (log) {
      log(classes.group() + " n=" + std::to_string(n) + " f=" + std::to_string(split.f) + " " + to_string(kind) +
          " run " + std::to_string(r + 1) + "/" + std::to_string(cfg.repeats) + ": TA " + std::to_string(ta) +
          "%, TT " + format_seconds(result.train_time_s) + " s, " + std::to_string(result.epochs_run) + " epochs");
    }
  }
  return runs;
}

ExperimentRow run_cell(const ExperimentConfig& cfg, const Dataset& ds, const Cell& cell, const Logger& log) {
  const auto classes = compose_experiment(cell.request, ds.manifest().species_layout(), cfg.seed);
  SplitSpec split{cell.f, cfg.images_per_class, cfg.split_seed};
  split = resolve_split(ds, classes, split);
  try {
    split.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }

  ExperimentRow row;
  row.group = classes.group();
  row.kind = cell.request.kind == ExperimentKind::kAType ? "A" : "B";
  row.backbone = ds.manifest().backbone;
  row.n_classes = classes.classes.size();
  row.f = cell.f;
  row.train_per_class = split.train_count();
  for (const auto& c : classes.classes) row.classes.push_back(c.name);

  if (ds.has(kLogits)) {
    const FeatureSet& logits = ds.tensor(kLogits);
    double sum = 0.0;
    for (const auto& c : classes.classes) {
      sum += class_similarity(logits.subset(ds.images_of(*ds.manifest().class_index(c.name)))).similarity_pct;
    }
    row.similarity_pct = sum / static_cast<double>(classes.classes.size());
  }

  auto record = [&](HeadKind kind, std::optional<double>& ta, std::optional<double>& ta_std,
                    std::optional<double>& tt, std::optional<double>& tt_std, std::optional<double>& epochs,
                    std::optional<std::size_t>& params, std::optional<double>& lr) {
    const auto runs = run_approach(cfg, ds, classes, split, kind, log);
    ta = mean_of(runs.ta);
    ta_std = sample_std(runs.ta);
    tt = mean_of(runs.tt);
    tt_std = sample_std(runs.tt);
    epochs = mean_of(runs.epochs);
    params = runs.params;
    lr = runs.lr;
    for (const auto& w : runs.warnings) row.warnings.push_back(std::string(to_string(kind)) + ": " + w);
  };
  if (cfg.approach != Approach::kProposed) {
    record(HeadKind::kBaseline, row.ta_baseline, row.ta_baseline_std, row.tt_baseline_s, row.tt_baseline_std,
           row.epochs_baseline, row.params_baseline, row.lr_baseline);
  }
  if (cfg.approach != Approach::kBaseline) {
    record(HeadKind::kProposed, row.ta_proposed, row.ta_proposed_std, row.tt_proposed_s, row.tt_proposed_std,
           row.epochs_proposed, row.params_proposed, row.lr_proposed);
  }
  if (row.ta_baseline && row.ta_proposed) {
    const auto g = compute_gain(*row.ta_baseline, *row.ta_proposed);
    row.gain_pp = g.pp;
    row.gain_rel_pct = g.rel_pct;
  }
  if (row.tt_baseline_s && row.tt_proposed_s && *row.tt_baseline_s > 0.0) {
    row.tt_reduction_pct = tt_reduction_pct(*row.tt_baseline_s, *row.tt_proposed_s);
    if (*row.tt_proposed_s > 0.0) row.speedup = *row.tt_baseline_s / *row.tt_proposed_s;
  }
  return row;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds, const Logger& log) {
  cfg.validate();
  if (!cfg.backbone.empty() && cfg.backbone != ds.manifest().backbone) {
    throw ConfigError("config asks for backbone '" + cfg.backbone + "' but the features come from '" +
                      ds.manifest().backbone + "'");
  }
  std::vector<Cell> cells;
  for (const auto& k : cfg.kinds) {
    for (double f : cfg.fractions) cells.push_back({k, f});
  }

  ExperimentReport report;
  report.threads = cfg.threads;
  report.seed = cfg.seed;
  report.repeats = cfg.repeats;
  report.folds = cfg.folds;
  if (!cfg.parallel_cells) {
    for (const auto& cell : cells) report.rows.push_back(run_cell(cfg, ds, cell, log));
    return report;
  }
  std::vector<std::future<ExperimentRow>> pending;
  for (const auto& cell : cells) {
    pending.push_back(std::async(std::launch::async, [&cfg, &ds, cell, &log] { return run_cell(cfg, ds, cell, log); }));
  }
  for (auto& p : pending) report.rows.push_back(p.get());
  return report;
}

json report_to_json(const ExperimentReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    json j;
    j["group"] = r.group;
    j["kind"] = r.kind;
    j["backbone"] = r.backbone;
    j["n_classes"] = r.n_classes;
    j["f"] = r.f;
    j["train_per_class"] = r.train_per_class;
    write_opt(j, "similarity_pct", r.similarity_pct);
    write_opt(j, "TA_baseline", r.ta_baseline);
    write_opt(j, "TA_baseline_std", r.ta_baseline_std);
    write_opt(j, "TA_proposed", r.ta_proposed);
    write_opt(j, "TA_proposed_std", r.ta_proposed_std);
    write_opt(j, "gain_pp", r.gain_pp);
    write_opt(j, "gain_rel_pct", r.gain_rel_pct);
    write_opt(j, "TT_baseline_s", r.tt_baseline_s);
    write_opt(j, "TT_baseline_std", r.tt_baseline_std);
    write_opt(j, "TT_proposed_s", r.tt_proposed_s);
    write_opt(j, "TT_proposed_std", r.tt_proposed_std);
    write_opt(j, "TT_reduction_pct", r.tt_reduction_pct);
    write_opt(j, "speedup", r.speedup);
    write_opt(j, "epochs_baseline", r.epochs_baseline);
    write_opt(j, "epochs_proposed", r.epochs_proposed);
    write_opt(j, "params_baseline", r.params_baseline);
    write_opt(j, "params_proposed", r.params_proposed);
    write_opt(j, "lr_baseline", r.lr_baseline);
    write_opt(j, "lr_proposed", r.lr_proposed);
    j["classes"] = r.classes;
    j["warnings"] = r.warnings;
    rows.push_back(std::move(j));
  }
  return {{"threads", report.threads},
          {"seed", report.seed},
          {"repeats", report.repeats},
          {"folds", report.folds},
          {"rows", rows}};
}

ExperimentReport report_from_json(const json& j) {
  try {
    ExperimentReport report;
    report.threads = j.value("threads", 1u);
    report.seed = j.value("seed", std::uint64_t{0});
    report.repeats = j.value("repeats", std::size_t{1});
    report.folds = j.value("folds", std::size_t{1});
    for (const auto& jr : j.at("rows")) {
      ExperimentRow r;
      r.group = jr.at("group").get<std::string>();
      r.kind = jr.value("kind", std::string("A"));
      r.backbone = jr.value("backbone", std::string());
      r.n_classes = jr.at("n_classes").get<std::size_t>();
      r.f = jr.at("f").get<double>();
      r.train_per_class = jr.value("train_per_class", std::size_t{0});
      read_opt(jr, "similarity_pct", r.similarity_pct);
      read_opt(jr, "TA_baseline", r.ta_baseline);
      read_opt(jr, "TA_baseline_std", r.ta_baseline_std);
      read_opt(jr, "TA_proposed", r.ta_proposed);
      read_opt(jr, "TA_proposed_std", r.ta_proposed_std);
      read_opt(jr, "gain_pp", r.gain_pp);
      read_opt(jr, "gain_rel_pct", r.gain_rel_pct);
      read_opt(jr, "TT_baseline_s", r.tt_baseline_s);
      read_opt(jr, "TT_baseline_std", r.tt_baseline_std);
      read_opt(jr, "TT_proposed_s", r.tt_proposed_s);
      read_opt(jr, "TT_proposed_std", r.tt_proposed_std);
      read_opt(jr, "TT_reduction_pct", r.tt_reduction_pct);
      read_opt(jr, "speedup", r.speedup);
      read_opt(jr, "epochs_baseline", r.epochs_baseline);
      read_opt(jr, "epochs_proposed", r.epochs_proposed);
      read_opt(jr, "params_baseline", r.params_baseline);
      read_opt(jr, "params_proposed", r.params_proposed);
      read_opt(jr, "lr_baseline", r.lr_baseline);
      read_opt(jr, "lr_proposed", r.lr_proposed);
      if (jr.contains("classes")) r.classes = jr.at("classes").get<std::vector<std::string>>();
      if (jr.contains("warnings")) r.warnings = jr.at("warnings").get<std::vector<std::string>>();
      report.rows.push_back(std::move(r));
    }
    return report;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

ExperimentReport without_timings(ExperimentReport report) {
  for (auto& r : report.rows) {
    r.tt_baseline_s.reset();
    r.tt_baseline_std.reset();
    r.tt_proposed_s.reset();
    r.tt_proposed_std.reset();
    r.tt_reduction_pct.reset();
    r.speedup.reset();
  }
  return report;
}

}  // namespace tlh
