#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dataset.hpp"
#include "error.hpp"
#include "experiments.hpp"

namespace tlh {
namespace {

using nlohmann::json;

// Minimal RFC 4180 reader: quoted fields may hold commas and doubled quotes.
std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows(1);
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      rows.back().push_back(field);
      field.clear();
    } else if (c == '\n') {
      rows.back().push_back(field);
      field.clear();
      rows.emplace_back();
    } else {
      field += c;
    }
  }
  if (rows.back().empty()) rows.pop_back();
  return rows;
}

ExperimentRow sample_row(const std::string& group, double ta_b, double ta_p, double tt_b, double tt_p) {
  ExperimentRow r;
  r.group = group;
  r.kind = "A";
  r.backbone = "ResNet18";
  r.n_classes = 3;
  r.f = 0.1;
  r.train_per_class = 50;
  r.similarity_pct = 42.123456;
  r.ta_baseline = ta_b;
  r.ta_proposed = ta_p;
  r.ta_baseline_std = 0.5;
  r.ta_proposed_std = 0.25;
  const auto g = compute_gain(ta_b, ta_p);
  r.gain_pp = g.pp;
  r.gain_rel_pct = g.rel_pct;
  r.tt_baseline_s = tt_b;
  r.tt_proposed_s = tt_p;
  r.tt_reduction_pct = tt_reduction_pct(tt_b, tt_p);
  r.speedup = tt_b / tt_p;
  r.epochs_baseline = 25;
  r.epochs_proposed = 9;
  r.params_baseline = 2565;
  r.params_proposed = 516003;
  r.lr_baseline = 1e-3;
  r.lr_proposed = 1e-2;
  r.classes = {"a", "b, with comma", "c \"quoted\""};
  r.warnings = {"note"};
  return r;
}

ExperimentReport sample_report() {
  ExperimentReport rep;
  rep.rows.push_back(sample_row("Bird", 61.2, 64.2, 990.0, 15.0));
  rep.rows.push_back(sample_row("Pepper, red", 80.0 / 3.0, 100.0 / 7.0, 1.0 / 3.0, 0.1));
  rep.rows[1].similarity_pct.reset();
  rep.rows[1].gain_rel_pct.reset();
  rep.threads = 2;
  rep.seed = 5;
  return rep;
}

Dataset tiny_dataset() {
  SynthOptions o;
  o.backbone = "ResNet18";
  o.species = {"Bird", "Fruit"};
  o.separation = {4.0};
  o.classes_per_species = 3;
  o.images_per_class = 20;
  o.dim = 16;
  auto [tensors, manifest] = synth_dataset(o);
  return Dataset(std::move(manifest), std::move(tensors));
}

ExperimentConfig tiny_config() {
  return ExperimentConfig::from_json(json::parse(R"({
    "kind": ["A:Bird:3", {"type": "BType", "k": 4}],
    "split": {"f": 0.2, "J": 20, "seed": 1},
    "train": {"max_epochs": 4},
    "seed": 3
  })"));
}

TEST(Gain, Examples) {
  const auto g = compute_gain(61.2, 64.2);
  EXPECT_NEAR(g.pp, 3.0, 1e-12);
  ASSERT_TRUE(g.rel_pct.has_value());
  EXPECT_NEAR(*g.rel_pct, 4.90, 0.005);
  const auto same = compute_gain(70.0, 70.0);
  EXPECT_EQ(same.pp, 0.0);
  EXPECT_EQ(*same.rel_pct, 0.0);
  const auto neg = compute_gain(50.0, 25.0);
  EXPECT_EQ(neg.pp, -25.0);
  EXPECT_EQ(*neg.rel_pct, -50.0);
  EXPECT_FALSE(compute_gain(0.0, 10.0).rel_pct.has_value());
  EXPECT_THROW(compute_gain(101.0, 10.0), ValidationError);
}

TEST(Gain, AntisymmetricUnderSwap) {
  for (auto [b, p] : {std::pair{61.2, 64.2}, std::pair{10.0, 90.0}, std::pair{33.3, 12.5}}) {
    const auto fwd = compute_gain(b, p);
    const auto back = compute_gain(p, b);
    EXPECT_EQ(fwd.pp, -back.pp);
    // Re-basing the relative gain onto the other approach recovers the negation.
    EXPECT_NEAR(*back.rel_pct * p / b, -*fwd.rel_pct, 1e-9);
  }
}

TEST(Gain, TimeReduction) {
  EXPECT_NEAR(tt_reduction_pct(990.0, 15.0), 98.5, 0.05);
  EXPECT_EQ(tt_reduction_pct(10.0, 10.0), 0.0);
}

TEST(FormatSeconds, TwoSignificantDigits) {
  EXPECT_EQ(format_seconds(990.0), "990");
  EXPECT_EQ(format_seconds(15.04), "15");
  EXPECT_EQ(format_seconds(1.234), "1.2");
  EXPECT_EQ(format_seconds(0.0456), "0.046");
  EXPECT_EQ(format_seconds(0.0), "0");
}

TEST(ExperimentConfig, ParsesAndRoundTrips) {
  const auto cfg = tiny_config();
  ASSERT_EQ(cfg.kinds.size(), 2u);
  EXPECT_EQ(cfg.kinds[0].kind, ExperimentKind::kAType);
  EXPECT_EQ(cfg.kinds[0].species, "Bird");
  EXPECT_EQ(cfg.kinds[1].k, 4u);
  EXPECT_EQ(cfg.images_per_class, 20u);
  EXPECT_EQ(cfg.folds, 5u);
  const auto again = ExperimentConfig::from_json(cfg.to_json());
  EXPECT_EQ(again.to_json(), cfg.to_json());
  EXPECT_EQ(cfg.train_config(HeadKind::kProposed).max_epochs, 4u);
  EXPECT_EQ(cfg.train_config(HeadKind::kBaseline).sgd.momentum, 0.9);
}

TEST(ExperimentConfig, Rejections) {
  EXPECT_THROW(ExperimentConfig::from_json(json::parse(R"({"split": {"f": 0.1}})")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json::parse(R"({"kind": ["A:Bird:3"], "bogus": 1})")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json::parse(R"({"kind": ["Z:1"]})")), ConfigError);
  auto cfg = tiny_config();
  cfg.folds = 31;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.repeats = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(CrossValidate, SingleCandidateReturnedUnchanged) {
  const FeatureSet all = synth_features(3, 25, 8, 5.0, 1);
  const std::vector<TrainConfig> one{TrainConfig::defaults_for(HeadKind::kBaseline)};
  const HeadFactory factory = [](Rng& rng) { return build_baseline_head(nullptr, 8, 3, rng); };
  const auto cv = cross_validate(factory, all, all, one, 5, 0);
  EXPECT_EQ(cv.chosen, 0u);
}

TEST(CrossValidate, DominantCandidateChosen) {
  const FeatureSet all = synth_features(3, 25, 8, 6.0, 2);
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < all.n_images; ++i) (i % 25 < 15 ? a : b).push_back(i);
  TrainConfig good = TrainConfig::defaults_for(HeadKind::kBaseline);
  good.sgd.base_lr = 0.05;
  good.max_epochs = 10;
  TrainConfig useless = good;
  useless.sgd.base_lr = 1e-9;
  useless.max_epochs = 1;
  const std::vector<TrainConfig> candidates{useless, good};
  const HeadFactory factory = [](Rng& rng) { return build_baseline_head(nullptr, 8, 3, rng); };
  const auto cv = cross_validate(factory, all.subset(a), all.subset(b), candidates, 5, 3);
  EXPECT_EQ(cv.chosen, 1u);
  ASSERT_EQ(cv.mean_accuracy.size(), 2u);
  EXPECT_GT(cv.mean_accuracy[1], cv.mean_accuracy[0]);
}

TEST(CrossValidate, TooManyFoldsRejected) {
  const FeatureSet all = synth_features(3, 4, 8, 5.0, 1);
  const std::vector<TrainConfig> two{TrainConfig::defaults_for(HeadKind::kBaseline),
                                     TrainConfig::defaults_for(HeadKind::kProposed)};
  const HeadFactory factory = [](Rng& rng) { return build_baseline_head(nullptr, 8, 3, rng); };
  EXPECT_THROW(cross_validate(factory, all, all, two, 30, 0), ValidationError);
}

TEST(RunExperiment, ProducesRowsForEveryCell) {
  const Dataset ds = tiny_dataset();
  const auto report = run_experiment(tiny_config(), ds);
  ASSERT_EQ(report.rows.size(), 2u);
  const auto& a = report.rows[0];
  EXPECT_EQ(a.group, "Bird");
  EXPECT_EQ(a.kind, "A");
  EXPECT_EQ(a.n_classes, 3u);
  EXPECT_EQ(a.train_per_class, 4u);
  ASSERT_TRUE(a.ta_baseline && a.ta_proposed && a.gain_pp && a.tt_baseline_s && a.tt_proposed_s);
  EXPECT_EQ(*a.gain_pp, *a.ta_proposed - *a.ta_baseline);
  EXPECT_NEAR(*a.tt_reduction_pct, 100.0 * (1.0 - *a.tt_proposed_s / *a.tt_baseline_s), 1e-9);
  EXPECT_TRUE(a.similarity_pct.has_value());
  EXPECT_FALSE(a.warnings.empty());
  EXPECT_EQ(report.rows[1].group, "Mixed");
  EXPECT_EQ(report.rows[1].n_classes, 4u);
}

TEST(RunExperiment, DeterministicApartFromTimings) {
  const Dataset ds = tiny_dataset();
  auto cfg = tiny_config();
  const auto a = run_experiment(cfg, ds);
  cfg.parallel_cells = true;
  const auto b = run_experiment(cfg, ds);
  EXPECT_EQ(without_timings(a), without_timings(b));
}

TEST(RunExperiment, UnknownSpeciesIsConfigError) {
  const Dataset ds = tiny_dataset();
  auto cfg = ExperimentConfig::from_json(json::parse(R"({"kind": ["A:Cat:3"], "split": {"f": 0.2, "J": 20}})"));
  EXPECT_THROW(run_experiment(cfg, ds), ConfigError);
  cfg = tiny_config();
  cfg.backbone = "VGG19";
  EXPECT_THROW(run_experiment(cfg, ds), ConfigError);
}

TEST(RunExperiment, SingleApproach) {
  const Dataset ds = tiny_dataset();
  auto cfg = tiny_config();
  cfg.approach = Approach::kProposed;
  const auto report = run_experiment(cfg, ds);
  EXPECT_TRUE(report.rows[0].ta_proposed.has_value());
  EXPECT_FALSE(report.rows[0].ta_baseline.has_value());
  EXPECT_FALSE(report.rows[0].gain_pp.has_value());
}

TEST(Report, JsonRoundTripIsLossless) {
  const auto rep = sample_report();
  EXPECT_EQ(report_from_json(report_to_json(rep)), rep);
  EXPECT_EQ(report_from_json(json::parse(emit_tables(rep, TableFormat::kJson))), rep);
}

TEST(Report, CsvCarriesEveryNumericFieldAtOneDecimal) {
  const auto rep = sample_report();
  const auto rows = read_csv(emit_tables(rep, TableFormat::kCsv));
  ASSERT_EQ(rows.size(), 3u);
  const auto& header = rows[0];
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    EXPECT_NE(it, header.end()) << name;
    return static_cast<std::size_t>(it - header.begin());
  };
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& r = rep.rows[i];
    const auto& cells = rows[i + 1];
    ASSERT_EQ(cells.size(), header.size());
    EXPECT_EQ(cells[col("group")], r.group);
    EXPECT_EQ(std::stoul(cells[col("n_classes")]), r.n_classes);
    const std::pair<const char*, std::optional<double>> fields[] = {
        {"similarity_pct", r.similarity_pct}, {"TA_baseline", r.ta_baseline},     {"TA_proposed", r.ta_proposed},
        {"gain_pp", r.gain_pp},               {"gain_rel_pct", r.gain_rel_pct},   {"TT_baseline_s", r.tt_baseline_s},
        {"TT_proposed_s", r.tt_proposed_s},   {"TT_reduction_pct", r.tt_reduction_pct},
        {"speedup", r.speedup},               {"epochs_baseline", r.epochs_baseline}};
    for (const auto& [name, value] : fields) {
      const std::string& cell = cells[col(name)];
      if (!value) {
        EXPECT_EQ(cell, "") << name;
        continue;
      }
      ASSERT_FALSE(cell.empty()) << name;
      const auto dot = cell.find('.');
      ASSERT_NE(dot, std::string::npos) << name << " " << cell;
      EXPECT_EQ(cell.size() - dot - 1, 1u) << name << " " << cell;
      EXPECT_NEAR(std::stod(cell), *value, 0.05 + 1e-12) << name;
    }
    EXPECT_EQ(std::stoul(cells[col("params_proposed")]), *r.params_proposed);
  }
}

TEST(Report, AverageRowIsUnweightedMean) {
  const auto rep = sample_report();
  const auto avg = average_row(rep.rows);
  EXPECT_EQ(avg.group, "Average");
  EXPECT_NEAR(*avg.ta_baseline, (*rep.rows[0].ta_baseline + *rep.rows[1].ta_baseline) / 2.0, 1e-9);
  EXPECT_NEAR(*avg.tt_proposed_s, (*rep.rows[0].tt_proposed_s + *rep.rows[1].tt_proposed_s) / 2.0, 1e-9);
  EXPECT_NEAR(*avg.similarity_pct, *rep.rows[0].similarity_pct, 1e-9);
  EXPECT_NEAR(*avg.gain_rel_pct, *rep.rows[0].gain_rel_pct, 1e-9);
}

TEST(Report, SingleRowAverageIsIdentical) {
  ExperimentReport rep;
  rep.rows.push_back(sample_row("Bird", 61.2, 64.2, 990.0, 15.0));
  const auto avg = average_row(rep.rows);
  const auto& r = rep.rows[0];
  EXPECT_EQ(avg.ta_baseline, r.ta_baseline);
  EXPECT_EQ(avg.ta_proposed, r.ta_proposed);
  EXPECT_EQ(avg.gain_pp, r.gain_pp);
  EXPECT_EQ(avg.gain_rel_pct, r.gain_rel_pct);
  EXPECT_EQ(avg.tt_baseline_s, r.tt_baseline_s);
  EXPECT_EQ(avg.tt_proposed_s, r.tt_proposed_s);
  EXPECT_EQ(avg.similarity_pct, r.similarity_pct);

  const std::string text = emit_tables(rep, TableFormat::kText);
  std::istringstream lines(text);
  std::string line, bird, average;
  while (std::getline(lines, line)) {
    if (bird.empty() && line.rfind("Bird", 0) == 0) bird = line;
    if (average.empty() && line.rfind("Average", 0) == 0) average = line;
  }
  ASSERT_FALSE(bird.empty()) << text;
  ASSERT_FALSE(average.empty()) << text;
  auto tokens = [](const std::string& l) {
    std::istringstream in(l);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
  };
  const auto b = tokens(bird), a = tokens(average);
  ASSERT_GE(b.size(), a.size());
  // The Average row has no CNN cell; every value cell matches.
  EXPECT_EQ(std::vector<std::string>(b.end() - static_cast<std::ptrdiff_t>(a.size() - 1), b.end()),
            std::vector<std::string>(a.begin() + 1, a.end()))
      << bird << "\n" << average;
}

TEST(Report, TextShowsTimeReduction) {
  ExperimentReport rep;
  rep.rows.push_back(sample_row("Bird", 61.2, 64.2, 990.0, 15.0));
  const std::string text = emit_tables(rep, TableFormat::kText);
  EXPECT_NE(text.find("TT reduction (%)"), std::string::npos) << text;
  EXPECT_NE(text.find("98.5"), std::string::npos) << text;
  EXPECT_NE(text.find("confidence similarity"), std::string::npos);
}

TEST(Report, FormatParsing) {
  EXPECT_EQ(parse_table_format("csv"), TableFormat::kCsv);
  EXPECT_EQ(parse_table_format("json"), TableFormat::kJson);
  EXPECT_EQ(parse_table_format("text"), TableFormat::kText);
  EXPECT_THROW(parse_table_format("xml"), ConfigError);
}

TEST(Report, WithoutTimingsClearsOnlyTimingFields) {
  const auto rep = sample_report();
  const auto stripped = without_timings(rep);
  EXPECT_FALSE(stripped.rows[0].tt_baseline_s.has_value());
  EXPECT_FALSE(stripped.rows[0].speedup.has_value());
  EXPECT_EQ(stripped.rows[0].ta_baseline, rep.rows[0].ta_baseline);
}

}  // namespace
}  // namespace tlh
