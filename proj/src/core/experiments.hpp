#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "heads.hpp"
#include "protocol.hpp"

namespace tlh {

enum class Approach { kProposed, kBaseline, kBoth };

// Partial TrainConfig; unset fields keep the per-approach defaults.
struct TrainOverrides {
  std::optional<double> base_lr;
  std::optional<double> momentum;
  std::optional<std::size_t> step_size;
  std::optional<double> gamma;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> batch_size;
  std::optional<bool> early_stop;
  std::optional<std::size_t> patience;
  std::optional<double> min_delta;

  void apply(TrainConfig& cfg) const;
  static TrainOverrides from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ExperimentConfig {
  std::string backbone;  // empty: take the manifest's
  Approach approach = Approach::kBoth;
  std::vector<ExperimentRequest> kinds;
  std::vector<double> fractions = {0.10};
  std::size_t images_per_class = 0;  // J; 0 uses the smallest selected class
  std::uint64_t split_seed = 0;
  TrainOverrides train;
  TrainOverrides proposed;
  TrainOverrides baseline;
  std::vector<TrainOverrides> cv_grid;  // candidates for cross-validation
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t repeats = 1;
  std::size_t folds = 5;
  bool parallel_cells = false;

  void validate() const;
  TrainConfig train_config(HeadKind kind) const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ExperimentRow {
  std::string group;  // species for A-type, "Mixed" for B-type
  std::string kind;   // "A" or "B"
  std::string backbone;
  std::size_t n_classes = 0;
  double f = 0.0;
  std::size_t train_per_class = 0;
  std::optional<double> similarity_pct;

  std::optional<double> ta_baseline, ta_baseline_std;
  std::optional<double> ta_proposed, ta_proposed_std;
  std::optional<double> gain_pp, gain_rel_pct;
  std::optional<double> tt_baseline_s, tt_baseline_std;
  std::optional<double> tt_proposed_s, tt_proposed_std;
  std::optional<double> tt_reduction_pct, speedup;
  std::optional<double> epochs_baseline, epochs_proposed;
  std::optional<std::size_t> params_baseline, params_proposed;
  std::optional<double> lr_baseline, lr_proposed;

  std::vector<std::string> classes;
  std::vector<std::string> warnings;

  friend bool operator==(const ExperimentRow&, const ExperimentRow&) = default;
};

struct ExperimentReport {
  std::vector<ExperimentRow> rows;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;
  std::size_t folds = 1;

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);

// Copy with every training-time derived field cleared.
ExperimentReport without_timings(ExperimentReport report);

struct Gain {
  double pp = 0.0;
  std::optional<double> rel_pct;  // undefined when the baseline is 0
};

// pp = P - B; rel = 100 (P - B) / B.
Gain compute_gain(double ta_baseline, double ta_proposed);

// 100 (1 - TT_p / TT_b)
double tt_reduction_pct(double tt_baseline, double tt_proposed);

using HeadFactory = std::function<Head(Rng&)>;

struct CrossValidation {
  std::size_t chosen = 0;
  std::vector<double> mean_accuracy;  // per candidate; empty when not run
};

// Stratified k-fold over the pooled train+val items (first variant only);
// the candidate with the highest mean fold accuracy wins, ties going to the
// lower base_lr and then to the earlier candidate.
CrossValidation cross_validate(const HeadFactory& factory, const FeatureSet& train, const FeatureSet& val,
                               std::span<const TrainConfig> candidates, std::size_t folds, std::uint64_t seed);

using Logger = std::function<void(const std::string&)>;

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds, const Logger& log = {});

enum class TableFormat { kText, kCsv, kJson };

TableFormat parse_table_format(const std::string& s);

// Unweighted mean of every numeric field over the rows carrying it.
ExperimentRow average_row(std::span<const ExperimentRow> rows);

std::string emit_tables(const ExperimentReport& report, TableFormat format);

// Two significant digits, the precision used for training times.
std::string format_seconds(double s);

}  // namespace tlh
