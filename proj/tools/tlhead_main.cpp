// Command-line front end over the tlhead C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tlhead/tlhead.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

int exit_code_of(tlh_status s) {
  switch (s) {
    case TLH_OK: return kExitOk;
    case TLH_ERR_CONFIG:
    case TLH_ERR_VALIDATION:
    case TLH_ERR_NULL_ARG: return kExitConfig;
    case TLH_ERR_DATA:
    case TLH_ERR_SHAPE:
    case TLH_ERR_PARSE:
    case TLH_ERR_IO: return kExitData;
    case TLH_ERR_DIVERGED: return kExitDiverged;
    case TLH_ERR_INTERNAL: return kExitInternal;
  }
  return kExitInternal;
}

// Carries a failed status out of a subcommand.
struct Failure {
  tlh_status status;
  std::string message;
};

void check(tlh_status s) {
  if (s != TLH_OK) throw Failure{s, tlh_last_error()};
}

struct ConfigFailure {
  std::string message;
};

std::string take(char* s) {
  std::string out = s ? s : "";
  tlh_string_free(s);
  return out;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using DatasetHandle = Handle<tlh_dataset, tlh_dataset_free>;
using HeadHandle = Handle<tlh_head, tlh_head_free>;
using ReportHandle = Handle<tlh_report, tlh_report_free>;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string format = "text";
  bool quiet = false;
};

struct DataArgs {
  std::string features;
  std::string manifest;

  void add(CLI::App* cmd) {
    cmd->add_option("--features,-i", features, "Feature container (FTB1)")->required();
    cmd->add_option("--manifest", manifest, "Manifest JSON (default: container path with .json)");
  }
  void open(DatasetHandle& ds) const {
    check(tlh_dataset_open(features.c_str(), manifest.empty() ? nullptr : manifest.c_str(), &ds.p));
  }
};

// Task options shared by split/train/eval/experiment; flags override the
// config file.
struct TaskArgs {
  std::string config;
  std::vector<std::string> kinds;
  std::vector<double> fractions;
  std::optional<std::size_t> images_per_class;
  std::optional<std::uint64_t> split_seed;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> max_epochs;
  std::string approach;

  void add(CLI::App* cmd, bool grid) {
    cmd->add_option("--config,-c", config, "Experiment config JSON");
    cmd->add_option("--kind,-k", kinds, "Task kind, e.g. A:Bird:3 or B:12");
    cmd->add_option("--f", fractions, "Training fraction(s) of J");
    cmd->add_option("--images-per-class,-J", images_per_class, "Images per class J (default: smallest class)");
    cmd->add_option("--split-seed", split_seed, "Seed of the per-class split shuffle");
    cmd->add_option("--max-epochs", max_epochs, "Epoch cap for both heads");
    if (grid) {
      cmd->add_option("--folds", folds, "Cross-validation folds (1 disables cross-validation)");
      cmd->add_option("--repeats", repeats, "Training runs per approach and cell");
      cmd->add_option("--approach", approach, "proposed, baseline or both");
    }
  }

  std::string build(const Globals& g) const {
    json j = json::object();
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw ConfigFailure{"cannot read config '" + config + "'"};
      try {
        j = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigFailure{"config '" + config + "' is not valid JSON: " + e.what()};
      }
    }
    if (!kinds.empty()) j["kind"] = kinds;
    if (!fractions.empty() || images_per_class || split_seed) {
      json split = j.value("split", json::object());
      if (!fractions.empty()) split["f"] = fractions;
      if (images_per_class) split["J"] = *images_per_class;
      if (split_seed) split["seed"] = *split_seed;
      j["split"] = split;
    }
    if (max_epochs) j["train"]["max_epochs"] = *max_epochs;
    if (folds) j["folds"] = *folds;
    if (repeats) j["repeats"] = *repeats;
    if (!approach.empty()) j["approach"] = approach;
    if (g.seed) j["seed"] = *g.seed;
    if (g.threads) j["threads"] = *g.threads;
    return j.dump();
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Failure{TLH_ERR_IO, "cannot write '" + path + "'"};
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

int cmd_synth(const Globals& g, const std::string& out, const std::string& manifest, json options) {
  if (g.seed) options["seed"] = *g.seed;
  DatasetHandle ds;
  check(tlh_dataset_synth(options.dump().c_str(), &ds.p));
  check(tlh_dataset_save(ds.p, out.c_str(), manifest.empty() ? nullptr : manifest.c_str()));
  if (!g.quiet) std::cerr << "wrote " << out << '\n';
  if (g.format == "json") std::cout << take([&] { char* s = nullptr; check(tlh_dataset_info(ds.p, &s)); return s; }()) << '\n';
  return kExitOk;
}

int cmd_split(const Globals& g, const DataArgs& data, const TaskArgs& task) {
  DatasetHandle ds;
  data.open(ds);
  char* s = nullptr;
  check(tlh_dataset_split(ds.p, task.build(g).c_str(), &s));
  const std::string text = take(s);
  if (g.format == "json") {
    std::cout << text << '\n';
    return kExitOk;
  }
  const json j = json::parse(text);
  const bool csv = g.format == "csv";
  std::cout << (csv ? "class,species,train,val,test\n" : "");
  if (!csv) {
    std::cout << j["group"].get<std::string>() << ": f=" << j["f"].get<double>() << " J=" << j["J"] << " seed=" << j["seed"]
              << " (" << j["train_per_class"] << " train, " << j["val_per_class"] << " val per class)\n";
  }
  for (const auto& c : j["classes"]) {
    if (csv) {
      std::cout << c["name"].get<std::string>() << ',' << c["species"].get<std::string>() << ',' << c["train"].size()
                << ',' << c["val"].size() << ',' << c["test"].size() << '\n';
    } else {
      std::cout << "  " << c["name"].get<std::string>() << ": " << c["train"].size() << " / " << c["val"].size()
                << " / " << c["test"].size() << '\n';
    }
  }
  return kExitOk;
}

int cmd_train(const Globals& g, const DataArgs& data, const TaskArgs& task, const std::string& head_kind,
              const std::string& save) {
  DatasetHandle ds;
  data.open(ds);
  HeadHandle head;
  char* s = nullptr;
  check(tlh_train(ds.p, task.build(g).c_str(), head_kind.c_str(), &head.p, &s));
  const json r = json::parse(take(s));
  if (!save.empty()) check(tlh_head_save(head.p, save.c_str()));
  if (g.format == "json") {
    std::cout << r.dump(2) << '\n';
  } else if (g.format == "csv") {
    std::cout << "head,group,n_classes,f,TA,TT_s,epochs,params,threads\n"
              << head_kind << ',' << r["group"].get<std::string>() << ',' << r["classes"].size() << ','
              << r["f"].get<double>() << ',' << fixed(r["test_accuracy_pct"].get<double>(), 1) << ','
              << fixed(r["train_time_s"].get<double>(), 3) << ',' << r["epochs_run"] << ',' << r["param_count"] << ','
              << r["threads"] << '\n';
  } else {
    std::cout << head_kind << " head on " << r["group"].get<std::string>() << " (" << r["classes"].size()
              << " classes, " << r["train_per_class"] << " train/class)\n"
              << "  TA " << fixed(r["test_accuracy_pct"].get<double>(), 1) << "%  TT "
              << fixed(r["train_time_s"].get<double>(), 3) << " s  epochs " << r["epochs_run"] << " (best "
              << r["best_epoch"] << (r["stopped_early"].get<bool>() ? ", stopped early" : "") << ")  params "
              << r["param_count"] << "  threads " << r["threads"] << '\n';
    for (const auto& w : r["warnings"]) std::cout << "  note: " << w.get<std::string>() << '\n';
  }
  return kExitOk;
}

int cmd_eval(const Globals& g, const DataArgs& data, const TaskArgs& task, const std::string& head_file) {
  DatasetHandle ds;
  data.open(ds);
  HeadHandle head;
  check(tlh_head_load(head_file.c_str(), &head.p));
  double acc = 0.0;
  check(tlh_head_evaluate(head.p, ds.p, task.build(g).c_str(), &acc));
  if (g.format == "json") std::cout << json{{"test_accuracy_pct", acc}}.dump() << '\n';
  else if (g.format == "csv") std::cout << "TA\n" << fixed(acc, 1) << '\n';
  else std::cout << "TA " << fixed(acc, 1) << "%\n";
  return kExitOk;
}

int cmd_similarity(const Globals& g, const DataArgs& data) {
  DatasetHandle ds;
  data.open(ds);
  char* s = nullptr;
  check(tlh_dataset_similarity(ds.p, &s));
  const std::string text = take(s);
  if (g.format == "json") {
    std::cout << text << '\n';
    return kExitOk;
  }
  const json j = json::parse(text);
  if (g.format == "csv") {
    std::cout << "species,class,similarity_pct,nearest_class,n_images\n";
    for (const auto& c : j["classes"]) {
      std::cout << c["species"].get<std::string>() << ',' << c["name"].get<std::string>() << ','
                << fixed(c["similarity_pct"].get<double>(), 1) << ',' << c["nearest_class"] << ',' << c["n_images"]
                << '\n';
    }
    return kExitOk;
  }
  std::cout << "Confidence similarity (%) to the pretrained classes\n";
  for (const auto& sp : j["species"]) {
    std::cout << sp["name"].get<std::string>() << ": " << fixed(sp["similarity_pct"].get<double>(), 1) << '\n';
    for (const auto& c : j["classes"]) {
      if (c["species"] != sp["name"]) continue;
      std::cout << "  " << c["name"].get<std::string>() << ": " << fixed(c["similarity_pct"].get<double>(), 1)
                << " (nearest pretrained class " << c["nearest_class"] << ", " << c["n_images"] << " images)\n";
    }
  }
  return kExitOk;
}

std::string render(const tlh_report* report, const std::string& format) {
  char* s = nullptr;
  check(tlh_report_render(report, format.c_str(), &s));
  return take(s);
}

int cmd_experiment(const Globals& g, const DataArgs& data, const TaskArgs& task, const std::string& out) {
  DatasetHandle ds;
  data.open(ds);
  ReportHandle report;
  static std::mutex log_mutex;
  const tlh_log_fn log = g.quiet ? nullptr : +[](const char* line, void*) {
    std::lock_guard lock(log_mutex);
    std::cerr << line << '\n';
  };
  check(tlh_experiment_run(ds.p, task.build(g).c_str(), log, nullptr, &report.p));
  if (!out.empty()) write_text(out, render(report.p, "json"));
  std::cout << render(report.p, g.format);
  return kExitOk;
}

int cmd_report(const Globals& g, const std::string& in) {
  std::ifstream file(in, std::ios::binary);
  if (!file) throw Failure{TLH_ERR_IO, "cannot read '" + in + "'"};
  std::stringstream buf;
  buf << file.rdbuf();
  ReportHandle report;
  check(tlh_report_from_json(buf.str().c_str(), &report.p));
  std::cout << render(report.p, g.format);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and compare classifier heads on exported CNN features"};
  app.set_version_flag("--version", tlh_version());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads for the kernels (overrides the config)")
      ->check(CLI::Range(1u, 256u));
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"text", "csv", "json"}));
  app.add_flag("--quiet,-q", g.quiet, "Suppress progress output");

  DataArgs data;
  TaskArgs task;

  auto* synth = app.add_subcommand("synth", "Write a synthetic feature container and manifest");
  std::string synth_out, synth_manifest, synth_backbone = "VGG19";
  std::size_t synth_cps = 5, synth_ipc = 500, synth_dim = 0, synth_variants = 1;
  std::vector<std::string> synth_species;
  std::vector<double> synth_sep;
  synth->add_option("--out,-o", synth_out, "Output container path")->required();
  synth->add_option("--manifest", synth_manifest, "Manifest path (default: container path with .json)");
  synth->add_option("--backbone", synth_backbone, "VGG19 or ResNet18")->check(CLI::IsMember({"VGG19", "ResNet18"}));
  synth->add_option("--species", synth_species, "Species names");
  synth->add_option("--separation", synth_sep, "Class-centre distance per species (cycled)");
  synth->add_option("--classes-per-species", synth_cps, "Classes per species");
  synth->add_option("--images-per-class", synth_ipc, "Images per class");
  synth->add_option("--dim", synth_dim, "Feature width (default 4096 for VGG19, 512 for ResNet18)");
  synth->add_option("--variants", synth_variants, "Augmented variants per training image");

  auto* split = app.add_subcommand("split", "Show the train/validation/test partition of a task");
  data.add(split);
  task.add(split, false);

  auto* train = app.add_subcommand("train", "Train one head on a task and report test accuracy");
  std::string head_kind = "proposed", save_path;
  data.add(train);
  task.add(train, false);
  train->add_option("--head", head_kind, "proposed or baseline")->check(CLI::IsMember({"proposed", "baseline"}));
  train->add_option("--save", save_path, "Write the trained head weights to this container");

  auto* eval = app.add_subcommand("eval", "Evaluate a saved head on the test split of a task");
  std::string head_file;
  data.add(eval);
  task.add(eval, false);
  eval->add_option("--head-file", head_file, "Head weights written by train --save")->required();

  auto* similarity = app.add_subcommand("similarity", "Confidence similarity of each class to the pretrained classes");
  data.add(similarity);

  auto* experiment = app.add_subcommand("experiment", "Run an experiment grid over both approaches");
  std::string report_out;
  data.add(experiment);
  task.add(experiment, true);
  experiment->add_option("--out,-o", report_out, "Also write the report as JSON");

  auto* report = app.add_subcommand("report", "Render a saved JSON report");
  std::string report_in;
  report->add_option("report", report_in, "Report JSON written by experiment --out")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*synth) {
      json options = {{"backbone", synth_backbone},
                      {"classes_per_species", synth_cps},
                      {"images_per_class", synth_ipc},
                      {"dim", synth_dim},
                      {"variants", synth_variants}};
      if (!synth_species.empty()) options["species"] = synth_species;
      if (!synth_sep.empty()) options["separation"] = synth_sep;
      return cmd_synth(g, synth_out, synth_manifest, options);
    }
    if (*split) return cmd_split(g, data, task);
    if (*train) return cmd_train(g, data, task, head_kind, save_path);
    if (*eval) return cmd_eval(g, data, task, head_file);
    if (*similarity) return cmd_similarity(g, data);
    if (*experiment) return cmd_experiment(g, data, task, report_out);
    if (*report) return cmd_report(g, report_in);
  } catch (const Failure& f) {
    std::cerr << "error (" << tlh_status_name(f.status) << "): " << f.message << '\n';
    return exit_code_of(f.status);
  } catch (const ConfigFailure& f) {
    std::cerr << "error (configuration error): " << f.message << '\n';
    return kExitConfig;
  }
  return kExitInternal;
}
