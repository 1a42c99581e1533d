#include "tlhead/tlhead.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "heads.hpp"
#include "similarity.hpp"

struct tlh_dataset {
  tlh::Dataset ds;
};

struct tlh_head {
  tlh::Head head;
};

struct tlh_report {
  tlh::ExperimentReport report;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

tlh_status status_of(tlh::ErrorKind kind) {
  switch (kind) {
    case tlh::ErrorKind::kShape: return TLH_ERR_SHAPE;
    case tlh::ErrorKind::kValidation: return TLH_ERR_VALIDATION;
    case tlh::ErrorKind::kParse: return TLH_ERR_PARSE;
    case tlh::ErrorKind::kIo: return TLH_ERR_IO;
    case tlh::ErrorKind::kConfig: return TLH_ERR_CONFIG;
    case tlh::ErrorKind::kData: return TLH_ERR_DATA;
    case tlh::ErrorKind::kDiverged: return TLH_ERR_DIVERGED;
  }
  return TLH_ERR_INTERNAL;
}

// Runs `fn`, translating exceptions into status codes and the thread's last
// error message.
template <typename Fn>
tlh_status guarded(Fn&& fn) noexcept {
  try {
    g_last_error.clear();
    fn();
    return TLH_OK;
  } catch (const tlh::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return TLH_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TLH_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TLH_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_json(const char* text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw tlh::ConfigError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

tlh::SynthOptions synth_options(const json& j) {
  tlh::SynthOptions o;
  for (const auto& [key, value] : j.items()) {
    if (key == "backbone") o.backbone = value.get<std::string>();
    else if (key == "species") o.species = value.get<std::vector<std::string>>();
    else if (key == "separation") {
      o.separation = value.is_array() ? value.get<std::vector<double>>() : std::vector<double>{value.get<double>()};
    } else if (key == "classes_per_species") o.classes_per_species = value.get<std::size_t>();
    else if (key == "images_per_class") o.images_per_class = value.get<std::size_t>();
    else if (key == "dim") o.dim = value.get<std::size_t>();
    else if (key == "variants") o.variants = value.get<std::size_t>();
    else if (key == "augment_noise") o.augment_noise = value.get<double>();
    else if (key == "seed") o.seed = value.get<std::uint64_t>();
    else throw tlh::ConfigError("unknown synthetic dataset option '" + key + "'");
  }
  return o;
}

// A task is one cell of an experiment config: its first kind and fraction.
struct Task {
  tlh::ExperimentConfig cfg;
  tlh::ExperimentClasses classes;
  tlh::SplitSpec split;
};

Task make_task(const tlh::Dataset& ds, const char* task_json) {
  Task t;
  t.cfg = tlh::ExperimentConfig::from_json(parse_json(task_json, "task config"));
  t.cfg.validate();
  t.classes = tlh::compose_experiment(t.cfg.kinds.front(), ds.manifest().species_layout(), t.cfg.seed);
  t.split = tlh::resolve_split(ds, t.classes, {t.cfg.fractions.front(), t.cfg.images_per_class, t.cfg.split_seed});
  try {
    t.split.validate();
  } catch (const tlh::ValidationError& e) {
    throw tlh::ConfigError(e.what());
  }
  return t;
}

json tensor_info(const tlh::FeatureSet& fs) {
  return {{"name", fs.name},
          {"n_images", fs.n_images},
          {"n_variants", fs.n_variants},
          {"dim", fs.dim},
          {"labelled", fs.has_labels()}};
}

json result_json_of(const tlh::TrainResult& r, const Task& t) {
  json j;
  j["test_accuracy_pct"] = r.test_accuracy_pct ? json(*r.test_accuracy_pct) : json(nullptr);
  j["train_time_s"] = r.train_time_s;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["stopped_early"] = r.stopped_early;
  j["param_count"] = r.param_count;
  j["loss_curve"] = r.loss_curve;
  j["val_loss_curve"] = r.val_loss_curve;
  j["lr_trace"] = r.lr_trace;
  j["train_accuracy_pct"] = r.train_accuracy_pct;
  j["val_accuracy_pct"] = r.val_accuracy_pct;
  j["dead_output_fraction"] = r.dead_output_fraction;
  j["threads"] = r.threads;
  j["warnings"] = r.warnings;
  json classes = json::array();
  for (const auto& c : t.classes.classes) classes.push_back(c.name);
  j["classes"] = classes;
  j["group"] = t.classes.group();
  j["f"] = t.split.f;
  j["train_per_class"] = t.split.train_count();
  return j;
}

}  // namespace

extern "C" {

const char* tlh_version(void) { return "0.3.0"; }

const char* tlh_status_name(tlh_status status) {
  switch (status) {
    case TLH_OK: return "ok";
    case TLH_ERR_INTERNAL: return "internal error";
    case TLH_ERR_CONFIG: return "configuration error";
    case TLH_ERR_DATA: return "data error";
    case TLH_ERR_DIVERGED: return "numerical divergence";
    case TLH_ERR_VALIDATION: return "validation error";
    case TLH_ERR_SHAPE: return "shape error";
    case TLH_ERR_PARSE: return "parse error";
    case TLH_ERR_IO: return "I/O error";
    case TLH_ERR_NULL_ARG: return "null argument";
  }
  return "unknown status";
}

const char* tlh_last_error(void) { return g_last_error.c_str(); }

void tlh_string_free(char* s) { std::free(s); }

tlh_status tlh_dataset_open(const char* container_path, const char* manifest_path, tlh_dataset** out) {
  if (container_path == nullptr || out == nullptr) {
    g_last_error = "container path and output handle are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    std::optional<std::filesystem::path> manifest;
    if (manifest_path != nullptr) manifest = manifest_path;
    *out = new tlh_dataset{tlh::Dataset::load(container_path, manifest)};
  });
}

tlh_status tlh_dataset_synth(const char* options_json, tlh_dataset** out) {
  if (out == nullptr) {
    g_last_error = "output handle is required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto options = options_json ? synth_options(parse_json(options_json, "synthetic options")) : tlh::SynthOptions{};
    auto [tensors, manifest] = tlh::synth_dataset(options);
    *out = new tlh_dataset{tlh::Dataset(std::move(manifest), std::move(tensors))};
  });
}

tlh_status tlh_dataset_save(const tlh_dataset* ds, const char* container_path, const char* manifest_path) {
  if (ds == nullptr || container_path == nullptr) {
    g_last_error = "dataset and container path are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    std::vector<tlh::FeatureSet> tensors;
    for (const auto& name : ds->ds.tensor_names()) tensors.push_back(ds->ds.tensor(name));
    tlh::write_container(container_path, tensors);
    const std::filesystem::path m = manifest_path ? std::filesystem::path(manifest_path)
                                                  : tlh::default_manifest_path(container_path);
    ds->ds.manifest().save(m);
  });
}

void tlh_dataset_free(tlh_dataset* ds) { delete ds; }

tlh_status tlh_dataset_info(const tlh_dataset* ds, char** json_out) {
  if (ds == nullptr || json_out == nullptr) {
    g_last_error = "dataset and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto& m = ds->ds.manifest();
    json species = json::array();
    std::size_t index = 0;
    for (const auto& s : m.species) {
      json classes = json::array();
      for (const auto& c : s.classes) {
        classes.push_back({{"name", c.name}, {"images", ds->ds.images_of(index++).size()}});
      }
      species.push_back({{"name", s.name}, {"classes", classes}});
    }
    json tensors = json::array();
    for (const auto& name : ds->ds.tensor_names()) tensors.push_back(tensor_info(ds->ds.tensor(name)));
    const json info = {{"backbone", m.backbone}, {"species", species}, {"tensors", tensors}};
    *json_out = dup_string(info.dump(2));
  });
}

tlh_status tlh_dataset_split(const tlh_dataset* ds, const char* task_json, char** json_out) {
  if (ds == nullptr || task_json == nullptr || json_out == nullptr) {
    g_last_error = "dataset, task config and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto task = make_task(ds->ds, task_json);
    const auto& m = ds->ds.manifest();
    std::vector<tlh::ClassSize> sizes;
    std::vector<std::vector<std::size_t>> members;
    for (const auto& c : task.classes.classes) {
      const auto index = m.class_index(c.name);
      if (!index) throw tlh::ConfigError("class '" + c.name + "' is not in the manifest");
      members.push_back(ds->ds.images_of(*index));
      sizes.push_back({c.name, members.back().size()});
    }
    const auto split = tlh::make_splits(task.split, sizes);
    auto ids = [&](std::size_t c, const std::vector<std::size_t>& positions) {
      json out = json::array();
      for (auto p : positions) {
        const auto image = members[c][p];
        if (image < m.image_ids.size()) out.push_back(m.image_ids[image]);
        else out.push_back(image);
      }
      return out;
    };
    json classes = json::array();
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      classes.push_back({{"name", sizes[c].name},
                         {"species", task.classes.classes[c].species},
                         {"train", ids(c, split.classes[c].train_ids)},
                         {"val", ids(c, split.classes[c].val_ids)},
                         {"test", ids(c, split.classes[c].test_ids)}});
    }
    const json out = {{"group", task.classes.group()},
                      {"f", task.split.f},
                      {"J", task.split.images_per_class},
                      {"seed", task.split.seed},
                      {"train_per_class", task.split.train_count()},
                      {"val_per_class", task.split.val_count()},
                      {"classes", classes}};
    *json_out = dup_string(out.dump(2));
  });
}

tlh_status tlh_dataset_similarity(const tlh_dataset* ds, char** json_out) {
  if (ds == nullptr || json_out == nullptr) {
    g_last_error = "dataset and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto report = tlh::similarity_report(ds->ds.tensor(tlh::kLogits), ds->ds.manifest().class_species());
    json classes = json::array();
    for (const auto& c : report.classes) {
      classes.push_back({{"species", c.species},
                         {"name", c.name},
                         {"similarity_pct", c.similarity_pct},
                         {"nearest_class", c.nearest_class},
                         {"n_images", c.n_images},
                         {"histogram", c.histogram}});
    }
    json species = json::array();
    for (const auto& s : report.species) {
      species.push_back({{"name", s.name}, {"similarity_pct", s.mean_similarity_pct}});
    }
    const json out = {{"measure", "confidence similarity"}, {"classes", classes}, {"species", species}};
    *json_out = dup_string(out.dump(2));
  });
}

tlh_status tlh_dataset_check_taps(const tlh_dataset* ds, double* max_abs_error) {
  if (ds == nullptr || max_abs_error == nullptr) {
    g_last_error = "dataset and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] { *max_abs_error = tlh::tap_consistency_error(ds->ds); });
}

tlh_status tlh_train(const tlh_dataset* ds, const char* task_json, const char* head_kind, tlh_head** head_out,
                     char** result_json) {
  if (ds == nullptr || task_json == nullptr || head_kind == nullptr) {
    g_last_error = "dataset, task config and head kind are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto kind = tlh::parse_head_kind(head_kind);
    const auto task = make_task(ds->ds, task_json);
    const auto sets = tlh::make_task_sets(ds->ds, task.classes, task.split, tlh::Dataset::input_tensor(kind));
    const std::size_t n = task.classes.classes.size();

    tlh::Rng init = tlh::Rng(task.cfg.seed).derive(std::string("init/") + tlh::to_string(kind)).derive(0);
    std::optional<tlh::Head> head;
    if (kind == tlh::HeadKind::kProposed) {
      head.emplace(tlh::build_proposed_head(ds->ds.classifier(), n, init));
    } else {
      const auto pen = ds->ds.penultimate();
      head.emplace(tlh::build_baseline_head(pen ? &*pen : nullptr, sets.train.dim, n, init));
    }
    tlh::TrainConfig cfg = task.cfg.train_config(kind);
    cfg.seed = tlh::Rng(task.cfg.seed).derive("order").derive(0).seed();
    auto result = tlh::train_head(*head, sets.train, sets.val, cfg);
    result.test_accuracy_pct = tlh::evaluate(*head, sets.test, cfg.threads);
    if (result_json != nullptr) *result_json = dup_string(result_json_of(result, task).dump(2));
    if (head_out != nullptr) *head_out = new tlh_head{std::move(*head)};
  });
}

tlh_status tlh_head_evaluate(const tlh_head* head, const tlh_dataset* ds, const char* task_json,
                             double* accuracy_pct) {
  if (head == nullptr || ds == nullptr || task_json == nullptr || accuracy_pct == nullptr) {
    g_last_error = "head, dataset, task config and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto task = make_task(ds->ds, task_json);
    const auto sets =
        tlh::make_task_sets(ds->ds, task.classes, task.split, tlh::Dataset::input_tensor(head->head.kind()));
    if (sets.test.dim != head->head.input_dim() || task.classes.classes.size() != head->head.n_classes()) {
      throw tlh::ConfigError("head expects " + std::to_string(head->head.input_dim()) + "-dim input and " +
                             std::to_string(head->head.n_classes()) + " classes; the task has " +
                             std::to_string(sets.test.dim) + " and " + std::to_string(task.classes.classes.size()));
    }
    *accuracy_pct = tlh::evaluate(head->head, sets.test, task.cfg.threads);
  });
}

tlh_status tlh_head_param_count(const tlh_head* head, size_t* count) {
  if (head == nullptr || count == nullptr) {
    g_last_error = "head and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] { *count = tlh::count_params(head->head); });
}

tlh_status tlh_head_info(const tlh_head* head, char** json_out) {
  if (head == nullptr || json_out == nullptr) {
    g_last_error = "head and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    json layers = json::array();
    for (const auto& l : head->head.layers()) {
      layers.push_back({{"fan_in", l.params.fan_in()}, {"fan_out", l.params.fan_out()}, {"relu_after", l.relu_after}});
    }
    const json out = {{"kind", tlh::to_string(head->head.kind())},
                      {"input_dim", head->head.input_dim()},
                      {"n_classes", head->head.n_classes()},
                      {"param_count", tlh::count_params(head->head)},
                      {"layers", layers},
                      {"notes", head->head.notes()}};
    *json_out = dup_string(out.dump(2));
  });
}

tlh_status tlh_head_save(const tlh_head* head, const char* path) {
  if (head == nullptr || path == nullptr) {
    g_last_error = "head and path are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] { tlh::write_container(path, tlh::head_to_tensors(head->head)); });
}

tlh_status tlh_head_load(const char* path, tlh_head** out) {
  if (path == nullptr || out == nullptr) {
    g_last_error = "path and output handle are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto tensors = tlh::read_container(path);
    *out = new tlh_head{tlh::head_from_tensors(tensors)};
  });
}

void tlh_head_free(tlh_head* head) { delete head; }

tlh_status tlh_experiment_run(const tlh_dataset* ds, const char* config_json, tlh_log_fn log, void* user,
                              tlh_report** out) {
  if (ds == nullptr || config_json == nullptr || out == nullptr) {
    g_last_error = "dataset, config and output handle are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] {
    const auto cfg = tlh::ExperimentConfig::from_json(parse_json(config_json, "experiment config"));
    tlh::Logger logger;
    if (log != nullptr) logger = [log, user](const std::string& line) { log(line.c_str(), user); };
    *out = new tlh_report{tlh::run_experiment(cfg, ds->ds, logger)};
  });
}

tlh_status tlh_report_from_json(const char* text, tlh_report** out) {
  if (text == nullptr || out == nullptr) {
    g_last_error = "JSON text and output handle are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] { *out = new tlh_report{tlh::report_from_json(parse_json(text, "report"))}; });
}

tlh_status tlh_report_render(const tlh_report* report, const char* format, char** out) {
  if (report == nullptr || format == nullptr || out == nullptr) {
    g_last_error = "report, format and output are required";
    return TLH_ERR_NULL_ARG;
  }
  return guarded([&] { *out = dup_string(tlh::emit_tables(report->report, tlh::parse_table_format(format))); });
}

void tlh_report_free(tlh_report* report) { delete report; }

}  // extern "C"
