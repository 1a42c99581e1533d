/* C interface to the tlhead training engine.
 *
 * Every function returns a tlh_status. On failure a message describing the
 * error is available from tlh_last_error() on the calling thread until the
 * next call into the library from that thread. Strings returned through
 * char** out-parameters are owned by the caller and released with
 * tlh_string_free(). Handles are released with their *_free function;
 * passing NULL to a *_free function is a no-op.
 *
 * JSON arguments use the experiment configuration schema documented in
 * README.md. */
#ifndef TLHEAD_TLHEAD_H_
#define TLHEAD_TLHEAD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(TLH_BUILDING_LIBRARY)
#define TLH_API __attribute__((visibility("default")))
#else
#define TLH_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tlh_status {
  TLH_OK = 0,
  TLH_ERR_INTERNAL = 1,
  TLH_ERR_CONFIG = 2,
  TLH_ERR_DATA = 3,
  TLH_ERR_DIVERGED = 4,
  TLH_ERR_VALIDATION = 5,
  TLH_ERR_SHAPE = 6,
  TLH_ERR_PARSE = 7,
  TLH_ERR_IO = 8,
  TLH_ERR_NULL_ARG = 9
} tlh_status;

typedef struct tlh_dataset tlh_dataset;
typedef struct tlh_head tlh_head;
typedef struct tlh_report tlh_report;

/* Progress callback; `line` is valid only for the duration of the call. */
typedef void (*tlh_log_fn)(const char* line, void* user);

TLH_API const char* tlh_version(void);
TLH_API const char* tlh_status_name(tlh_status status);
TLH_API const char* tlh_last_error(void);
TLH_API void tlh_string_free(char* s);

/* Datasets: a feature container plus its JSON manifest. `manifest_path` may
 * be NULL to use the container path with a .json extension. */
TLH_API tlh_status tlh_dataset_open(const char* container_path, const char* manifest_path, tlh_dataset** out);

/* Synthetic Gaussian-blob dataset. `options_json` may be NULL; recognised
 * keys: backbone, species, separation, classes_per_species,
 * images_per_class, dim, variants, augment_noise, seed. */
TLH_API tlh_status tlh_dataset_synth(const char* options_json, tlh_dataset** out);
TLH_API tlh_status tlh_dataset_save(const tlh_dataset* ds, const char* container_path, const char* manifest_path);
TLH_API void tlh_dataset_free(tlh_dataset* ds);

/* Backbone, species, classes with image counts and tensor shapes. */
TLH_API tlh_status tlh_dataset_info(const tlh_dataset* ds, char** json_out);

/* Train/validation/test image ids per selected class for a task config
 * (first kind and first split fraction are used). */
TLH_API tlh_status tlh_dataset_split(const tlh_dataset* ds, const char* task_json, char** json_out);

/* Confidence similarity of every class to the pretrained classes. */
TLH_API tlh_status tlh_dataset_similarity(const tlh_dataset* ds, char** json_out);

/* Largest |logits - affine(cls_in, fc_cls)| over the dataset. */
TLH_API tlh_status tlh_dataset_check_taps(const tlh_dataset* ds, double* max_abs_error);

/* Builds and trains one head for a task config. `head_kind` is "proposed"
 * or "baseline". The result JSON carries test accuracy, training time,
 * epochs, curves and warnings. `head_out` may be NULL. */
TLH_API tlh_status tlh_train(const tlh_dataset* ds, const char* task_json, const char* head_kind,
                             tlh_head** head_out, char** result_json);

/* Accuracy of a head on the test split of a task config. */
TLH_API tlh_status tlh_head_evaluate(const tlh_head* head, const tlh_dataset* ds, const char* task_json,
                                     double* accuracy_pct);
TLH_API tlh_status tlh_head_param_count(const tlh_head* head, size_t* count);
TLH_API tlh_status tlh_head_info(const tlh_head* head, char** json_out);
TLH_API tlh_status tlh_head_save(const tlh_head* head, const char* path);
TLH_API tlh_status tlh_head_load(const char* path, tlh_head** out);
TLH_API void tlh_head_free(tlh_head* head);

/* Runs an experiment grid. `log` may be NULL. */
TLH_API tlh_status tlh_experiment_run(const tlh_dataset* ds, const char* config_json, tlh_log_fn log, void* user,
                                      tlh_report** out);
TLH_API tlh_status tlh_report_from_json(const char* json, tlh_report** out);
/* `format` is "text", "csv" or "json". */
TLH_API tlh_status tlh_report_render(const tlh_report* report, const char* format, char** out);
TLH_API void tlh_report_free(tlh_report* report);

#ifdef __cplusplus
}
#endif

#endif /* TLHEAD_TLHEAD_H_ */
