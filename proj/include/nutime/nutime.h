/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The NuTime Authors */

#ifndef NUTIME_NUTIME_H
#define NUTIME_NUTIME_H

#include <stddef.h>

#if defined(NUTIME_BUILDING_LIBRARY)
#define NT_API __attribute__((visibility("default")))
#else
#define NT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nt_status {
  NT_OK = 0,
  NT_ERR_USAGE = 1,    /* bad argument, configuration or shape */
  NT_ERR_DATA = 2,     /* malformed input file, dataset or checkpoint */
  NT_ERR_NUMERIC = 3,  /* non-finite value; see nt_last_error_detail() */
  NT_ERR_IO = 4,       /* file system failure */
  NT_ERR_INTERNAL = 5
} nt_status;

typedef struct nt_dataset nt_dataset;
typedef struct nt_model nt_model;

/* Message of the last failure on the calling thread ("" after success). */
NT_API const char* nt_last_error(void);
/* Diagnostic JSON attached to the last numeric failure, or "". */
NT_API const char* nt_last_error_detail(void);
NT_API const char* nt_version(void);
/* Releases any char* returned through an out-parameter. NULL is ignored. */
NT_API void nt_string_free(char* s);

/* Worker threads for matrix kernels; 1 is the deterministic mode. */
NT_API nt_status nt_set_threads(size_t n);

/* Run configuration.
 * Starts from defaults, applies `file_json` then `overrides_json` (either may
 * be NULL). Both use the same schema; unknown keys are rejected. Returns the
 * fully resolved JSON and its 16-hex-digit hash. */
NT_API nt_status nt_config_resolve(const char* file_json, const char* overrides_json, char** resolved_json,
                                   char** hash);
NT_API nt_status nt_config_default(char** json);

/* Datasets. */

/* `path`: a manifest.json, a directory containing one, or a TSV (comma
 * separated per-channel TSVs for multivariate data, loaded as split "train").
 * `split` selects a manifest split. Series longer than `max_len` are dropped
 * when max_len > 0. */
NT_API nt_status nt_dataset_load(const char* path, const char* split, size_t max_len, nt_dataset** out);
/* Row-major values[n][channels][length]; labels may be NULL. */
NT_API nt_status nt_dataset_from_values(const double* values, size_t n, size_t channels, size_t length,
                                        const int* labels, nt_dataset** out);
NT_API void nt_dataset_free(nt_dataset* ds);
NT_API nt_status nt_dataset_size(const nt_dataset* ds, size_t* n, size_t* channels, size_t* max_length);
/* Borrowed pointer into the dataset; label is -1 when absent. */
NT_API nt_status nt_dataset_series(const nt_dataset* ds, size_t index, const double** values, size_t* channels,
                                   size_t* length, int* label);
NT_API nt_status nt_dataset_stats(const nt_dataset* ds, double* mean, double* std);
/* Synthetic multi-scale data: writes train/val/test TSVs and manifest.json. */
NT_API nt_status nt_synth_write(const char* spec_json, const char* out_dir);
NT_API nt_status nt_synth_default_spec(char** json);

/* Models. */

/* Fresh model from the "model" section of a run config; precision from "f64",
 * initialisation from "seed". */
NT_API nt_status nt_model_create(const char* config_json, nt_model** out);
NT_API nt_status nt_model_load(const char* path, int f64, nt_model** out);
/* `metadata_json` (object or NULL) is stored next to the model config. */
NT_API nt_status nt_model_save(const nt_model* model, const char* path, const char* metadata_json);
NT_API void nt_model_free(nt_model* model);
/* {"config": {...}, "parameters": N, "precision": "f32"|"f64"} */
NT_API nt_status nt_model_info(const nt_model* model, char** json);
/* Writes n x d representations into `out` (capacity `cap` doubles). */
NT_API nt_status nt_model_embed(const nt_model* model, const nt_dataset* ds, double* out, size_t cap, size_t* d);
/* {"layers": [[[...patch scores...] per head] per layer], "cls_to_cls": [[...]]} */
NT_API nt_status nt_model_attention(const nt_model* model, const nt_dataset* ds, size_t index, char** json);

/* Training and evaluation. */

/* Self-supervised pretraining of a fresh encoder. Multivariate series are
 * split into channels first. `loss_csv` receives "epoch,mean_loss,lr,tau". */
NT_API nt_status nt_pretrain(const char* config_json, const nt_dataset* train, nt_model** out, char** loss_csv);
/* Supervised fine-tuning from `init` (or from scratch when NULL). `test` may
 * be NULL. With finetune.ensemble = k > 1, k seeds are trained and test
 * metrics use their averaged logits; `out` is the first run. The report is
 * {"val": {...}, "test": {...}, "best_epoch": e, "train_loss": [...]}. */
NT_API nt_status nt_finetune(const char* config_json, const nt_model* init, const nt_dataset* train,
                             const nt_dataset* val, const nt_dataset* test, nt_model** out, char** report_json);
/* {"top1": a, "macro_f1": f} */
NT_API nt_status nt_evaluate(const nt_model* model, const nt_dataset* ds, char** metrics_json);
/* Linear probe on frozen representations. */
NT_API nt_status nt_linear_probe(const char* config_json, const nt_model* model, const nt_dataset* train,
                                 const nt_dataset* test, char** metrics_json);
/* {"top1": m, "macro_f1": m, "top1_std": s, "macro_f1_std": s, "episodes": n} */
NT_API nt_status nt_fewshot(const char* config_json, const nt_model* model, const nt_dataset* pool,
                            const nt_dataset* query, char** metrics_json);
/* {"silhouette": s, "ari": a, "nmi": n} */
NT_API nt_status nt_cluster(const char* config_json, const nt_model* model, const nt_dataset* ds,
                            char** metrics_json);
/* Centroid-distance scoring. Test label 0 is normal, any other label is an
 * anomaly. {"precision", "recall", "f1", "auroc", "threshold"} */
NT_API nt_status nt_anomaly(const char* config_json, const nt_model* model, const nt_dataset* normal,
                            const nt_dataset* test, char** metrics_json);

/* Appends one metrics CSV record (header written for new files) and returns a
 * human-readable table. `metrics_json` is the output of an evaluation call. */
NT_API nt_status nt_metrics_append(const char* csv_path, const char* command, const char* dataset,
                                   const char* split, const char* config_json, const char* metrics_json,
                                   char** table);

#ifdef __cplusplus
}
#endif

#endif /* NUTIME_NUTIME_H */
