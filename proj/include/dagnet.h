/* dagnet: a small DAG-structured CNN library.
 *
 * Every function returns a dagnet_status; on failure, dagnet_last_error()
 * holds a thread-local description of what went wrong. Handles are opaque
 * and must be released with their matching _free function. Strings returned
 * through char** out-parameters belong to the caller and must be released
 * with dagnet_string_free.
 */
#ifndef DAGNET_H
#define DAGNET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dagnet_status {
    DAGNET_OK = 0,
    DAGNET_ERR_ARGUMENT = 1, /* bad value, shape mismatch, unknown key */
    DAGNET_ERR_IO = 2,       /* missing file, failed read/write */
    DAGNET_ERR_FORMAT = 3,   /* bad magic, version, corrupt payload */
    DAGNET_ERR_NUMERIC = 4,  /* NaN/Inf surfaced during computation */
    DAGNET_ERR_INTERNAL = 5
} dagnet_status;

/* Message for the most recent failing call on this thread ("" if none). */
const char* dagnet_last_error(void);

void dagnet_string_free(char* s);

typedef struct dagnet_model dagnet_model;     /* a computation graph */
typedef struct dagnet_dataset dagnet_dataset; /* images + labels + splits */

/* ---- datasets ------------------------------------------------------- */

/* Reads <prefix>-{train,val,test}-{images,labels}.idx. */
dagnet_status dagnet_dataset_load(const char* prefix, dagnet_dataset** out);
dagnet_status dagnet_dataset_save(const dagnet_dataset* ds, const char* prefix);
/* Synthetic coarse-layout x fine-texture task; config keys: size, k_coarse,
 * k_fine, per_class, noise, train_frac, val_frac. */
dagnet_status dagnet_dataset_gen_synth(const char* config_text, uint64_t seed,
                                       dagnet_dataset** out);
dagnet_status dagnet_dataset_info(const dagnet_dataset* ds, uint64_t* count, int32_t* classes,
                                  int32_t* height, int32_t* width);
void dagnet_dataset_free(dagnet_dataset* ds);

/* ---- models ---------------------------------------------------------- */

dagnet_status dagnet_model_load(const char* path, dagnet_model** out);
dagnet_status dagnet_model_save(const dagnet_model* m, const char* path);
/* Multi-scale model from a backbone config; taps = "all" or a comma list of
 * backbone ReLU layer indices. */
dagnet_status dagnet_model_build(const char* config_text, const char* taps, uint64_t seed,
                                 dagnet_model** out);
/* Single-scale baseline: one pooled head at the deepest ReLU. */
dagnet_status dagnet_model_build_chain(const char* config_text, uint64_t seed,
                                       dagnet_model** out);
dagnet_status dagnet_model_info(const dagnet_model* m, uint32_t* nodes, int32_t* classes);
/* Comma list of backbone layer indices that carry a pooled head. */
dagnet_status dagnet_model_taps(const dagnet_model* m, char** out);
/* image: row-major H*W*C doubles matching the model's input shape; scores
 * may be NULL, otherwise it receives the K pre-softmax class scores. */
dagnet_status dagnet_model_predict(const dagnet_model* m, const double* image, size_t len,
                                   int32_t* predicted, double* scores);
void dagnet_model_free(dagnet_model* m);

/* ---- workflows ------------------------------------------------------- */

/* SGD on the dataset's train split; mode "finetune" trains everything,
 * "ots" freezes all but the score heads. Writes per-epoch metrics CSV. */
dagnet_status dagnet_train_run(dagnet_model* m, const dagnet_dataset* ds,
                               const char* config_text, const char* mode, uint64_t seed,
                               int32_t jobs, const char* metrics_csv);
/* split: "train" | "val" | "test". report_csv may be NULL. */
dagnet_status dagnet_eval_run(const dagnet_model* m, const dagnet_dataset* ds,
                              const char* split, int32_t jobs, const char* report_csv,
                              double* accuracy);
/* Per-layer probe analyses + greedy forward tap selection. Writes
 * <out_prefix>-layers.csv, -classes.csv, -pooled-vs-full.csv,
 * -selection.csv. model_path may be NULL (a fresh seeded model is built
 * from the config). Returns the selected taps as a comma list. */
dagnet_status dagnet_select_run(const char* config_text, const dagnet_dataset* ds,
                                const char* model_path, uint64_t seed, int32_t jobs,
                                const char* out_prefix, char** selected_taps);
/* Trains the 2x2 {chain, dag} x {ots, finetune} matrix from one shared
 * initialization and writes arch,mode,accuracy rows to out_csv. */
dagnet_status dagnet_diagnose_run(const char* config_text, const dagnet_dataset* ds,
                                  const char* taps, uint64_t seed, int32_t jobs,
                                  const char* out_csv);
/* Central-finite-difference check of the analytic gradients on a seeded
 * random input; worst (may be NULL) receives the worst entry's location. */
dagnet_status dagnet_gradcheck_run(const char* config_text, const char* taps, uint64_t seed,
                                   double step, double* max_rel_error, char** worst);
/* First-Conv gradient magnitudes per epoch for chain vs. DAG training runs
 * from identical backbone initialization, plus their ratio. */
dagnet_status dagnet_gradtrace_run(const char* config_text, const dagnet_dataset* ds,
                                   const char* taps, uint64_t seed, int32_t jobs,
                                   const char* out_csv);
/* Nearest neighbours of one gallery image by pooled-feature L2 distance at
 * one backbone ReLU layer. Returns CSV text: layer,rank,gallery_index,distance. */
dagnet_status dagnet_retrieve_run(const dagnet_model* m, const dagnet_dataset* ds,
                                  const char* split, int32_t layer, int32_t query_index,
                                  int32_t count, int32_t jobs, char** result_csv);

/* ---- support --------------------------------------------------------- */

/* Parses config text (with any appended overrides) and echoes the resolved
 * canonical form. */
dagnet_status dagnet_config_resolve(const char* config_text, char** canonical);
/* FNV-1a 64 digest of a file's bytes, for run manifests. */
dagnet_status dagnet_file_digest(const char* path, uint64_t* digest);

#ifdef __cplusplus
}
#endif

#endif /* DAGNET_H */
