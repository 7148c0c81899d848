#ifndef C2F_H
#define C2F_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum C2fStatus {
  C2F_STATUS_OK = 0,
  C2F_STATUS_NULL_POINTER = 1,
  C2F_STATUS_INVALID_ARGUMENT = 2,
  C2F_STATUS_IO = 3,
  C2F_STATUS_FORMAT = 4,
  C2F_STATUS_CONFIG = 5,
  C2F_STATUS_TRAINING = 6,
  C2F_STATUS_EVALUATION = 7,
  C2F_STATUS_PANIC = 8,
} C2fStatus;

/**
 * Opaque run configuration.
 */
typedef struct C2fConfig C2fConfig;

/**
 * Headline numbers from a finished run.
 */
typedef struct C2fRunSummary {
  double micro_f1;
  double macro_f1;
  uint32_t r_percent;
  size_t n_passages;
  size_t n_seeds;
  size_t n_warnings;
} C2fRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after success.
 *
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *c2f_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *c2f_version(void);

/**
 * Picks the confident-set percentage from per-coarse seed counts.
 *
 * `seeds[i]` and `totals[i]` describe coarse label `i`. Candidates are
 * 1, 5, 10, 15 and 20.
 *
 * # Safety
 * `seeds` and `totals` must point to `n` readable values and `out_r` to a
 * writable `uint32_t`.
 */
enum C2fStatus c2f_select_r(const size_t *seeds, const size_t *totals, size_t n, uint32_t *out_r);

/**
 * Hub-corrected similarity of one passage to every prototype.
 *
 * `prototypes` is row-major, `n_prototypes` rows of `dim` values. `metric`
 * is one of `"csls"`, `"cosine"`, `"manhattan"`, `"euclidean"`. Writes
 * `n_prototypes` scores to `out`.
 *
 * # Safety
 * `passage` must hold `dim` values, `prototypes` `n_prototypes * dim`
 * values and `out` room for `n_prototypes` values. `metric` must be a
 * NUL-terminated string.
 */
enum C2fStatus c2f_similarity(const double *passage,
                              const double *prototypes,
                              size_t n_prototypes,
                              size_t dim,
                              const char *metric,
                              size_t k,
                              double *out);

/**
 * Micro and macro F1 for class-index label arrays.
 *
 * # Safety
 * `gold` and `predicted` must hold `n` values; the outputs must be writable.
 */
enum C2fStatus c2f_f1_scores(const size_t *gold,
                             const size_t *predicted,
                             size_t n,
                             size_t n_classes,
                             double *out_micro,
                             double *out_macro);

/**
 * Creates a configuration with default settings and the given inputs.
 *
 * # Safety
 * All paths must be NUL-terminated strings; `out` must be writable.
 */
enum C2fStatus c2f_config_new(const char *taxonomy,
                              const char *corpus,
                              const char *passages,
                              const char *prototypes,
                              const char *output,
                              struct C2fConfig **out);

/**
 * Reads a TOML or JSON configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum C2fStatus c2f_config_load(const char *path, struct C2fConfig **out);

/**
 * Sets the random seed.
 *
 * # Safety
 * `config` must come from this library and not be freed.
 */
enum C2fStatus c2f_config_set_seed(struct C2fConfig *config, uint64_t seed);

/**
 * Sets the similarity metric by name.
 *
 * # Safety
 * `config` must come from this library; `metric` must be NUL-terminated.
 */
enum C2fStatus c2f_config_set_metric(struct C2fConfig *config, const char *metric);

/**
 * Sets the confident-set percentage; 0 selects it from the seed ratios.
 *
 * # Safety
 * `config` must come from this library and not be freed.
 */
enum C2fStatus c2f_config_set_r(struct C2fConfig *config, uint32_t r_percent);

/**
 * Turns the bootstrapping phase off or on.
 *
 * # Safety
 * `config` must come from this library and not be freed.
 */
enum C2fStatus c2f_config_set_no_bootstrap(struct C2fConfig *config, bool no_bootstrap);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and must not be used afterwards.
 */
void c2f_config_free(struct C2fConfig *config);

/**
 * Trains, predicts, writes artifacts to the output directory and fills
 * `out` with the headline numbers. F1 fields are NaN when the corpus has no
 * gold labels.
 *
 * # Safety
 * `config` must come from this library; `out` must be writable.
 */
enum C2fStatus c2f_run(const struct C2fConfig *config, struct C2fRunSummary *out);

/**
 * Scores a predictions TSV against the gold labels in a corpus file.
 *
 * # Safety
 * Paths must be NUL-terminated strings; the outputs must be writable.
 */
enum C2fStatus c2f_evaluate_files(const char *taxonomy,
                                  const char *corpus,
                                  const char *predictions,
                                  double *out_micro,
                                  double *out_macro);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* C2F_H */
