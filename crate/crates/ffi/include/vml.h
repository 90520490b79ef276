#ifndef VML_H
#define VML_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  VML_STATUS_OK = 0,
  VML_STATUS_INVALID_ARGUMENT = 1,
  VML_STATUS_NULL_POINTER = 2,
  VML_STATUS_INVALID_UTF8 = 3,
  VML_STATUS_PARSE_FAILURE = 4,
  VML_STATUS_BACKEND = 5,
  VML_STATUS_IO = 6,
  VML_STATUS_CONFIG = 7,
  VML_STATUS_BUFFER_TOO_SMALL = 8,
  VML_STATUS_PANIC = 9,
} VmlStatus;

/**
 * A finished training run.
 */
typedef struct VmlRun VmlRun;

/**
 * A task with its prompt templates.
 */
typedef struct VmlTask VmlTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL.
 */
const char *vml_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *vml_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string returned through a `char **` out-parameter
 * of this library, not yet freed.
 */
void vml_string_free(char *s);

/**
 * Creates a task handle: linear, polynomial, sinusoid, two_blobs,
 * two_circles or text.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` writable.
 */
VmlStatus vml_task_new(const char *name, VmlTask **out);

/**
 * # Safety
 * `task` must be NULL or a live handle from [`vml_task_new`].
 */
void vml_task_free(VmlTask *task);

/**
 * Number of doubles in one prediction value of the task.
 *
 * # Safety
 * `task` must be a live handle.
 */
size_t vml_task_value_width(const VmlTask *task);

/**
 * Parses a learner reply. Writes the value (a label is written as a
 * double) and whether parsing succeeded; a failed parse writes the
 * fallback value and still returns OK.
 *
 * # Safety
 * `values` must hold `cap` doubles; other pointers must be valid.
 */
VmlStatus vml_parse_learner_output(const VmlTask *task,
                                   const char *text,
                                   double *values,
                                   size_t cap,
                                   size_t *len,
                                   bool *parse_ok);

/**
 * Parses an optimizer reply into the new description and, when
 * `reasoning` is not NULL, the reasoning text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `new_theta` writable.
 */
VmlStatus vml_parse_optimizer_output(const char *text, char **new_theta, char **reasoning);

/**
 * Mean squared error over `n` pairs.
 *
 * # Safety
 * `preds` and `targets` must hold `n` doubles; `out` must be writable.
 */
VmlStatus vml_loss_mse(const double *preds, const double *targets, size_t n, double *out);

/**
 * Cross-entropy over `n` row-major probability vectors of width `k`.
 *
 * # Safety
 * `preds` and `targets` must hold `n * k` doubles; `out` must be writable.
 */
VmlStatus vml_loss_cross_entropy(const double *preds,
                                 const double *targets,
                                 size_t n,
                                 size_t k,
                                 double *out);

/**
 * Fraction of matching labels. A negative prediction marks an
 * unparseable output and counts as wrong.
 *
 * # Safety
 * `preds` and `targets` must hold `n` values; `out` must be writable.
 */
VmlStatus vml_accuracy(const int64_t *preds, const int64_t *targets, size_t n, double *out);

/**
 * Renders the learner prompt for one numeric input of `dim` values.
 *
 * # Safety
 * `theta` must be a NUL-terminated string, `input` must hold `dim`
 * doubles and `out` must be writable.
 */
VmlStatus vml_render_learner_prompt(const VmlTask *task,
                                    const char *theta,
                                    const double *input,
                                    size_t dim,
                                    char **out);

/**
 * Renders the optimizer prompt for a batch of `n` numeric points.
 * `predictions` and `targets` hold `n * vml_task_value_width(task)` values.
 * The loss line is included when `include_loss` is true.
 *
 * # Safety
 * Array pointers must hold the stated number of doubles; `theta` must be a
 * NUL-terminated string and `out` writable.
 */
VmlStatus vml_render_optimizer_prompt(const VmlTask *task,
                                      const char *theta,
                                      const double *inputs,
                                      const double *predictions,
                                      const double *targets,
                                      size_t n,
                                      bool include_loss,
                                      double loss,
                                      char **out);

/**
 * Runs a full training from a TOML config, persisting the run log to its
 * output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` writable.
 */
VmlStatus vml_train(const char *config_path, VmlRun **out);

/**
 * Number of steps in a run.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t vml_run_step_count(const VmlRun *run);

/**
 * Logged loss of step `index` (0-based).
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
VmlStatus vml_run_step_loss(const VmlRun *run, size_t index, double *out);

/**
 * The final learned description of a run.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
VmlStatus vml_run_final_theta(const VmlRun *run, char **out);

/**
 * # Safety
 * `run` must be NULL or a live handle from [`vml_train`].
 */
void vml_run_free(VmlRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VML_H */
