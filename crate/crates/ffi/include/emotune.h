#ifndef EMOTUNE_H
#define EMOTUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define EMT_NON_TARGET -1

#define EMT_LABEL_COUNT 8

/**
 * Result codes. Codes 1 to 3 mirror the command line exit codes.
 */
typedef enum EmtStatus {
  EMT_STATUS_OK = 0,
  /**
   * Bad configuration or usage.
   */
  EMT_STATUS_CONFIG = 1,
  /**
   * A model backend failed.
   */
  EMT_STATUS_BACKEND = 2,
  /**
   * Bad data, journal or file system problem.
   */
  EMT_STATUS_DATA = 3,
  EMT_STATUS_NULL_POINTER = 10,
  EMT_STATUS_INVALID_ARGUMENT = 11,
  EMT_STATUS_INVALID_UTF8 = 12,
  /**
   * Nothing to measure, e.g. metrics of an empty matrix.
   */
  EMT_STATUS_EMPTY = 13,
  EMT_STATUS_PANIC = 99,
} EmtStatus;

/**
 * Counts of (truth, prediction) pairs, non-target predictions included.
 */
typedef struct EmtConfusion EmtConfusion;

/**
 * A wheel defining distance and polarity between labels.
 */
typedef struct EmtWheel EmtWheel;

typedef struct EmtMetricReport {
  double accuracy;
  double ecc;
  /**
   * Only meaningful when `has_emc` is non-zero.
   */
  double emc;
  int32_t has_emc;
  uint64_t n_test;
  uint64_t n_correct;
} EmtMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *emt_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void emt_string_free(char *s);

/**
 * Static name of label `index`, or null when out of range.
 */
const char *emt_label_name(int32_t index);

/**
 * Maps free model output to a label index, or [`EMT_NON_TARGET`].
 *
 * # Safety
 * `raw` must be a NUL-terminated string and `out` writable.
 */
enum EmtStatus emt_parse_label(const char *raw, int32_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum EmtStatus emt_wheel_new_default(struct EmtWheel **out);

/**
 * Builds a wheel from eight label indices in wheel order. Polarity follows
 * each label's usual valence.
 *
 * # Safety
 * `order` must point to 8 readable values and `out` be writable.
 */
enum EmtStatus emt_wheel_new(const int32_t *order,
                             uint32_t polarity_constant,
                             struct EmtWheel **out);

/**
 * # Safety
 * `wheel` must come from a wheel constructor, or be null.
 */
void emt_wheel_free(struct EmtWheel *wheel);

/**
 * Emotional weight between two labels.
 *
 * # Safety
 * `wheel` must be live and `out` writable.
 */
enum EmtStatus emt_emotional_weight(const struct EmtWheel *wheel,
                                    int32_t a,
                                    int32_t b,
                                    uint32_t *out);

/**
 * Circular distance between two labels on the wheel.
 *
 * # Safety
 * `wheel` must be live and `out` writable.
 */
enum EmtStatus emt_wheel_distance(const struct EmtWheel *wheel,
                                  int32_t a,
                                  int32_t b,
                                  uint32_t *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum EmtStatus emt_confusion_new(struct EmtConfusion **out);

/**
 * # Safety
 * `cm` must come from [`emt_confusion_new`], or be null.
 */
void emt_confusion_free(struct EmtConfusion *cm);

/**
 * Adds `n` samples of `truth` predicted as `predicted` (which may be
 * [`EMT_NON_TARGET`]).
 *
 * # Safety
 * `cm` must be live.
 */
enum EmtStatus emt_confusion_add(struct EmtConfusion *cm,
                                 int32_t truth,
                                 int32_t predicted,
                                 uint64_t n);

/**
 * Accuracy, ECC and EMC of the matrix under `wheel`.
 *
 * # Safety
 * `cm` and `wheel` must be live and `out` writable.
 */
enum EmtStatus emt_confusion_metrics(const struct EmtConfusion *cm,
                                     const struct EmtWheel *wheel,
                                     struct EmtMetricReport *out);

/**
 * Majority vote over `len` outputs given in selection order.
 *
 * # Safety
 * `outputs` must point to `len` readable values and `out` be writable.
 */
enum EmtStatus emt_majority_vote(const int32_t *outputs, size_t len, int32_t *out);

/**
 * Tunes prompts for one user as the `tune` command does, resuming any
 * journal unless `fresh` is non-zero.
 *
 * # Safety
 * Both strings must be NUL-terminated.
 */
enum EmtStatus emt_tune(const char *config_path, const char *user_id, int32_t fresh);

/**
 * Runs voting inference on the user's held-out split and fills `out` with
 * its metrics under the configured wheel.
 *
 * # Safety
 * Both strings must be NUL-terminated and `out` writable.
 */
enum EmtStatus emt_infer(const char *config_path,
                         const char *user_id,
                         int32_t fresh,
                         struct EmtMetricReport *out);

/**
 * Runs every step for every user and returns the report table in
 * `report`, to be released with [`emt_string_free`].
 *
 * # Safety
 * `config_path` must be NUL-terminated and `report` writable.
 */
enum EmtStatus emt_pipeline(const char *config_path, int32_t fresh, char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMOTUNE_H */
