#ifndef ASD_H
#define ASD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AsdStatus {
  ASD_STATUS_OK = 0,
  ASD_STATUS_NULL_POINTER = 1,
  ASD_STATUS_INVALID_ARGUMENT = 2,
  ASD_STATUS_IO = 3,
  ASD_STATUS_FORMAT = 4,
  ASD_STATUS_NUMERICAL = 5,
  ASD_STATUS_MISMATCH = 6,
  ASD_STATUS_PANIC = 7,
} AsdStatus;

/**
 * Checkpoint plus per-ID inlier models; scores raw waveforms.
 */
typedef struct AsdDetector AsdDetector;

/**
 * A fitted GMM or LOF model.
 */
typedef struct AsdInlier AsdInlier;

/**
 * Log-mel front end with the default analysis settings.
 */
typedef struct AsdLogMel AsdLogMel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *asd_version(void);

/**
 * Message of the last failed call on this thread, or NULL.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *asd_last_error_message(void);

/**
 * ROC AUC with anomalies as the positive class.
 *
 * # Safety
 * `normal` and `anomaly` must point to `n_normal` and `n_anomaly` doubles.
 */
enum AsdStatus asd_auc(const double *normal,
                       size_t n_normal,
                       const double *anomaly,
                       size_t n_anomaly,
                       double *out);

/**
 * Partial AUC over false positive rates in `[0, max_fpr]`, divided by `max_fpr`.
 *
 * # Safety
 * Same contract as [`asd_auc`].
 */
enum AsdStatus asd_pauc(const double *normal,
                        size_t n_normal,
                        const double *anomaly,
                        size_t n_anomaly,
                        double max_fpr,
                        double *out);

/**
 * Combines segment scores with `method`: "mean", "max" or "mean_above_median".
 *
 * # Safety
 * `method` must be a NUL-terminated string and `scores` must hold `n` doubles.
 */
enum AsdStatus asd_aggregate(const char *method, const double *scores, size_t n, double *out);

/**
 * # Safety
 * `out` must be a valid pointer to receive the handle.
 */
enum AsdStatus asd_logmel_new(struct AsdLogMel **out);

/**
 * Number of mel bands per frame, or 0 for a null handle.
 *
 * # Safety
 * `mel` must be null or a live handle.
 */
size_t asd_logmel_n_mels(const struct AsdLogMel *mel);

/**
 * Frames produced for a waveform of `n_samples`, or 0 for a null handle.
 *
 * # Safety
 * `mel` must be null or a live handle.
 */
size_t asd_logmel_frames(const struct AsdLogMel *mel, size_t n_samples);

/**
 * Standardizes `wave` with `mean`/`std` and writes a row-major
 * frames x n_mels matrix to `out`, which must hold exactly `out_len` doubles.
 *
 * # Safety
 * `wave` must hold `n` doubles and `out` must hold `out_len` doubles.
 */
enum AsdStatus asd_logmel_compute(const struct AsdLogMel *mel,
                                  const double *wave,
                                  size_t n,
                                  double mean,
                                  double std,
                                  double *out,
                                  size_t out_len);

/**
 * # Safety
 * `mel` must be null or a handle from [`asd_logmel_new`] not yet freed.
 */
void asd_logmel_free(struct AsdLogMel *mel);

/**
 * Loads a model written by the `fit-inlier` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AsdStatus asd_inlier_load(const char *path_c, struct AsdInlier **out);

/**
 * Fits a model on `n_points` row-major points of `dim` values.
 * `kind` is "gmm" (full covariance, `p` components) or "lof" (`p` neighbours).
 *
 * # Safety
 * `kind` must be a NUL-terminated string, `points` must hold
 * `n_points * dim` doubles and `out` must be a valid pointer.
 */
enum AsdStatus asd_inlier_fit(const char *kind,
                              size_t p,
                              const double *points,
                              size_t n_points,
                              size_t dim,
                              uint64_t seed,
                              struct AsdInlier **out);

/**
 * Feature dimension of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t asd_inlier_dim(const struct AsdInlier *model);

/**
 * Anomaly score of one point; larger means less typical.
 *
 * # Safety
 * `x` must hold `dim` doubles.
 */
enum AsdStatus asd_inlier_score(const struct AsdInlier *model,
                                const double *x,
                                size_t dim,
                                double *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void asd_inlier_free(struct AsdInlier *model);

/**
 * Builds a detector from a checkpoint and a directory of inlier models.
 * Pass `p = 0` when the directory holds models for a single p.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum AsdStatus asd_detector_new(const char *checkpoint,
                                const char *inlier_dir,
                                size_t p,
                                struct AsdDetector **out);

/**
 * Clip-level anomaly score for a 16 kHz waveform of product `product_id`.
 *
 * # Safety
 * `wave` must hold `n` doubles.
 */
enum AsdStatus asd_detector_score(const struct AsdDetector *detector,
                                  const double *wave,
                                  size_t n,
                                  size_t product_id,
                                  double *out);

/**
 * # Safety
 * `detector` must be null or a handle not yet freed.
 */
void asd_detector_free(struct AsdDetector *detector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASD_H */
