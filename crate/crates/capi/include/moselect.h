#ifndef MOSELECT_H
#define MOSELECT_H

/* Generated by cbindgen from moselect-capi; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MOSELECT_OK 0

#define MOSELECT_ERR_INVALID_ARGUMENT 1

#define MOSELECT_ERR_DIMENSION 2

#define MOSELECT_ERR_NUMERICAL 3

#define MOSELECT_ERR_DEGENERATE_DATA 4

#define MOSELECT_ERR_CALIBRATION 5

#define MOSELECT_ERR_TRAINING 6

#define MOSELECT_ERR_MISSING_ARTIFACT 7

#define MOSELECT_ERR_CONFIG 8

#define MOSELECT_ERR_FORMAT 9

#define MOSELECT_ERR_IO 10

#define MOSELECT_ERR_NULL_POINTER 11

/**
 * Entropy thresholds for one model; create with
 * `moselect_calibration_load`, release with `moselect_calibration_free`.
 */
typedef struct MoselectCalibration MoselectCalibration;

/**
 * Trained VAE parameters; create with `moselect_model_load`, release with
 * `moselect_model_free`.
 */
typedef struct MoselectModel MoselectModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never freed.
 */
const char *moselect_version(void);

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *moselect_last_error(void);

/**
 * Shannon entropy (natural log) of the sum-normalized vector.
 *
 * # Safety
 * `values` must point to `len` readable f64s; `out` must be writable.
 */
int32_t moselect_entropy(const double *values, size_t len, double *out);

/**
 * Noise variance 10^(-snr_db/10) for unit total signal power.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t moselect_snr_to_noise_var(double snr_db, double *out);

/**
 * Half-wavelength ULA steering vector for broadside angle `theta_rad`,
 * written as `n_antennas` interleaved (re, im) pairs.
 *
 * # Safety
 * `out` must have room for `2 * n_antennas` f64s.
 */
int32_t moselect_steering_vector(double theta_rad, size_t n_antennas, double *out);

/**
 * Sample covariance (1/T) Σ y_t y_tᴴ of `t_snapshots` snapshots.
 * `y` is column-major interleaved complex (snapshot t occupies elements
 * `2*n_antennas*t ..`); `out` receives the N×N matrix row-major interleaved.
 *
 * # Safety
 * `y` must hold `2 * n_antennas * t_snapshots` f64s and `out` must have
 * room for `2 * n_antennas * n_antennas`.
 */
int32_t moselect_sample_covariance(const double *y,
                                   size_t n_antennas,
                                   size_t t_snapshots,
                                   double *out);

/**
 * Information-criterion model-order estimate from sample-covariance
 * eigenvalues (any order; sorted internally). `rule` is 0 for AIC,
 * 1 for MDL.
 *
 * # Safety
 * `eigenvalues` must point to `len` readable f64s; `out_order` must be
 * writable.
 */
int32_t moselect_ic_select(const double *eigenvalues,
                           size_t len,
                           size_t t_snapshots,
                           int32_t rule,
                           size_t *out_order);

/**
 * Load a trained model checkpoint. On success `*out` owns the handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
int32_t moselect_model_load(const char *path, struct MoselectModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer from `moselect_model_load` that has
 * not been freed.
 */
void moselect_model_free(struct MoselectModel *model);

/**
 * Array size N the model was trained for; snapshot buffers passed to
 * `moselect_predict_mo` must have this many rows.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
int32_t moselect_model_n_antennas(const struct MoselectModel *model, size_t *out);

/**
 * Load an entropy calibration. On success `*out` owns the handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
int32_t moselect_calibration_load(const char *path, struct MoselectCalibration **out);

/**
 * Release a calibration handle. Null is a no-op.
 *
 * # Safety
 * `calibration` must be null or a pointer from `moselect_calibration_load`
 * that has not been freed.
 */
void moselect_calibration_free(struct MoselectCalibration *calibration);

/**
 * Model-order estimate for one snapshot batch. `y` is column-major
 * interleaved complex N×T (layout as in `moselect_sample_covariance`);
 * `noise_var` is the per-antenna complex noise variance. The calibration
 * must have been built for this model; a fingerprint mismatch fails with
 * `MOSELECT_ERR_CALIBRATION`.
 *
 * # Safety
 * `model` and `calibration` must be live handles, `y` must hold
 * `2 * n_antennas * t_snapshots` f64s, `out_order` must be writable.
 */
int32_t moselect_predict_mo(const struct MoselectModel *model,
                            const struct MoselectCalibration *calibration,
                            const double *y,
                            size_t n_antennas,
                            size_t t_snapshots,
                            double noise_var,
                            size_t *out_order);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOSELECT_H */
