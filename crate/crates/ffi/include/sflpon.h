#ifndef SFLPON_H
#define SFLPON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SflponMode {
  SFLPON_MODE_CLASSICAL = 0,
  SFLPON_MODE_SFL = 1,
} SflponMode;

typedef enum SflponStatus {
  SFLPON_STATUS_OK = 0,
  SFLPON_STATUS_NULL_POINTER = 1,
  SFLPON_STATUS_INVALID_ARGUMENT = 2,
  SFLPON_STATUS_DIMENSION_MISMATCH = 3,
  SFLPON_STATUS_NON_FINITE = 4,
  SFLPON_STATUS_EMPTY_INPUT = 5,
  SFLPON_STATUS_MIXED_ONU = 6,
  SFLPON_STATUS_CONFIG_ERROR = 7,
  SFLPON_STATUS_RUNTIME_ERROR = 8,
  SFLPON_STATUS_IO_ERROR = 9,
  SFLPON_STATUS_BUFFER_TOO_SMALL = 10,
  SFLPON_STATUS_PANIC = 99,
} SflponStatus;

/**
 * Opaque experiment handle.
 */
typedef struct SflponExperiment SflponExperiment;

/**
 * One round of telemetry, mirrored field for field.
 */
typedef struct SflponRoundRecord {
  uint32_t round;
  enum SflponMode mode;
  size_t n_selected;
  size_t n_involved;
  double upstream_bits;
  double saving_fraction;
  double accuracy;
  double t_total_min_s;
  double t_total_mean_s;
  double t_total_max_s;
  double round_time_s;
  uint64_t k_total;
} SflponRoundRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sflpon_version(void);

/**
 * Message for the last failed call on this thread, or NULL if the last call
 * succeeded. Valid until the next call into the library on this thread.
 */
const char *sflpon_last_error(void);

/**
 * Creates an experiment with the default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SflponStatus sflpon_experiment_new_default(struct SflponExperiment **out);

/**
 * Creates an experiment from a JSON configuration. Missing fields take
 * their defaults.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SflponStatus sflpon_experiment_from_json(const char *json, struct SflponExperiment **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `exp` must come from one of the constructors and not be freed twice.
 */
void sflpon_experiment_free(struct SflponExperiment *exp);

/**
 * Runs one round and writes its record to `out` (which may be NULL).
 *
 * # Safety
 * `exp` must be a live handle; `out`, if non-null, must be writable.
 */
enum SflponStatus sflpon_experiment_run_round(struct SflponExperiment *exp,
                                              struct SflponRoundRecord *out);

/**
 * Number of rounds run so far, or 0 for a null handle.
 *
 * # Safety
 * `exp` must be a live handle or NULL.
 */
size_t sflpon_experiment_rounds_run(const struct SflponExperiment *exp);

/**
 * Length of the global parameter vector, or 0 for a null handle.
 *
 * # Safety
 * `exp` must be a live handle or NULL.
 */
size_t sflpon_experiment_model_dim(const struct SflponExperiment *exp);

/**
 * Copies the current global parameters into `buf`, which holds `len` values.
 *
 * # Safety
 * `exp` must be a live handle; `buf` must hold `len` writable doubles.
 */
enum SflponStatus sflpon_experiment_global_params(const struct SflponExperiment *exp,
                                                  double *buf,
                                                  size_t len);

/**
 * Writes the records of all rounds run so far as CSV.
 *
 * # Safety
 * `exp` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum SflponStatus sflpon_experiment_write_csv(const struct SflponExperiment *exp, const char *path);

/**
 * Sample-weighted FedAvg over `n` client models stored row-major in
 * `weights` (`n * dim` values). The result (`dim` values) goes to `out`.
 *
 * # Safety
 * `onu`, `client` and `samples` must each hold `n` values, `weights` must
 * hold `n * dim` values and `out` must hold `dim` writable doubles.
 */
enum SflponStatus sflpon_fedavg_one_step(size_t n,
                                         size_t dim,
                                         const uint32_t *onu,
                                         const uint32_t *client,
                                         const uint64_t *samples,
                                         const double *weights,
                                         double *out);

/**
 * Same inputs as [`sflpon_fedavg_one_step`], aggregated per ONU first and
 * then at the server.
 *
 * # Safety
 * As for [`sflpon_fedavg_one_step`].
 */
enum SflponStatus sflpon_fedavg_two_step(size_t n,
                                         size_t dim,
                                         const uint32_t *onu,
                                         const uint32_t *client,
                                         const uint64_t *samples,
                                         const double *weights,
                                         double *out);

/**
 * `1 - n_onus / n_selected`, the upstream share saved by per-ONU aggregation.
 *
 * # Safety
 * `out` must point to a writable double.
 */
enum SflponStatus sflpon_bandwidth_saving(size_t n_onus,
                                          size_t n_selected,
                                          double model_bits,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFLPON_H */
