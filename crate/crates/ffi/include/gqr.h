#ifndef GQR_H
#define GQR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GqrStatus {
  GQR_STATUS_OK = 0,
  GQR_STATUS_NULL_POINTER = 1,
  GQR_STATUS_INVALID_ARGUMENT = 2,
  GQR_STATUS_CONFIG = 3,
  GQR_STATUS_DATA = 4,
  GQR_STATUS_IO = 5,
  GQR_STATUS_UNDEFINED_METRIC = 6,
  GQR_STATUS_STAGE_FAILED = 7,
  GQR_STATUS_INTERNAL = 8,
} GqrStatus;

/**
 * Validated pipeline configuration.
 */
typedef struct GqrConfig GqrConfig;

/**
 * Trained click model.
 */
typedef struct GqrCtrModel GqrCtrModel;

/**
 * Recommendation policy.
 */
typedef struct GqrPolicy GqrPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gqr_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Free with
 * [`gqr_string_free`].
 */
char *gqr_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void gqr_string_free(char *s);

/**
 * List click probability of `n` per-slot probabilities: `1 - prod(1 - p)`
 * for multi-choice, `sum(p)` for single-choice.
 *
 * # Safety
 * `p` must point to `n` readable doubles and `out` to one writable double.
 */
enum GqrStatus gqr_list_reward(const double *p, size_t n, bool single_choice, double *out);

/**
 * ROC AUC with ties counted one half. `labels` holds 0 or 1 bytes.
 *
 * # Safety
 * `scores` and `labels` must each hold `n` elements; `out` must be writable.
 */
enum GqrStatus gqr_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean binary log loss with clipped predictions.
 *
 * # Safety
 * As for [`gqr_auc`].
 */
enum GqrStatus gqr_logloss(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Rescaled mean absolute deviation between predicted and real per-set CTRs.
 *
 * # Safety
 * `predicted` and `real` must each hold `k` doubles; `out` must be writable.
 */
enum GqrStatus gqr_diff_ctr(const double *predicted, const double *real, size_t k, double *out);

/**
 * Load a click model saved by the `train-ctr` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GqrStatus gqr_ctr_model_load(const char *path, struct GqrCtrModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from [`gqr_ctr_model_load`], freed once.
 */
void gqr_ctr_model_free(struct GqrCtrModel *model);

/**
 * Estimated list click probability of `n` queries shown for `user_query`.
 *
 * # Safety
 * `model` must be a live handle, `user_query` a NUL-terminated string,
 * `queries` an array of `n` NUL-terminated strings, `out` writable.
 */
enum GqrStatus gqr_ctr_model_score_list(const struct GqrCtrModel *model,
                                        const char *user_query,
                                        const char *const *queries,
                                        size_t n,
                                        bool single_choice,
                                        double *out);

/**
 * Load a policy saved by the `sft` or `align` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GqrStatus gqr_policy_load(const char *path, struct GqrPolicy **out);

/**
 * # Safety
 * `policy` must be NULL or a handle from [`gqr_policy_load`], freed once.
 */
void gqr_policy_free(struct GqrPolicy *policy);

/**
 * Number of training updates applied to the policy.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum GqrStatus gqr_policy_version(const struct GqrPolicy *policy, uint64_t *out);

/**
 * Parse and validate a TOML pipeline config. Unknown keys are errors.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum GqrStatus gqr_config_from_toml(const char *toml, struct GqrConfig **out);

/**
 * # Safety
 * `config` must be NULL or a handle from [`gqr_config_from_toml`], freed once.
 */
void gqr_config_free(struct GqrConfig *config);

/**
 * Run the full pipeline into `out_dir` and return the run manifest as JSON
 * through `manifest_json` (free with [`gqr_string_free`]).
 *
 * # Safety
 * `config` must be a live handle, `out_dir` a NUL-terminated string and
 * `manifest_json` writable.
 */
enum GqrStatus gqr_pipeline_run(const struct GqrConfig *config,
                                const char *out_dir,
                                char **manifest_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GQR_H */
