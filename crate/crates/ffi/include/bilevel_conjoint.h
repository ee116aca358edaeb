#ifndef BILEVEL_CONJOINT_H
#define BILEVEL_CONJOINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BcStatus {
  BC_STATUS_OK = 0,
  BC_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid configuration or input document.
   */
  BC_STATUS_CONFIG = 2,
  /**
   * Request illegal in the current session or study state.
   */
  BC_STATUS_STATE = 3,
  BC_STATUS_NUMERICAL = 4,
  BC_STATUS_DOMAIN = 5,
  BC_STATUS_NOT_FOUND = 6,
  BC_STATUS_IO = 7,
  BC_STATUS_INVALID_UTF8 = 8,
  /**
   * A buffer was too small; the required length is in the message.
   */
  BC_STATUS_BUFFER_TOO_SMALL = 9,
  BC_STATUS_PANIC = 10,
} BcStatus;

/**
 * The final form scorer of one respondent, evaluated at design vectors.
 */
typedef struct BcScorer BcScorer;

/**
 * A survey service, in memory or backed by a store directory.
 */
typedef struct BcService BcService;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success. The pointer stays
 * valid until the next call on the same thread.
 */
const char *bc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bc_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void bc_string_free(char *s);

/**
 * Opens a service. A null `store_path` keeps everything in memory; otherwise study logs
 * under the directory are replayed. With `use_seed`, every new study takes `seed`.
 *
 * # Safety
 * `store_path` is null or a NUL-terminated string; `out` is writable.
 */
enum BcStatus bc_service_new(const char *store_path,
                             bool use_seed,
                             uint64_t seed,
                             struct BcService **out);

/**
 * # Safety
 * `svc` is null or a handle from [`bc_service_new`] not yet freed.
 */
void bc_service_free(struct BcService *svc);

/**
 * Creates a study from a JSON config (`{}` for the defaults) and returns its id.
 *
 * # Safety
 * Pointers are valid; strings are NUL-terminated.
 */
enum BcStatus bc_study_create(const struct BcService *svc, const char *config_json, char **out_id);

/**
 * Starts a respondent session and returns its id.
 *
 * # Safety
 * Pointers are valid; strings are NUL-terminated.
 */
enum BcStatus bc_session_create(const struct BcService *svc, const char *study_id, char **out_id);

/**
 * The pending question of a session as the JSON the HTTP API serves.
 *
 * # Safety
 * Pointers are valid; strings are NUL-terminated.
 */
enum BcStatus bc_next_question(const struct BcService *svc,
                               const char *session_id,
                               char **out_json);

/**
 * Records an answer such as `{"type":"form","value":"left_better"}` or
 * `{"type":"purchase","value":"right"}` and returns the submit summary JSON.
 *
 * # Safety
 * Pointers are valid; strings are NUL-terminated.
 */
enum BcStatus bc_submit_answer(const struct BcService *svc,
                               const char *session_id,
                               const char *answer_json,
                               char **out_json);

/**
 * Finalizes a study. The report JSON is always written; the models JSON only when
 * `out_models_json` is not null.
 *
 * # Safety
 * Pointers are valid; strings are NUL-terminated.
 */
enum BcStatus bc_finalize(const struct BcService *svc,
                          const char *study_id,
                          char **out_report_json,
                          char **out_models_json);

/**
 * Mesh JSON of a design of 19 values in [0, 1].
 *
 * # Safety
 * `design` points to `len` doubles; `out_json` is writable.
 */
enum BcStatus bc_mesh_json(const double *design, size_t len, size_t resolution, char **out_json);

/**
 * Writes the 325 pairwise control-point distances of a design into `out`.
 *
 * # Safety
 * `design` points to `len` doubles; `out` points to `out_len` writable doubles.
 */
enum BcStatus bc_features(const double *design, size_t len, double *out, size_t out_len);

/**
 * Number of design variables, and of features written by [`bc_features`].
 *
 * # Safety
 * Both pointers are writable.
 */
enum BcStatus bc_dimensions(size_t *n_design, size_t *n_features);

/**
 * Builds the final form scorer of `respondent` from a finalized models JSON.
 *
 * # Safety
 * `models_json` is NUL-terminated; `out` is writable.
 */
enum BcStatus bc_scorer_from_models(const char *models_json,
                                    size_t respondent,
                                    struct BcScorer **out);

/**
 * Form score of a design.
 *
 * # Safety
 * `scorer` is a live handle; `design` points to `len` doubles; `out` is writable.
 */
enum BcStatus bc_scorer_score(const struct BcScorer *scorer,
                              const double *design,
                              size_t len,
                              double *out);

/**
 * # Safety
 * `scorer` is null or a handle from [`bc_scorer_from_models`] not yet freed.
 */
void bc_scorer_free(struct BcScorer *scorer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BILEVEL_CONJOINT_H */
