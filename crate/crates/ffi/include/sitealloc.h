#ifndef SITEALLOC_H
#define SITEALLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_ARGUMENT = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  /**
   * Input files could not be read or parsed.
   */
  SA_STATUS_INPUT = 3,
  /**
   * Bad configuration string or parameters.
   */
  SA_STATUS_CONFIG = 4,
  SA_STATUS_UNKNOWN_SITE = 5,
  SA_STATUS_INVALID_ALLOCATION = 6,
  SA_STATUS_SOLVE_FAILED = 7,
  /**
   * The output buffer is shorter than the result.
   */
  SA_STATUS_BUFFER_TOO_SMALL = 8,
  SA_STATUS_PANIC = 9,
} SaStatus;

/**
 * Opaque handle over a loaded region and its candidate sites.
 */
typedef struct SaInstance SaInstance;

/**
 * Parameters of a synthetic county; zero fields take the library defaults.
 */
typedef struct SaSynthParams {
  size_t m;
  size_t n_sites;
  double segregation;
  uint64_t seed;
} SaSynthParams;

/**
 * Scores of one allocation. `d_optimality` is NaN when not computed.
 */
typedef struct SaScores {
  size_t coverage;
  double d_optimality;
  double equity;
  double combined;
} SaScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sa_last_error(void);

/**
 * Loads a region and its candidate sites. `strata` may be null.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum SaStatus sa_instance_from_files(const char *areas,
                                     const char *strata,
                                     const char *sites,
                                     struct SaInstance **out);

/**
 * Generates a seeded synthetic county.
 *
 * # Safety
 * `params` must be null or valid; `out` must be writable.
 */
enum SaStatus sa_instance_synth(const struct SaSynthParams *params, struct SaInstance **out);

/**
 * Releases an instance. Null is ignored.
 *
 * # Safety
 * `instance` must be null or come from a constructor above, and not be used afterwards.
 */
void sa_instance_free(struct SaInstance *instance);

/**
 * Number of areas; 0 for a null handle.
 *
 * # Safety
 * `instance` must be null or a live handle.
 */
size_t sa_instance_num_areas(const struct SaInstance *instance);

/**
 * Number of candidate sites before ownership filtering; 0 for a null handle.
 *
 * # Safety
 * `instance` must be null or a live handle.
 */
size_t sa_instance_num_sites(const struct SaInstance *instance);

/**
 * Copies the id of site `index` into `buf` as a NUL-terminated string.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum SaStatus sa_instance_site_id(const struct SaInstance *instance,
                                  size_t index,
                                  char *buf,
                                  size_t len);

/**
 * Scores the allocation given as 0-based site indices.
 *
 * # Safety
 * `selected` must point to `len` indices (may be null when `len` is 0);
 * `config` must be null or NUL-terminated; `out` must be writable.
 */
enum SaStatus sa_score(const struct SaInstance *instance,
                       const char *config,
                       const size_t *selected,
                       size_t len,
                       struct SaScores *out);

/**
 * Optimizes and writes the chosen 0-based site indices, ascending, to
 * `selected_out`. `config` must set `k`.
 *
 * # Safety
 * `selected_out` must point to `capacity` writable indices; `count_out`
 * and `out` must be writable; `config` must be NUL-terminated.
 */
enum SaStatus sa_optimize(const struct SaInstance *instance,
                          const char *config,
                          size_t *selected_out,
                          size_t capacity,
                          size_t *count_out,
                          struct SaScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SITEALLOC_H */
