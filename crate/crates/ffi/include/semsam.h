#ifndef SEMSAM_H
#define SEMSAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Truncation filter selector for `semsam_decode_step`.
 */
typedef enum SemsamFilter {
  /**
   * Keep the smallest set with cumulative probability >= `filter_value`.
   */
  SemsamFilter_TopP = 0,
  /**
   * Keep the `filter_value` highest-probability tokens.
   */
  SemsamFilter_TopM = 1,
} SemsamFilter;

/**
 * Neighbor-slot keep rule selector.
 */
typedef enum SemsamKeep {
  /**
   * Keep the first `keep_value` slots.
   */
  SemsamKeep_KPrime = 0,
  /**
   * Keep the prefix with similarity >= `keep_value` (self always kept).
   */
  SemsamKeep_Threshold = 1,
} SemsamKeep;

/**
 * Token selection rule.
 */
typedef enum SemsamSelect {
  SemsamSelect_Argmax = 0,
  /**
   * Requires `has_seed` and `seed`.
   */
  SemsamSelect_Sample = 1,
} SemsamSelect;

/**
 * Status codes returned by every fallible function.
 */
typedef enum SemsamStatus {
  SemsamStatus_Ok = 0,
  SemsamStatus_NullArgument = 1,
  SemsamStatus_InvalidUtf8 = 2,
  SemsamStatus_LoadFailed = 3,
  SemsamStatus_BadRequest = 4,
  SemsamStatus_DecodeFailed = 5,
} SemsamStatus;

/**
 * Opaque vocabulary-partition handle.
 */
typedef struct SemsamPartition SemsamPartition;

/**
 * Opaque neighbor-table handle.
 */
typedef struct SemsamTable SemsamTable;

/**
 * Result of one decode step.
 */
typedef struct SemsamStepResult {
  uint32_t token;
  /**
   * 1 when the step deferred to the base distribution.
   */
  uint8_t deferred;
  /**
   * Neighbor-table lookups performed (complexity accounting).
   */
  uint64_t lookups;
} SemsamStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a neighbor table from a SEMN file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SemsamStatus semsam_table_load(const char *path, struct SemsamTable **out);

/**
 * # Safety
 * `handle` must come from `semsam_table_load` and not be freed twice.
 */
void semsam_table_free(struct SemsamTable *handle);

/**
 * Number of content-token rows in the table, 0 on null.
 *
 * # Safety
 * `handle` must be a live table handle or null.
 */
uint64_t semsam_table_rows(const struct SemsamTable *handle);

/**
 * Load a vocabulary partition from its JSON file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SemsamStatus semsam_partition_load(const char *path, struct SemsamPartition **out);

/**
 * # Safety
 * `handle` must come from `semsam_partition_load` and not be freed twice.
 */
void semsam_partition_free(struct SemsamPartition *handle);

/**
 * Run one semantically rescored decode step over a raw logits buffer.
 * `logits_len` must equal the embedding vocabulary size of the partition.
 *
 * # Safety
 * All pointers must be valid; `logits` must reference `logits_len` f32s.
 */
enum SemsamStatus semsam_decode_step(const struct SemsamTable *table,
                                     const struct SemsamPartition *partition,
                                     const float *logits,
                                     uintptr_t logits_len,
                                     float temperature,
                                     enum SemsamFilter filter,
                                     double filter_value,
                                     enum SemsamKeep keep,
                                     double keep_value,
                                     enum SemsamSelect select,
                                     uint8_t has_seed,
                                     uint64_t seed,
                                     float tau_score,
                                     struct SemsamStepResult *out);

/**
 * Static description for a status code.
 */
const char *semsam_status_message(enum SemsamStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMSAM_H */
