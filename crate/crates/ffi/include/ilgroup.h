#ifndef ILGROUP_H
#define ILGROUP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum IlgStatus {
  ILG_STATUS_OK = 0,
  ILG_STATUS_INVALID_ARGUMENT = 1,
  ILG_STATUS_PRECONDITION = 2,
  ILG_STATUS_CAPACITY = 3,
  ILG_STATUS_DIMENSION_MISMATCH = 4,
  ILG_STATUS_PARSE = 5,
  ILG_STATUS_SCHEMA = 6,
  ILG_STATUS_IO = 7,
  ILG_STATUS_NULL_POINTER = 8,
  ILG_STATUS_INTERNAL = 9,
} IlgStatus;

/**
 * A loaded dataset.
 */
typedef struct IlgDataset IlgDataset;

/**
 * A loaded model with its policy settings.
 */
typedef struct IlgModel IlgModel;

/**
 * B-cubed scores.
 */
typedef struct IlgBcubed {
  double precision;
  double recall;
  double f1;
} IlgBcubed;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *ilg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ilg_version(void);

/**
 * Loads a JSON Lines dataset. With `normalize` non-zero, embeddings are
 * rescaled to unit norm instead of rejected.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IlgStatus ilg_dataset_load(const char *path, bool normalize, struct IlgDataset **out);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `ds` must come from `ilg_dataset_load` and not be used afterwards.
 */
void ilg_dataset_free(struct IlgDataset *ds);

/**
 * Number of albums, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t ilg_dataset_album_count(const struct IlgDataset *ds);

/**
 * Number of faces in album `index`.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid pointer.
 */
enum IlgStatus ilg_dataset_album_size(const struct IlgDataset *ds, size_t index, size_t *out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum IlgStatus ilg_model_load(const char *path, struct IlgModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from `ilg_model_load` and not be used afterwards.
 */
void ilg_model_free(struct IlgModel *model);

/**
 * Length of the pair feature vector the model expects, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t ilg_model_feature_dim(const struct IlgModel *model);

/**
 * Groups album `index` of `ds`, writing one group index per face into
 * `out_labels` (room for `capacity` entries).
 *
 * # Safety
 * Handles must be live; `out_labels` must hold `capacity` entries.
 */
enum IlgStatus ilg_group_album(const struct IlgModel *model,
                               const struct IlgDataset *ds,
                               size_t index,
                               size_t *out_labels,
                               size_t capacity);

/**
 * Groups `n_items` faces given as a row-major `n_items x dim` embedding
 * matrix and per-face qualities.
 *
 * # Safety
 * `embeddings` must hold `n_items * dim` values, `qualities` and
 * `out_labels` `n_items` each.
 */
enum IlgStatus ilg_group_embeddings(const struct IlgModel *model,
                                    const double *embeddings,
                                    size_t n_items,
                                    size_t dim,
                                    const double *qualities,
                                    bool normalize,
                                    size_t *out_labels);

/**
 * B-cubed precision, recall and F1 of `pred` against `gt` (label arrays of
 * length `n`).
 *
 * # Safety
 * `pred` and `gt` must hold `n` entries; `out` must be valid.
 */
enum IlgStatus ilg_bcubed(const size_t *pred, const size_t *gt, size_t n, struct IlgBcubed *out);

/**
 * Operation cost of turning `pred` into `gt` under the given per-operation
 * costs.
 *
 * # Safety
 * `pred` and `gt` must hold `n` entries; `out` must be valid.
 */
enum IlgStatus ilg_op_cost(const size_t *pred,
                           const size_t *gt,
                           size_t n,
                           double cost_add,
                           double cost_remove,
                           double cost_merge,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ILGROUP_H */
