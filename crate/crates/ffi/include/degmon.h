#ifndef DEGMON_H
#define DEGMON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DegmonStatus {
  DEGMON_STATUS_OK = 0,
  DEGMON_STATUS_NULL_POINTER = 1,
  DEGMON_STATUS_INVALID_ARGUMENT = 2,
  DEGMON_STATUS_CONFIG = 3,
  DEGMON_STATUS_VALIDATION = 4,
  DEGMON_STATUS_STATE = 5,
  DEGMON_STATUS_FORMAT = 6,
  DEGMON_STATUS_NUMERICAL = 7,
  DEGMON_STATUS_IO = 8,
  DEGMON_STATUS_PANIC = 9,
} DegmonStatus;

/**
 * Trained flow baseline; scoring also needs the model whose backbone it reads.
 */
typedef struct DegmonFlow DegmonFlow;

/**
 * Trained manifold model with its prototype.
 */
typedef struct DegmonModel DegmonModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *degmon_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t degmon_last_error(char *buf, size_t len);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DegmonStatus degmon_model_load(const char *path, struct DegmonModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from `degmon_model_load` and not be used afterwards.
 */
void degmon_model_free(struct DegmonModel *model);

/**
 * Side length the model resizes inputs to; 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t degmon_model_input_size(const struct DegmonModel *model);

/**
 * Embedding dimension; 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t degmon_model_embed_dim(const struct DegmonModel *model);

/**
 * Unit-norm embedding of one image into `out[0..out_len]`; `out_len` must
 * equal the embedding dimension.
 *
 * # Safety
 * `rgb` must hold `height*width*3` bytes and `out` `out_len` doubles.
 */
enum DegmonStatus degmon_model_embed_rgb8(const struct DegmonModel *model,
                                          const uint8_t *rgb,
                                          size_t height,
                                          size_t width,
                                          double *out,
                                          size_t out_len);

/**
 * Degradation score `1 - z·mu` of one image.
 *
 * # Safety
 * `rgb` must hold `height*width*3` bytes; `score` must be writable.
 */
enum DegmonStatus degmon_model_score_rgb8(const struct DegmonModel *model,
                                          const uint8_t *rgb,
                                          size_t height,
                                          size_t width,
                                          double *score);

/**
 * Degradation score of a PNG/JPEG file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `score` must be writable.
 */
enum DegmonStatus degmon_model_score_file(const struct DegmonModel *model,
                                          const char *path,
                                          double *score);

/**
 * Accept decision: true iff `score <= tau`.
 */
bool degmon_gate(double score, double tau);

/**
 * Loads a flow baseline checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DegmonStatus degmon_flow_load(const char *path, struct DegmonFlow **out);

/**
 * Releases a flow; null is ignored.
 *
 * # Safety
 * `flow` must come from `degmon_flow_load` and not be used afterwards.
 */
void degmon_flow_free(struct DegmonFlow *flow);

/**
 * Negative log-likelihood score of one image under a flow baseline, using
 * the backbone of `model`.
 *
 * # Safety
 * Handles must be live; `rgb` must hold `height*width*3` bytes.
 */
enum DegmonStatus degmon_flow_score_rgb8(const struct DegmonFlow *flow,
                                         const struct DegmonModel *model,
                                         const uint8_t *rgb,
                                         size_t height,
                                         size_t width,
                                         double *score);

/**
 * Applies one degradation operator (by id, e.g. `"gaussian_noise"`) to an
 * image; `out_rgb` receives `height*width*3` bytes.
 *
 * # Safety
 * `rgb` and `out_rgb` must each hold `height*width*3` bytes; `op_id` must
 * be a NUL-terminated string.
 */
enum DegmonStatus degmon_apply_operator_rgb8(const uint8_t *rgb,
                                             size_t height,
                                             size_t width,
                                             const char *op_id,
                                             double strength,
                                             uint64_t seed,
                                             uint8_t *out_rgb);

/**
 * AUROC with degraded (`ood`) scores as the positive class; ties count half.
 *
 * # Safety
 * `id_scores` and `ood_scores` must hold `n_id` and `n_ood` doubles.
 */
enum DegmonStatus degmon_auroc(const double *id_scores,
                               size_t n_id,
                               const double *ood_scores,
                               size_t n_ood,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEGMON_H */
