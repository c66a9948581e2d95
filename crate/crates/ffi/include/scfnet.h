#ifndef SCFNET_H
#define SCFNET_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum ScfnStatus {
  SCFN_STATUS_OK = 0,
  SCFN_STATUS_NULL_POINTER = 1,
  SCFN_STATUS_INVALID_ARGUMENT = 2,
  SCFN_STATUS_SHAPE = 3,
  SCFN_STATUS_IO = 4,
  SCFN_STATUS_FORMAT = 5,
  SCFN_STATUS_CONFIG = 6,
  SCFN_STATUS_RUNTIME = 7,
  SCFN_STATUS_PANIC = 8,
} ScfnStatus;

/**
 * Opaque model handle.
 */
typedef struct ScfnModel ScfnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call into this library on the thread.
 */
const char *scfn_last_error(void);

/**
 * Loads a checkpoint (either precision) from a UTF-8 path.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScfnStatus scfn_model_load(const char *path, struct ScfnModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`scfn_model_load`] and not be used afterwards.
 */
void scfn_model_free(struct ScfnModel *model);

/**
 * Input frame size the model expects.
 *
 * # Safety
 * All pointers must be valid.
 */
enum ScfnStatus scfn_model_input_size(const struct ScfnModel *model, size_t *h, size_t *w);

/**
 * Localizes every frame of a clip of `n_frames >= 1` frames of size
 * `h x w` (must equal the model input). Windows at the clip ends reuse
 * the edge frame. Writes `n_frames * h * w` probabilities to `out_probs`.
 *
 * # Safety
 * `frames` must hold `n_frames * 3 * h * w` floats and `out_probs`
 * `n_frames * h * w`.
 */
enum ScfnStatus scfn_model_infer(const struct ScfnModel *model,
                                 const float *frames,
                                 size_t n_frames,
                                 size_t h,
                                 size_t w,
                                 float *out_probs);

/**
 * IoU and F1 of one map against a binary mask (`0`/`1` bytes), a pixel
 * counting as predicted when its probability is at least `threshold`.
 *
 * # Safety
 * `probs` and `mask` must each hold `len` elements.
 */
enum ScfnStatus scfn_score(const float *probs,
                           const uint8_t *mask,
                           size_t len,
                           double threshold,
                           double *out_iou,
                           double *out_f1);

/**
 * Compresses one `[3, h, w]` frame at quality `0..=51` (0 is a copy).
 *
 * # Safety
 * `frame` and `out` must each hold `3 * h * w` floats; they may alias.
 */
enum ScfnStatus scfn_degrade(const float *frame, size_t h, size_t w, uint8_t quality, float *out);

/**
 * Library version, static NUL-terminated string.
 */
const char *scfn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCFNET_H */
