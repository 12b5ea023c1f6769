#ifndef METAWORLD_H
#define METAWORLD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MW_FRAME_PIXELS 4096

#define MW_LATENT_DIM 32

typedef enum MwStatus {
  MW_STATUS_OK = 0,
  MW_STATUS_NULL_POINTER = 1,
  MW_STATUS_INVALID_ARGUMENT = 2,
  MW_STATUS_IO = 3,
  MW_STATUS_CORRUPT = 4,
  MW_STATUS_CONFIG = 5,
  MW_STATUS_DIVERGED = 6,
  MW_STATUS_PANIC = 7,
} MwStatus;

/*
 Opaque dataset handle.
 */
typedef struct MwDataset MwDataset;

/*
 Opaque handle to the models of a training checkpoint. Environment 0 is
 the original environment, 1 the trained variant.
 */
typedef struct MwModel MwModel;

/*
 Opaque simulator handle.
 */
typedef struct MwSim MwSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *mw_last_error(void);

/*
 Creates a simulator reset with `seed`. Never returns null.
 */
struct MwSim *mw_sim_new(uint64_t seed);

/*
 # Safety
 `sim` must be null or a handle from [`mw_sim_new`] not yet freed.
 */
void mw_sim_free(struct MwSim *sim);

/*
 Advances one step with `action` in 0..6.

 # Safety
 `sim` must be a live handle.
 */
enum MwStatus mw_sim_step(struct MwSim *sim, uint8_t action);

/*
 Renders the current state into `out` (4096 bytes).

 # Safety
 `sim` must be a live handle and `out` valid for `len` bytes.
 */
enum MwStatus mw_sim_render(const struct MwSim *sim, uint8_t *out, size_t len);

/*
 Applies transform `kind` (0 identity, 1 transpose, 2 horizontal swap,
 3 color invert, 4 mirror, 5 vertical swap) to a 4096-byte frame.

 # Safety
 `input` and `out` must be valid for `len` bytes and may not overlap.
 */
enum MwStatus mw_transform(uint32_t kind, const uint8_t *input, uint8_t *out, size_t len);

/*
 Generates `episodes` random-policy episodes of `steps` frames.

 # Safety
 `out` must be valid for one pointer write.
 */
enum MwStatus mw_dataset_generate(size_t episodes,
                                  size_t steps,
                                  uint64_t seed,
                                  struct MwDataset **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` valid for one write.
 */
enum MwStatus mw_dataset_load(const char *path, struct MwDataset **out);

/*
 # Safety
 `ds` must be a live handle; `path` a NUL-terminated string.
 */
enum MwStatus mw_dataset_save(const struct MwDataset *ds, const char *path);

/*
 Number of episodes, or 0 for a null handle.

 # Safety
 `ds` must be null or a live handle.
 */
size_t mw_dataset_len(const struct MwDataset *ds);

/*
 Frame count of episode `episode`.

 # Safety
 `ds` must be a live handle; `out` valid for one write.
 */
enum MwStatus mw_dataset_episode_len(const struct MwDataset *ds, size_t episode, size_t *out);

/*
 Copies frame `t` of episode `episode` into `out` (4096 bytes).

 # Safety
 `ds` must be a live handle; `out` valid for `len` bytes.
 */
enum MwStatus mw_dataset_frame(const struct MwDataset *ds,
                               size_t episode,
                               size_t t,
                               uint8_t *out,
                               size_t len);

/*
 # Safety
 `ds` must be null or a live handle.
 */
void mw_dataset_free(struct MwDataset *ds);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` valid for one write.
 */
enum MwStatus mw_model_load(const char *path, struct MwModel **out);

/*
 Transform kind of environment `env` (see [`mw_transform`]).

 # Safety
 `model` must be a live handle; `out` valid for one write.
 */
enum MwStatus mw_model_env_kind(const struct MwModel *model, uint32_t env, uint32_t *out);

/*
 Posterior mean and log-variance (32 values each) of a frame under
 environment `env`'s encoder.

 # Safety
 `model` must be a live handle; `frame` valid for 4096 bytes; `mu` and
 `logvar` valid for 32 floats each.
 */
enum MwStatus mw_model_encode(const struct MwModel *model,
                              uint32_t env,
                              const uint8_t *frame,
                              float *mu,
                              float *logvar);

/*
 Pixel probabilities (4096 floats) of decoding latent `z` (32 floats)
 with environment `env`'s decoder.

 # Safety
 `model` must be a live handle; `z` valid for 32 floats; `out` valid
 for 4096 floats.
 */
enum MwStatus mw_model_decode(const struct MwModel *model,
                              uint32_t env,
                              const float *z,
                              float *out);

/*
 # Safety
 `model` must be null or a live handle.
 */
void mw_model_free(struct MwModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METAWORLD_H */
