#ifndef STEREOGEN_H
#define STEREOGEN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. The first four values match the exit
// codes of the `stereogen` command-line tool.
typedef enum SgStatus {
  SG_STATUS_OK = 0,
  // Invalid argument, shape or invariant violation.
  SG_STATUS_INVALID = 1,
  // File missing, unreadable or malformed.
  SG_STATUS_IO = 2,
  // Denoiser transport or remote failure.
  SG_STATUS_PROTOCOL = 3,
  // A required pointer argument was null or a string was not UTF-8.
  SG_STATUS_BAD_POINTER = 4,
  // The library panicked; the call had no effect on its outputs.
  SG_STATUS_PANIC = 5,
} SgStatus;

typedef struct SgDepth SgDepth;

typedef struct SgFlow SgFlow;

typedef struct SgFrame SgFrame;

typedef struct SgMask SgMask;

typedef struct SgSchedule SgSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sg_version(void);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *sg_last_error(void);

// Copies `len = width * height * channels` interleaved samples.
//
// # Safety
// `data` must point to `len` floats; `out` must be writable.
enum SgStatus sg_frame_new(size_t width,
                           size_t height,
                           size_t channels,
                           const float *data,
                           size_t len,
                           struct SgFrame **out);

// Reads an 8- or 16-bit PNG as linear RGB in [0, 1].
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SgStatus sg_frame_read_png(const char *path, bool srgb_decode, struct SgFrame **out);

// # Safety
// `frame` must be a live handle; `path` a NUL-terminated string.
enum SgStatus sg_frame_write_png(const struct SgFrame *frame, const char *path);

// # Safety
// `frame` must be null or a live handle.
size_t sg_frame_width(const struct SgFrame *frame);

// # Safety
// `frame` must be null or a live handle.
size_t sg_frame_height(const struct SgFrame *frame);

// # Safety
// `frame` must be null or a live handle.
size_t sg_frame_channels(const struct SgFrame *frame);

// Borrowed pointer to the interleaved samples, valid while the handle lives.
//
// # Safety
// `frame` must be null or a live handle.
const float *sg_frame_data(const struct SgFrame *frame);

// # Safety
// `frame` must be null or a handle not yet freed.
void sg_frame_free(struct SgFrame *frame);

// # Safety
// `data` must point to `len = width * height` floats; `out` must be writable.
enum SgStatus sg_depth_new(size_t width,
                           size_t height,
                           const float *data,
                           size_t len,
                           struct SgDepth **out);

// Reads a single-channel PFM depth map; `inverse` reciprocates on load.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SgStatus sg_depth_read_pfm(const char *path, bool inverse, struct SgDepth **out);

// # Safety
// `depth` must be null or a handle not yet freed.
void sg_depth_free(struct SgDepth *depth);

// One byte per pixel, 1 where the warped frame has content.
//
// # Safety
// `mask` must be null or a live handle.
const uint8_t *sg_mask_data(const struct SgMask *mask);

// # Safety
// `mask` must be null or a live handle.
size_t sg_mask_unknown_count(const struct SgMask *mask);

// # Safety
// `mask` must be null or a handle not yet freed.
void sg_mask_free(struct SgMask *mask);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SgStatus sg_flow_read(const char *path, struct SgFlow **out);

// # Safety
// `flow` must be null or a live handle.
size_t sg_flow_width(const struct SgFlow *flow);

// # Safety
// `flow` must be null or a live handle.
size_t sg_flow_height(const struct SgFlow *flow);

// Horizontal components, row-major.
//
// # Safety
// `flow` must be null or a live handle.
const float *sg_flow_u(const struct SgFlow *flow);

// Vertical components, row-major.
//
// # Safety
// `flow` must be null or a live handle.
const float *sg_flow_v(const struct SgFlow *flow);

// # Safety
// `flow` must be null or a handle not yet freed.
void sg_flow_free(struct SgFlow *flow);

// Warps `frame` to a camera shifted right by `baseline` with the default
// four-plane setup. Depth must already lie in [1, 10].
//
// # Safety
// `frame` and `depth` must be live handles; both outputs must be writable.
enum SgStatus sg_warp(const struct SgFrame *frame,
                      const struct SgDepth *depth,
                      double baseline,
                      double focal_px,
                      struct SgFrame **out_frame,
                      struct SgMask **out_mask);

// Linear-beta schedule with the default beta range. Pass zeros for the
// defaults (1000 steps, 50 visited, 8 / 4 resamplings).
//
// # Safety
// `out` must be writable.
enum SgStatus sg_schedule_new(size_t total_steps,
                              size_t denoise_steps,
                              size_t resample_hi,
                              size_t resample_lo,
                              struct SgSchedule **out);

// Number of visited timesteps.
//
// # Safety
// `s` must be null or a live handle.
size_t sg_schedule_len(const struct SgSchedule *s);

// The `i`-th visited timestep, or 0 when out of range.
//
// # Safety
// `s` must be null or a live handle.
size_t sg_schedule_timestep(const struct SgSchedule *s, size_t i);

// Cumulative signal level at `t`; NaN outside `0..=T`.
//
// # Safety
// `s` must be null or a live handle.
double sg_schedule_alpha_bar(const struct SgSchedule *s, size_t t);

// Total resampling repetitions over the whole run.
//
// # Safety
// `s` must be null or a live handle.
size_t sg_schedule_total_repetitions(const struct SgSchedule *s);

// # Safety
// `s` must be null or a handle not yet freed.
void sg_schedule_free(struct SgSchedule *s);

// Inpaints a frame-matrix directory into `out_dir`. `config` (TOML or run
// manifest) and `oracle_targets` may be null. Without targets the denoiser
// named in the config is used.
//
// # Safety
// Non-null strings must be NUL-terminated.
enum SgStatus sg_inpaint_matrix(const char *matrix_dir,
                                const char *oracle_targets,
                                const char *out_dir,
                                const char *config,
                                uint64_t seed);

// Writes the left/right/sbs/anaglyph sequences of a matrix directory.
//
// # Safety
// Both strings must be NUL-terminated.
enum SgStatus sg_assemble(const char *matrix_dir, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEREOGEN_H */
