#ifndef RFINTERP_H
#define RFINTERP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RF_METHOD_ZERO_FILL = 0,
  RF_METHOD_LINEAR = 1,
  RF_METHOD_ALOHA = 2,
  RF_METHOD_CNN = 3,
} RfMethod;

typedef enum {
  RF_PROBE_KIND_LINEAR = 0,
  RF_PROBE_KIND_CONVEX = 1,
} RfProbeKind;

typedef enum {
  RF_SCHEME_RX_X4 = 0,
  RF_SCHEME_RX_X8 = 1,
  RF_SCHEME_RX_XMIT4X2 = 2,
} RfScheme;

/**
 * Result of every fallible call.
 */
typedef enum {
  RF_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  RF_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid configuration or argument value.
   */
  RF_STATUS_INVALID_CONFIG = 2,
  /**
   * Dimensions do not match.
   */
  RF_STATUS_SHAPE = 3,
  /**
   * A referenced file does not exist or cannot be opened.
   */
  RF_STATUS_MISSING_INPUT = 4,
  RF_STATUS_IO = 5,
  /**
   * Malformed file or JSON.
   */
  RF_STATUS_PARSE = 6,
  RF_STATUS_NUMERICAL = 7,
  /**
   * Internal panic caught at the boundary.
   */
  RF_STATUS_PANIC = 8,
  RF_STATUS_OTHER = 9,
} RfStatus;

/**
 * RF frame `[depth x rx x xmit]`.
 */
typedef struct RfCube RfCube;

/**
 * Log-compressed B-mode image.
 */
typedef struct RfImage RfImage;

/**
 * Interpolation method with any loaded weights.
 */
typedef struct RfInterpolator RfInterpolator;

/**
 * Sampling mask over the Rx-Xmit grid.
 */
typedef struct RfMask RfMask;

/**
 * Probe geometry.
 */
typedef struct RfProbe RfProbe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, so a
 * caller can retry with a bigger buffer. Passing a null `buf` only queries
 * the length.
 */
size_t rf_last_error_message(char *buf, size_t len);

/**
 * Built-in probe.
 */
RfStatus rf_probe_new(RfProbeKind kind, RfProbe **out);

/**
 * Probe from a JSON object; missing fields take the linear defaults.
 */
RfStatus rf_probe_from_json(const char *json, RfProbe **out);

/**
 * Change the number of depth samples per trace.
 */
RfStatus rf_probe_set_depth_samples(RfProbe *probe, size_t depth_samples);

void rf_probe_free(RfProbe *probe);

/**
 * Simulate one frame of the random phantom drawn from `seed`.
 */
RfStatus rf_simulate(const RfProbe *probe, uint64_t seed, RfCube **out);

/**
 * First frame of an RFC1 file (with its `.json` sidecar when present).
 */
RfStatus rf_cube_load(const char *path, RfCube **out);

RfStatus rf_cube_save(const RfCube *cube, const char *path);

RfStatus rf_cube_dims(const RfCube *cube, size_t *depth, size_t *num_rx, size_t *num_xmit);

/**
 * Samples in `[depth, rx, xmit]` order, depth fastest; valid until the
 * cube is freed. Null for a null cube.
 */
const float *rf_cube_data(const RfCube *cube);

void rf_cube_free(RfCube *cube);

/**
 * Random sampling mask for `scheme` on a `num_rx x num_xmit` grid.
 */
RfStatus rf_mask_new(RfScheme scheme, size_t num_rx, size_t num_xmit, uint64_t seed, RfMask **out);

/**
 * Mask from a row-major `num_rx x num_xmit` byte array, nonzero = kept.
 */
RfStatus rf_mask_from_bytes(const uint8_t *keep, size_t num_rx, size_t num_xmit, RfMask **out);

/**
 * Number of kept samples, or 0 for a null mask.
 */
size_t rf_mask_kept_count(const RfMask *mask);

/**
 * Row-major kept flags into `keep` (`num_rx * num_xmit` bytes).
 */
RfStatus rf_mask_to_bytes(const RfMask *mask, uint8_t *keep, size_t len);

void rf_mask_free(RfMask *mask);

/**
 * Interpolator for `method`; `checkpoint` names the weights file for
 * `RF_METHOD_CNN` and is ignored (may be null) otherwise.
 */
RfStatus rf_interpolator_new(RfMethod method, const char *checkpoint, RfInterpolator **out);

/**
 * Fill one row-major `n1 x n2` plane in place. Samples whose `keep` byte
 * is zero are treated as missing; kept samples are left unchanged.
 */
RfStatus rf_interpolate_plane(const RfInterpolator *interp,
                              double *values,
                              const uint8_t *keep,
                              size_t n1,
                              size_t n2);

void rf_interpolator_free(RfInterpolator *interp);

/**
 * Expand `cube` to `mla_factor` lines per transmit, beamform and
 * log-compress to `dynamic_range_db`.
 */
RfStatus rf_beamform(const RfCube *cube, size_t mla_factor, double dynamic_range_db, RfImage **out);

/**
 * Full pipeline from a JSON pipeline configuration (fields as in the CLI's
 * `--config` file). Returns the B-mode image and its PSNR and SSIM against
 * the fully sampled reference; either score pointer may be null.
 */
RfStatus rf_run_pipeline(const char *config_json,
                         RfImage **image,
                         double *psnr_db,
                         double *ssim_out);

RfStatus rf_image_dims(const RfImage *image, size_t *rows, size_t *cols);

/**
 * Pixels in dB, row-major, into `buf` of exactly `rows * cols` values.
 */
RfStatus rf_image_pixels(const RfImage *image, double *buf, size_t len);

/**
 * Binary PGM plus a `.json` sidecar.
 */
RfStatus rf_image_write_pgm(const RfImage *image, const char *path);

void rf_image_free(RfImage *image);

/**
 * PSNR in dB of two row-major images with peak value `r_max`.
 */
RfStatus rf_psnr(const double *reference,
                 const double *test,
                 size_t rows,
                 size_t cols,
                 double r_max,
                 double *out);

/**
 * SSIM with the default constants (8-bit peak, disk window of radius 50).
 */
RfStatus rf_ssim(const double *a, const double *b, size_t rows, size_t cols, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFINTERP_H */
