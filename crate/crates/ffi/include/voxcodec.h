/* C ABI for the voxcodec point cloud codec. */

#ifndef VOXCODEC_H
#define VOXCODEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum VcStatus {
  VC_STATUS_OK = 0,
  VC_STATUS_INVALID_ARGUMENT = 1,
  VC_STATUS_IO = 2,
  VC_STATUS_PARSE = 3,
  VC_STATUS_ENCODE = 4,
  VC_STATUS_STREAM = 5,
  VC_STATUS_INTERNAL = 6,
} VcStatus;

/**
 * Decoded frames of a stream.
 */
typedef struct VcFrames VcFrames;

/**
 * A parsed coded stream (one or more concatenated groups).
 */
typedef struct VcStream VcStream;

/**
 * Encoder options mirroring the CLI defaults; produce one with
 * `vc_encode_options_default` and override fields as needed.
 */
typedef struct VcEncodeOptions {
  /**
   * 0 intra/static, 1 residual, 2 curve, 3 4d
   */
  uint8_t mode;
  uint8_t resolution_bits;
  uint8_t cube_bits;
  uint8_t layer_norm;
  uint8_t geometry_only;
  uint8_t fresh_init;
  uint8_t geom_blocks;
  uint8_t attr_blocks;
  uint8_t control_points;
  uint8_t posenc_levels;
  uint8_t temporal_levels;
  uint16_t inter_width;
  uint16_t intra_width;
  uint16_t group_size;
  uint32_t threshold_steps;
  uint32_t batch_size;
  uint64_t geom_steps;
  uint64_t attr_steps;
  uint64_t seed;
  double l1_weight;
  double occupied_ratio;
  double focal_gamma;
  double learning_rate;
  double weight_decay;
  double geom_step_size;
  double attr_step_size;
  double sine_frequency;
  double steps_scale;
} VcEncodeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message of this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes, or be null.
 */
size_t vc_last_error(char *buf, size_t len);

/**
 * Parses a coded stream from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum VcStatus vc_stream_read_file(const char *path, struct VcStream **out);

/**
 * Parses a coded stream from a byte buffer.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be valid.
 */
enum VcStatus vc_stream_read_bytes(const uint8_t *data, size_t len, struct VcStream **out);

/**
 * Frees a stream handle. Null is a no-op.
 *
 * # Safety
 * `stream` must be a pointer returned by a `vc_stream_read_*` function,
 * not yet freed.
 */
void vc_stream_free(struct VcStream *stream);

/**
 * Total frame count across all groups of the stream.
 *
 * # Safety
 * `stream` must be a live handle.
 */
uint16_t vc_stream_frame_count(const struct VcStream *stream);

/**
 * Grid resolution bits (N) of the first group.
 *
 * # Safety
 * `stream` must be a live handle.
 */
uint8_t vc_stream_resolution_bits(const struct VcStream *stream);

/**
 * Cube partition bits (M) of the first group.
 *
 * # Safety
 * `stream` must be a live handle.
 */
uint8_t vc_stream_cube_bits(const struct VcStream *stream);

/**
 * Coding mode of the first group: 0 intra, 1 residual, 2 curve, 3 4d.
 *
 * # Safety
 * `stream` must be a live handle.
 */
uint8_t vc_stream_mode(const struct VcStream *stream);

/**
 * 1 when the stream carries color attributes.
 *
 * # Safety
 * `stream` must be a live handle.
 */
uint8_t vc_stream_has_attributes(const struct VcStream *stream);

/**
 * Stream size in bytes (the numerator of bits-per-point).
 *
 * # Safety
 * `stream` must be a live handle.
 */
size_t vc_stream_total_bytes(const struct VcStream *stream);

/**
 * Decodes every frame of the stream.
 *
 * # Safety
 * `stream` must be a live handle; `out` must be valid.
 */
enum VcStatus vc_stream_decode(const struct VcStream *stream, struct VcFrames **out);

/**
 * Frees a decoded frame set. Null is a no-op.
 *
 * # Safety
 * `frames` must be a pointer returned by `vc_stream_decode`, not yet freed.
 */
void vc_frames_free(struct VcFrames *frames);

/**
 * Number of decoded frames.
 *
 * # Safety
 * `frames` must be a live handle.
 */
uint16_t vc_frames_count(const struct VcFrames *frames);

/**
 * Point count of one frame; 0 for an out-of-range index.
 *
 * # Safety
 * `frames` must be a live handle.
 */
size_t vc_frames_point_count(const struct VcFrames *frames, uint16_t frame);

/**
 * Borrowed pointer to the frame's voxel coordinates as x,y,z triples
 * (3 * point_count values). Null for an out-of-range index. Valid until
 * the handle is freed.
 *
 * # Safety
 * `frames` must be a live handle.
 */
const uint32_t *vc_frames_points(const struct VcFrames *frames, uint16_t frame);

/**
 * Borrowed pointer to the frame's colors as r,g,b triples, or null when
 * the stream is geometry-only or the index is out of range.
 *
 * # Safety
 * `frames` must be a live handle.
 */
const uint8_t *vc_frames_colors(const struct VcFrames *frames, uint16_t frame);

/**
 * De-voxelization transform of the stream (scale then offset per axis).
 *
 * # Safety
 * `frames` must be a live handle; both outputs must point to 3 doubles.
 */
void vc_frames_transform(const struct VcFrames *frames, double *scale_out, double *offset_out);

/**
 * Writes one decoded frame as a binary PLY file.
 *
 * # Safety
 * `frames` must be a live handle; `path` a NUL-terminated string.
 */
enum VcStatus vc_frames_write_ply(const struct VcFrames *frames, uint16_t frame, const char *path);

/**
 * Fills `out` with the default encoder options.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
void vc_encode_options_default(struct VcEncodeOptions *out);

/**
 * Encodes PLY files (one per frame, in order) into a coded stream file.
 * `opts` may be null for defaults.
 *
 * # Safety
 * `inputs` must point to `input_count` NUL-terminated paths; `output`
 * must be a NUL-terminated path; `opts` null or valid.
 */
enum VcStatus vc_encode_files(const char *const *inputs,
                              size_t input_count,
                              const char *output,
                              const struct VcEncodeOptions *opts);

/**
 * Encodes one frame from raw buffers: `points` as x,y,z voxel triples on
 * the `resolution_bits` grid of `opts`, `colors` as r,g,b triples or null
 * for geometry only. The stream is written to `output`.
 *
 * # Safety
 * `points` must hold `3 * point_count` values; `colors` null or
 * `3 * point_count` bytes; `output` a NUL-terminated path; `opts` null or
 * valid.
 */
enum VcStatus vc_encode_points(const uint32_t *points,
                               size_t point_count,
                               const uint8_t *colors,
                               const char *output,
                               const struct VcEncodeOptions *opts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXCODEC_H */
