#ifndef DRAWDIM_H
#define DRAWDIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  DD_STATUS_NULL_ARGUMENT = 1,
  /*
   A string argument was not valid UTF-8.
   */
  DD_STATUS_INVALID_UTF8 = 2,
  /*
   Bad configuration or argument (CLI exit code 2).
   */
  DD_STATUS_CONFIG = 3,
  /*
   Bad or inconsistent input data (CLI exit code 3).
   */
  DD_STATUS_DATA = 4,
  /*
   Non-finite values during computation (CLI exit code 4).
   */
  DD_STATUS_NUMERIC = 5,
  /*
   The library panicked; this is a bug.
   */
  DD_STATUS_PANIC = 6,
  /*
   The caller's buffer is too small; nothing was written.
   */
  DD_STATUS_BUFFER_TOO_SMALL = 7,
} DdStatus;

typedef enum DdSchema {
  DD_SCHEMA_DRAWRITEPD = 0,
  DD_SCHEMA_PAHAW = 1,
} DdSchema;

typedef enum DdLabel {
  DD_LABEL_HC = 0,
  DD_LABEL_PD = 1,
} DdLabel;

/*
 A network with f32 parameters.
 */
typedef struct DdNetwork DdNetwork;

/*
 A parsed drawing record.
 */
typedef struct DdRecord DdRecord;

/*
 A dense f32 tensor.
 */
typedef struct DdTensor DdTensor;

/*
 Scores of a confusion matrix, PD positive. Bit i of `undefined_mask` is
 set when score i (precision, sensitivity, specificity, f1 in that order)
 had a zero denominator and was reported as 0.
 */
typedef struct DdMetrics {
  double accuracy;
  double precision;
  double sensitivity;
  double specificity;
  double f1;
  uint32_t undefined_mask;
} DdMetrics;

/*
 Class decision and probabilities.
 */
typedef struct DdPrediction {
  enum DdLabel label;
  double p_hc;
  double p_pd;
} DdPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

/*
 Error class of the last failed call on this thread, e.g.
 `"PlanInvalidForDimension"`, or null if none. Valid until the next
 failing call on the same thread.
 */
const char *dd_last_error_class(void);

/*
 Human-readable message of the last failed call on this thread, or null.
 */
const char *dd_last_error_message(void);

/*
 Trainable parameter count of the network for `rank` (1, 2 or 3) spatial
 dimensions, `in_channels` input channels and input side `extent`.

 # Safety
 `out` must be null or point to writable memory.
 */
enum DdStatus dd_param_count(uint32_t rank, uint32_t in_channels, uint32_t extent, uint64_t *out);

/*
 Computes scores from confusion counts.

 # Safety
 `out` must be null or point to writable memory.
 */
enum DdStatus dd_metrics(uint64_t tp,
                         uint64_t fn_,
                         uint64_t fp,
                         uint64_t tn,
                         struct DdMetrics *out);

/*
 Parses a record from CSV text with a header row.

 # Safety
 `csv` and `subject_id` must be null or NUL-terminated strings; `out` must
 be null or writable.
 */
enum DdStatus dd_record_parse(const char *csv,
                              enum DdSchema schema,
                              enum DdLabel label,
                              const char *subject_id,
                              struct DdRecord **out);

/*
 Generates one synthetic spiral with class-typical tremor.

 # Safety
 `out` must be null or writable.
 */
enum DdStatus dd_record_synthetic(enum DdLabel label, uint64_t seed, struct DdRecord **out);

/*
 Number of samples in a record, or 0 for null.

 # Safety
 `record` must be null or a live handle.
 */
size_t dd_record_len(const struct DdRecord *record);

/*
 # Safety
 `record` must be null or a handle not yet freed.
 */
void dd_record_free(struct DdRecord *record);

/*
 Encodes a record with per-record normalization. `dim` is 1, 2 or 3;
 `feature_mask` has bit 0 = x, 1 = y, 2 = azimuth, 3 = altitude,
 4 = pressure, 5 = velocity (x and y are always on); `size` is the series
 length, image side or voxel side.

 # Safety
 `record` must be null or a live handle; `out` must be null or writable.
 */
enum DdStatus dd_encode(const struct DdRecord *record,
                        uint32_t dim,
                        uint32_t feature_mask,
                        uint32_t size,
                        struct DdTensor **out);

/*
 Wraps a copy of `len` floats as a tensor of the given shape.

 # Safety
 `shape` must point to `rank` values and `data` to `len` floats; `out`
 must be null or writable.
 */
enum DdStatus dd_tensor_new(const size_t *shape,
                            size_t rank,
                            const float *data,
                            size_t len,
                            struct DdTensor **out);

/*
 # Safety
 `t` must be null or a live handle.
 */
size_t dd_tensor_rank(const struct DdTensor *t);

/*
 Number of elements, or 0 for null.

 # Safety
 `t` must be null or a live handle.
 */
size_t dd_tensor_len(const struct DdTensor *t);

/*
 Copies the shape into `dims`. With a too-small `cap` nothing is copied
 and `DD_STATUS_BUFFER_TOO_SMALL` is returned.

 # Safety
 `t` must be null or a live handle; `dims` must hold `cap` values.
 */
enum DdStatus dd_tensor_shape(const struct DdTensor *t, size_t *dims, size_t cap);

/*
 Row-major element storage, valid while the handle lives; null for null.

 # Safety
 `t` must be null or a live handle.
 */
const float *dd_tensor_data(const struct DdTensor *t);

/*
 # Safety
 `t` must be null or a handle not yet freed.
 */
void dd_tensor_free(struct DdTensor *t);

/*
 Builds a freshly initialized network.

 # Safety
 `out` must be null or writable.
 */
enum DdStatus dd_network_build(uint32_t rank,
                               uint32_t in_channels,
                               uint32_t extent,
                               uint64_t seed,
                               struct DdNetwork **out);

/*
 Loads a checkpoint directory written by `drawdim train`.

 # Safety
 `dir` must be null or a NUL-terminated string; `out` null or writable.
 */
enum DdStatus dd_network_load(const char *dir, struct DdNetwork **out);

/*
 Writes a checkpoint directory.

 # Safety
 `net` must be null or a live handle; `dir` null or NUL-terminated.
 */
enum DdStatus dd_network_save(const struct DdNetwork *net, const char *dir);

/*
 Parameter count of a built network, or 0 for null.

 # Safety
 `net` must be null or a live handle.
 */
uint64_t dd_network_param_count(const struct DdNetwork *net);

/*
 Classifies one encoded input in evaluation mode.

 # Safety
 `net` and `input` must be null or live handles; `out` null or writable.
 */
enum DdStatus dd_network_predict(const struct DdNetwork *net,
                                 const struct DdTensor *input,
                                 struct DdPrediction *out);

/*
 # Safety
 `net` must be null or a handle not yet freed.
 */
void dd_network_free(struct DdNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRAWDIM_H */
