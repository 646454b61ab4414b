#ifndef RATFID_H
#define RATFID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RatfidFormat {
  RATFID_FORMAT_SIMPLE = 0,
  RATFID_FORMAT_ERASER = 1,
  RATFID_FORMAT_SST = 2,
} RatfidFormat;

typedef enum RatfidMode {
  RATFID_MODE_CLIPPED = 0,
  RATFID_MODE_ERASER = 1,
} RatfidMode;

typedef enum RatfidStatus {
  RATFID_STATUS_OK = 0,
  RATFID_STATUS_NULL_POINTER = 1,
  RATFID_STATUS_INVALID_UTF8 = 2,
  RATFID_STATUS_IO = 3,
  RATFID_STATUS_PARSE = 4,
  RATFID_STATUS_INVALID_INPUT = 5,
  RATFID_STATUS_EMPTY_DATASET = 6,
  RATFID_STATUS_PREDICTOR = 7,
  RATFID_STATUS_CACHE_MISS = 8,
  RATFID_STATUS_OUT_OF_RANGE = 9,
  RATFID_STATUS_PANIC = 10,
} RatfidStatus;

// A fidelity curve.
typedef struct RatfidCurve RatfidCurve;

// A loaded dataset.
typedef struct RatfidDataset RatfidDataset;

// A builtin bag-of-words logistic regression.
typedef struct RatfidModel RatfidModel;

// Per-example fidelity records.
typedef struct RatfidRecords RatfidRecords;

// One fidelity record. Normalized values are NaN when `defined` is false.
typedef struct RatfidRecord {
  double p_full;
  double suff;
  double comp;
  double null_diff;
  double norm_suff;
  double norm_comp;
  bool defined;
  // Index of the predicted class in the dataset's label order.
  size_t predicted_class;
} RatfidRecord;

// One point of a fidelity curve. Means and stds are NaN when `n` is 0.
typedef struct RatfidCurvePoint {
  double rate;
  double suff_mean;
  double suff_std;
  double comp_mean;
  double comp_std;
  size_t n;
} RatfidCurvePoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// success. Valid until the next call into this library on the thread.
const char *ratfid_last_error(void);

// Loads a dataset from a file or directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RatfidStatus ratfid_dataset_load(const char *path,
                                      enum RatfidFormat format,
                                      struct RatfidDataset **out);

// Number of examples, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ratfid_dataset_len(const struct RatfidDataset *dataset);

// Number of labels, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ratfid_dataset_num_labels(const struct RatfidDataset *dataset);

// # Safety
// `dataset` must be null or a handle not yet freed.
void ratfid_dataset_free(struct RatfidDataset *dataset);

// Trains the builtin model on every example of `dataset`.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum RatfidStatus ratfid_model_train(const struct RatfidDataset *dataset,
                                     uint64_t seed,
                                     struct RatfidModel **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RatfidStatus ratfid_model_load(const char *path, struct RatfidModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum RatfidStatus ratfid_model_save(const struct RatfidModel *model, const char *path);

// # Safety
// `model` must be null or a handle not yet freed.
void ratfid_model_free(struct RatfidModel *model);

// Point fidelity of every example under `model`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum RatfidStatus ratfid_evaluate(const struct RatfidModel *model,
                                  const struct RatfidDataset *dataset,
                                  enum RatfidMode mode,
                                  struct RatfidRecords **out);

// # Safety
// `records` must be null or a live handle.
size_t ratfid_records_len(const struct RatfidRecords *records);

// Copies record `index` into `out`.
//
// # Safety
// `records` must be a live handle; `out` must be writable.
enum RatfidStatus ratfid_records_get(const struct RatfidRecords *records,
                                     size_t index,
                                     struct RatfidRecord *out);

// # Safety
// `records` must be null or a handle not yet freed.
void ratfid_records_free(struct RatfidRecords *records);

// Fidelity curve of `dataset` under `model` over `n_rates` rates.
//
// # Safety
// Handles must be live; `rates` must point to `n_rates` doubles; `out`
// must be writable.
enum RatfidStatus ratfid_curve(const struct RatfidModel *model,
                               const struct RatfidDataset *dataset,
                               const double *rates,
                               size_t n_rates,
                               uint32_t trials,
                               uint64_t seed,
                               enum RatfidMode mode,
                               struct RatfidCurve **out);

// # Safety
// `curve` must be null or a live handle.
size_t ratfid_curve_len(const struct RatfidCurve *curve);

// # Safety
// `curve` must be a live handle; `out` must be writable.
enum RatfidStatus ratfid_curve_point(const struct RatfidCurve *curve,
                                     size_t index,
                                     struct RatfidCurvePoint *out);

// # Safety
// `curve` must be null or a handle not yet freed.
void ratfid_curve_free(struct RatfidCurve *curve);

// Sufficiency from the predicted-class probability on the full input and
// on the rationale alone.
double ratfid_sufficiency(double p_full, double p_rationale, enum RatfidMode mode);

// Comprehensiveness from the predicted-class probability on the full
// input and on the rationale's complement.
double ratfid_comprehensiveness(double p_full, double p_complement, enum RatfidMode mode);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RATFID_H */
