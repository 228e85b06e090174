#ifndef GEODYN_H
#define GEODYN_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GeodynStatus {
  GEODYN_STATUS_OK = 0,
  GEODYN_STATUS_NULL_POINTER = 1,
  GEODYN_STATUS_INVALID_ARGUMENT = 2,
  GEODYN_STATUS_IO = 3,
  GEODYN_STATUS_FORMAT = 4,
  // No scaling region or an ill-conditioned estimate.
  GEODYN_STATUS_NUMERICAL = 5,
  GEODYN_STATUS_END_OF_TRACE = 6,
  // The entropy target lies above what the largest temperature reaches.
  GEODYN_STATUS_ENTROPY_CLAMP = 7,
  // The entropy target lies below what the smallest temperature reaches.
  GEODYN_STATUS_ENTROPY_UNREACHABLE = 8,
  GEODYN_STATUS_BUFFER_TOO_SMALL = 9,
  GEODYN_STATUS_PANIC = 10,
} GeodynStatus;

typedef struct GeodynMonitor GeodynMonitor;

typedef struct GeodynRegulator GeodynRegulator;

typedef struct GeodynTraceReader GeodynTraceReader;

typedef struct GeodynTraceWriter GeodynTraceWriter;

// Regulator parameters; `geodyn_regulator_defaults` fills the standard values.
typedef struct GeodynRegulatorParams {
  uint32_t interval;
  double lambda_min;
  double eta;
  double gamma_damp;
  uint32_t top;
  // Nonzero selects the as-written damping mode.
  uint8_t as_written;
  uint64_t seed;
} GeodynRegulatorParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a NUL-terminated
// string and returns the full message length in bytes, excluding the NUL.
// Passing a null `buf` or zero `len` only reports the length.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t geodyn_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *geodyn_version(void);

// Sums entries `i` with equal `i mod k` into `out[0..k]`.
//
// # Safety
// `v` must be valid for `n` floats and `out` for `out_len` floats.
enum GeodynStatus geodyn_bin_project(const float *v,
                                     size_t n,
                                     size_t k,
                                     float *out,
                                     size_t out_len);

// Temperature whose softmax over `logits` has entropy `target` nats.
// On a clamp status `*temperature` holds the bound that was hit.
//
// # Safety
// `logits` must be valid for `n` doubles; `temperature` must be writable.
enum GeodynStatus geodyn_solve_entropy_temperature(const double *logits,
                                                   size_t n,
                                                   double target,
                                                   double tol,
                                                   double *temperature);

// Creates a trace file; `dim == 0` takes the dimension from the first row.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum GeodynStatus geodyn_trace_writer_create(const char *path,
                                             uint32_t dim,
                                             struct GeodynTraceWriter **out);

// # Safety
// `w` must come from `geodyn_trace_writer_create`; `row` valid for `len` floats.
enum GeodynStatus geodyn_trace_writer_push(struct GeodynTraceWriter *w,
                                           const float *row,
                                           size_t len);

// Writes the final header. The handle stays valid until freed but accepts no rows.
//
// # Safety
// `w` must come from `geodyn_trace_writer_create`; `count` may be null.
enum GeodynStatus geodyn_trace_writer_finish(struct GeodynTraceWriter *w, uint64_t *count);

// # Safety
// `w` must be null or come from `geodyn_trace_writer_create`, and is invalid afterwards.
void geodyn_trace_writer_free(struct GeodynTraceWriter *w);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum GeodynStatus geodyn_trace_reader_open(const char *path, struct GeodynTraceReader **out);

// # Safety
// `r` must come from `geodyn_trace_reader_open`; outputs may be null.
enum GeodynStatus geodyn_trace_reader_header(struct GeodynTraceReader *r,
                                             uint32_t *dim,
                                             uint64_t *count);

// Reads the next row into `buf`; returns `EndOfTrace` after the last row.
//
// # Safety
// `r` must come from `geodyn_trace_reader_open`; `buf` valid for `len` floats.
enum GeodynStatus geodyn_trace_reader_next(struct GeodynTraceReader *r, float *buf, size_t len);

// # Safety
// `r` must be null or come from `geodyn_trace_reader_open`, and is invalid afterwards.
void geodyn_trace_reader_free(struct GeodynTraceReader *r);

// Exact streaming dimension monitor over `scales` log-spaced radii in `[eps0, eps1]`.
// `bins == 0` feeds rows as given; otherwise rows are bin-projected to `bins` entries.
//
// # Safety
// `out` must be writable.
enum GeodynStatus geodyn_monitor_create(double eps0,
                                        double eps1,
                                        size_t scales,
                                        size_t bins,
                                        struct GeodynMonitor **out);

// Appends one state. `*d` receives the current dimension and `*has_d` whether
// a scaling region exists; either may be null.
//
// # Safety
// `m` must come from `geodyn_monitor_create`; `row` valid for `len` floats.
enum GeodynStatus geodyn_monitor_push(struct GeodynMonitor *m,
                                      const float *row,
                                      size_t len,
                                      double *d,
                                      bool *has_d);

// # Safety
// `m` must come from `geodyn_monitor_create`; `count` must be writable.
enum GeodynStatus geodyn_monitor_len(struct GeodynMonitor *m, uint64_t *count);

// Pair counts strictly inside each scale, cumulative over all points so far.
//
// # Safety
// `m` must come from `geodyn_monitor_create`; `buf` valid for `len` values.
enum GeodynStatus geodyn_monitor_counts(struct GeodynMonitor *m, uint64_t *buf, size_t len);

// # Safety
// `m` must be null or come from `geodyn_monitor_create`, and is invalid afterwards.
void geodyn_monitor_free(struct GeodynMonitor *m);

struct GeodynRegulatorParams geodyn_regulator_defaults(void);

// # Safety
// `params` may be null for defaults; `out` must be writable.
enum GeodynStatus geodyn_regulator_create(size_t dim,
                                          const struct GeodynRegulatorParams *params,
                                          uint32_t layer,
                                          uint32_t head,
                                          struct GeodynRegulator **out);

// Feeds one value row. `lambdas` receives up to `lambdas_len` estimates and
// `*n_lambdas` their count; `*applied` reports whether the cache was damped.
// Output pointers may be null.
//
// # Safety
// `r` must come from `geodyn_regulator_create`; `row` valid for `len`
// doubles and `lambdas` for `lambdas_len` doubles.
enum GeodynStatus geodyn_regulator_observe(struct GeodynRegulator *r,
                                           const double *row,
                                           size_t len,
                                           bool *applied,
                                           double *lambdas,
                                           size_t lambdas_len,
                                           size_t *n_lambdas);

// # Safety
// `r` must come from `geodyn_regulator_create`; `count` must be writable.
enum GeodynStatus geodyn_regulator_cache_len(struct GeodynRegulator *r, size_t *count);

// Copies cached row `index` (oldest first, damping applied) into `buf`.
//
// # Safety
// `r` must come from `geodyn_regulator_create`; `buf` valid for `len` doubles.
enum GeodynStatus geodyn_regulator_cache_row(struct GeodynRegulator *r,
                                             size_t index,
                                             double *buf,
                                             size_t len);

// # Safety
// `r` must be null or come from `geodyn_regulator_create`, and is invalid afterwards.
void geodyn_regulator_free(struct GeodynRegulator *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEODYN_H */
