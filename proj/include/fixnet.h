/* SPDX-License-Identifier: Apache-2.0
 *
 * C API for the fixnet shared library: limited-precision fixed-point
 * arithmetic, low-precision network training experiments, and the systolic
 * array simulator. All functions return fxn_status; fxn_last_error() carries
 * the detail message for the calling thread. Objects returned through
 * fxn_*_create/from_* calls are owned by the caller and released with the
 * matching destroy function.
 */
#ifndef FIXNET_H
#define FIXNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32) || defined(__CYGWIN__)
#define FIXNET_API __declspec(dllexport)
#else
#define FIXNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fxn_status {
  FXN_OK = 0,
  FXN_ERR_CONFIG = 1,      /* invalid configuration */
  FXN_ERR_DATA = 2,        /* dataset missing or malformed */
  FXN_ERR_DIVERGENCE = 3,  /* float-baseline training diverged */
  FXN_ERR_INVALID_ARG = 4, /* null pointer / out-of-range argument */
  FXN_ERR_SHAPE = 5,       /* tensor shape mismatch */
  FXN_ERR_FORMAT = 6,      /* fixed-point format violation */
  FXN_ERR_OVERFLOW = 7,    /* accumulator width exceeded */
  FXN_ERR_INTERNAL = 8
} fxn_status;

FIXNET_API const char* fxn_version(void);
FIXNET_API const char* fxn_status_string(fxn_status s);
/* Detail message of the last failing call on this thread ("" if none). */
FIXNET_API const char* fxn_last_error(void);

typedef enum fxn_rounding { FXN_ROUND_NEAREST = 0, FXN_ROUND_STOCHASTIC = 1 } fxn_rounding;

/* ---- scalar fixed point -------------------------------------------------- */

/* eps = 2^-fl, range [-2^(il-1), 2^(il-1) - 2^-fl]. */
FIXNET_API fxn_status fxn_format_range(int32_t il, int32_t fl, double* lo, double* hi,
                                       double* eps);

/* Saturating conversion of x into <il,fl>. Stochastic draws are keyed by
 * (seed, index), so identical keys reproduce identical results. */
FIXNET_API fxn_status fxn_convert(double x, int32_t il, int32_t fl, fxn_rounding mode,
                                  uint64_t seed, uint64_t index, double* value_out,
                                  int64_t* mantissa_out);

/* ---- tensors -------------------------------------------------------------- */

typedef struct fxn_tensor fxn_tensor; /* opaque */

FIXNET_API fxn_status fxn_tensor_from_doubles(const int64_t* shape, int32_t ndim,
                                              const double* values, int32_t il, int32_t fl,
                                              fxn_rounding mode, uint64_t seed, const char* tag,
                                              fxn_tensor** out);
FIXNET_API void fxn_tensor_destroy(fxn_tensor* t);
FIXNET_API fxn_status fxn_tensor_numel(const fxn_tensor* t, int64_t* out);
/* Exact real values (mantissa * 2^-fl) into caller storage of size cap. */
FIXNET_API fxn_status fxn_tensor_values(const fxn_tensor* t, double* out, int64_t cap);

/* C = Convert(A . B) with exact wide accumulation and one rounding per
 * output element, keyed by (seed, out_tag, row*m+col, step). */
FIXNET_API fxn_status fxn_gemm(const fxn_tensor* a, const fxn_tensor* b, int32_t out_il,
                               int32_t out_fl, fxn_rounding mode, uint64_t seed, uint64_t step,
                               const char* out_tag, fxn_tensor** out);

/* ---- experiments ----------------------------------------------------------- */

typedef struct fxn_config fxn_config; /* opaque */

FIXNET_API fxn_status fxn_config_create(fxn_config** out);
FIXNET_API fxn_status fxn_config_load(fxn_config* c, const char* path);
FIXNET_API fxn_status fxn_config_set(fxn_config* c, const char* key, const char* value);
FIXNET_API void fxn_config_destroy(fxn_config* c);

typedef struct fxn_epoch_record {
  int32_t epoch;
  double train_err;        /* percent */
  double test_err;         /* percent */
  double zero_update_frac; /* fraction of update elements quantized to zero */
  double seconds;
} fxn_epoch_record;

typedef void (*fxn_epoch_callback)(const fxn_epoch_record* rec, void* user);

/* Runs the configured experiment: CSV + .config sidecar + .ckpt checkpoint
 * are written at the configured output path; the callback (optional) fires
 * once per epoch. */
FIXNET_API fxn_status fxn_experiment_run(const fxn_config* c, fxn_epoch_callback cb, void* user);

typedef struct fxn_compare_result {
  int32_t epochs;
  double final_test_delta;  /* a.final - b.final */
  double final_train_delta;
  int32_t first_divergence_epoch; /* -1 if curves stay within threshold */
} fxn_compare_result;

FIXNET_API fxn_status fxn_compare_csv(const char* csv_a, const char* csv_b, double threshold,
                                      fxn_compare_result* out);

/* ---- synthetic datasets ----------------------------------------------------- */

/* kind: "mnist" (IDX files) or "cifar10" (binary batches). */
FIXNET_API fxn_status fxn_datagen(const char* kind, const char* dir, int64_t train_n,
                                  int64_t test_n, uint64_t seed);

/* ---- systolic array --------------------------------------------------------- */

typedef struct fxn_sysarray_params {
  int32_t n;      /* array dimension */
  int32_t l, k, m; /* GEMM dims: l x k times k x m */
  int32_t wl, fl_in, fl_out;
  int32_t lfsr_width; /* 0: derive from formats (= 2*fl_in - fl_out) */
  uint64_t lfsr_seed;
  int32_t p;           /* 0: derive from l2_capacity */
  int64_t l2_capacity; /* on-chip element capacity */
  double bandwidth_bytes_per_cycle;
  double frequency_hz;
  double power_w;
  uint64_t data_seed; /* random operand generation */
} fxn_sysarray_params;

typedef struct fxn_sysarray_report {
  uint64_t total_cycles, compute_cycles, stall_cycles;
  uint64_t macc_ops, rounding_events;
  int64_t tiles, reuse_a, reuse_b;
  int32_t p, dsp_macc_units, dsp_round_units;
  double ops_per_cycle, utilization, round_overhead;
  double gops, gops_per_watt;
} fxn_sysarray_report;

/* Simulates a GEMM on random in-range operands and reports timing,
 * reuse and throughput. text_out / csv_out (optional, may be NULL) receive
 * human-readable and machine-readable renderings. */
FIXNET_API fxn_status fxn_sysarray_run(const fxn_sysarray_params* params,
                                       fxn_sysarray_report* report, char* text_out,
                                       size_t text_cap, char* csv_out, size_t csv_cap);

#ifdef __cplusplus
}
#endif

#endif /* FIXNET_H */
