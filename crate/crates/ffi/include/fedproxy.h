#ifndef FEDPROXY_H
#define FEDPROXY_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FpxStatus {
  FPX_STATUS_OK = 0,
  // A required pointer was NULL or a string was not UTF-8.
  FPX_STATUS_NULL_ARGUMENT = 1,
  FPX_STATUS_INVALID_ARGUMENT = 2,
  FPX_STATUS_CONFIG = 3,
  FPX_STATUS_DIMENSION = 4,
  FPX_STATUS_DIVERGED = 5,
  FPX_STATUS_NUMERICAL = 6,
  FPX_STATUS_FORMAT = 7,
  FPX_STATUS_IO = 8,
  FPX_STATUS_PANIC = 9,
} FpxStatus;

// Proxy-to-backbone parameter correspondence.
typedef struct FpxCorrespondence FpxCorrespondence;

// Flat parameter vector with its layout.
typedef struct FpxParams FpxParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread, or NULL if none.
const char *fpx_last_error(void);

// Library version as a static NUL-terminated string.
const char *fpx_version(void);

// Copies `len` doubles into a new flat-layout parameter handle.
//
// # Safety
// `values` must point to `len` readable doubles (may be NULL when `len` is 0);
// `out` must be writable.
enum FpxStatus fpx_params_from_values(const double *values, size_t len, struct FpxParams **out);

// Reads a parameter checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FpxStatus fpx_params_load(const char *path, struct FpxParams **out);

// Writes a parameter checkpoint.
//
// # Safety
// `params` must be a live handle; `path` a NUL-terminated string.
enum FpxStatus fpx_params_save(const struct FpxParams *params, const char *path);

// Number of scalars in `params`; 0 for NULL.
//
// # Safety
// `params` must be NULL or a live handle.
size_t fpx_params_len(const struct FpxParams *params);

// Copies the values into `out`, which must hold exactly `fpx_params_len` doubles.
//
// # Safety
// `params` must be a live handle; `out` must point to `len` writable doubles.
enum FpxStatus fpx_params_copy_values(const struct FpxParams *params, double *out, size_t len);

// # Safety
// `params` must be NULL or a handle not yet freed.
void fpx_params_free(struct FpxParams *params);

// Reads a correspondence file written by the `compress` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FpxStatus fpx_correspondence_load(const char *path, struct FpxCorrespondence **out);

// Fraction of backbone parameters outside the proxy.
//
// # Safety
// `corr` must be a live handle; `out` must be writable.
enum FpxStatus fpx_correspondence_alpha(const struct FpxCorrespondence *corr, double *out);

// # Safety
// `corr` must be NULL or a handle not yet freed.
void fpx_correspondence_free(struct FpxCorrespondence *corr);

// Writes the proxy values into a copy of the backbone at the corresponding
// positions. The result is a new handle.
//
// # Safety
// All handles must be live; `out` must be writable.
enum FpxStatus fpx_fuse(const struct FpxParams *backbone,
                        const struct FpxParams *proxy,
                        const struct FpxCorrespondence *corr,
                        struct FpxParams **out);

// Cosine similarity of two vectors of equal length; 0 if either is zero.
//
// # Safety
// `a` and `b` must point to `len` readable doubles; `out` must be writable.
enum FpxStatus fpx_cosine(const double *a, const double *b, size_t len, double *out);

// Per-dimension sign conflict of `k` task vectors, written to `out[dim]`.
//
// # Safety
// `tvs` must point to `k·dim` doubles and `out` to `dim` writable doubles.
enum FpxStatus fpx_conflict_scores(const double *tvs, size_t k, size_t dim, double *out);

// Server analysis of one round: heterogeneity `h[k]`, aggregation weights
// `w[k]` and conflict `c[dim]`. Any output pointer may be NULL to skip it.
//
// # Safety
// `tvs` must point to `k·dim` doubles; non-NULL outputs must have the sizes above.
enum FpxStatus fpx_analyze_round(const double *tvs,
                                 size_t k,
                                 size_t dim,
                                 double *heterogeneity,
                                 double *weights,
                                 double *conflict);

// Dominance-rule merge of already sparsified task vectors into `out[dim]`.
//
// # Safety
// `tvs` must point to `k·dim` doubles, `weights` to `k`, `out` to `dim` writable.
enum FpxStatus fpx_hties_merge(const double *tvs,
                               size_t k,
                               size_t dim,
                               const double *weights,
                               double rho,
                               double eps,
                               double *out);

// Runs the full pipeline for a TOML (or `.json`) config and writes every
// artifact to `out_dir`. The `FEDPROXY_SEED` environment override applies.
//
// # Safety
// Both arguments must be NUL-terminated strings.
enum FpxStatus fpx_run_pipeline(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDPROXY_H */
