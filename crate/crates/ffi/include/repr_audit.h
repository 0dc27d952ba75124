/* C interface of the repr-audit representation-bias auditing toolkit. */

#ifndef REPR_AUDIT_H
#define REPR_AUDIT_H

/* Generated by cbindgen from repr-audit-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
enum RaStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  RA_STATUS_OK = 0,
  // Null pointer, bad enum value or otherwise unusable argument.
  RA_STATUS_INVALID_ARGUMENT = 1,
  // File could not be read or written.
  RA_STATUS_IO = 2,
  // File contents violate the documented formats.
  RA_STATUS_FORMAT = 3,
  // Input data violates a numerical precondition.
  RA_STATUS_NUMERIC = 4,
  // The requested quantity is undefined on this input.
  RA_STATUS_UNDEFINED = 5,
  // Internal panic; the message carries diagnostics.
  RA_STATUS_PANIC = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RaStatus RaStatus;
#else
typedef int32_t RaStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// On-disk embedding encodings accepted by [`ra_dataset_load`].
enum RaEmbeddingFormat
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  RA_EMBEDDING_FORMAT_BINARY = 0,
  RA_EMBEDDING_FORMAT_CSV = 1,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum RaEmbeddingFormat RaEmbeddingFormat;
#else
typedef int32_t RaEmbeddingFormat;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// An embedding matrix joined with its cohort metadata.
typedef struct RaDataset RaDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. The pointer stays valid
// until the next FFI call on the same thread; never free it.
const char *ra_last_error_message(void);

// Toolkit version as a static string; never free it.
const char *ra_version(void);

// Releases a string returned through an out-parameter.
//
// # Safety
// `s` must come from this library and must not be used afterwards.
void ra_string_free(char *s);

// The substream seed mixer: derives the seed of substream `ordinal`.
uint64_t ra_mix_seed(uint64_t seed, uint64_t ordinal);

// Loads embeddings (plus the `.ids` sidecar for the binary format) and the
// metadata CSV, validating the joint alignment. On success `*out` owns the
// dataset; release it with [`ra_dataset_free`].
//
// # Safety
// `embeddings_path` and `metadata_path` must be NUL-terminated strings and
// `out` must be a valid pointer.
RaStatus ra_dataset_load(const char *embeddings_path,
                         RaEmbeddingFormat format,
                         const char *metadata_path,
                         struct RaDataset **out);

// # Safety
// `dataset` must come from [`ra_dataset_load`] and not be used afterwards.
void ra_dataset_free(struct RaDataset *dataset);

// # Safety
// `dataset` must be a live handle from [`ra_dataset_load`].
size_t ra_dataset_num_samples(const struct RaDataset *dataset);

// # Safety
// `dataset` must be a live handle from [`ra_dataset_load`].
size_t ra_dataset_dim(const struct RaDataset *dataset);

// Two-sample Kolmogorov-Smirnov test: exact D statistic and asymptotic
// two-sided p-value.
//
// # Safety
// `a` and `b` must point to `a_len` / `b_len` doubles; `out_d_stat` and
// `out_p_value` must be valid pointers.
RaStatus ra_ks_two_sample(const double *a,
                          size_t a_len,
                          const double *b,
                          size_t b_len,
                          double *out_d_stat,
                          double *out_p_value);

// Benjamini-Yekutieli adjustment; writes `len` adjusted p-values to `out`
// in the input order.
//
// # Safety
// `p_values` must point to `len` doubles and `out` to space for `len`.
RaStatus ra_benjamini_yekutieli(const double *p_values, size_t len, double *out);

// Mann-Whitney AUC with ties counting one half. `targets` holds 0/1.
//
// # Safety
// `scores` and `targets` must point to `len` elements each.
RaStatus ra_auc(const double *scores, const uint8_t *targets, size_t len, double *out);

// Threshold whose achieved FPR is maximal while not exceeding the target;
// the decision rule is score > threshold.
//
// # Safety
// `scores` and `targets` must point to `len` elements each.
RaStatus ra_calibrate_threshold(const double *scores,
                                const uint8_t *targets,
                                size_t len,
                                double target_fpr,
                                double *out);

// Percentage change of each value against the mean over all values; writes
// `len` percentages to `out`.
//
// # Safety
// `values` must point to `len` doubles and `out` to space for `len`.
RaStatus ra_relative_change(const double *values, size_t len, double *out);

// Runs the feature-bias inspection on a loaded dataset: optional per-group
// subsampling on race, PCA to `modes` components, and the KS grid over the
// default subgroup pairs (race pairs, sex, first-label contrast), BY
// adjusted as one family. Returns the report as a JSON document through
// `out_json`; release it with [`ra_string_free`].
//
// `subsample_per_group` of 0 uses the full dataset.
//
// # Safety
// `dataset` must be a live handle and `out_json` a valid pointer.
RaStatus ra_dataset_feature_bias_json(const struct RaDataset *dataset,
                                      size_t modes,
                                      size_t subsample_per_group,
                                      uint64_t seed,
                                      char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPR_AUDIT_H */
